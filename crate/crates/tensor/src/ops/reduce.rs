use crate::error::{Result, TensorError};
use crate::tensor::{Backward, Tensor};

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct SumAll {
    input: Tensor,
    scale: f64,
}

impl Backward for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0] * self.scale; self.input.numel()])]
    }
}

struct SumAxis {
    input: Tensor,
    axis: usize,
}

impl Backward for SumAxis {
    fn name(&self) -> &'static str {
        "sum_axis"
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (outer, len, inner) = axis_extents(self.input.shape(), self.axis);
        let mut gx = vec![0.0; self.input.numel()];
        for o in 0..outer {
            for k in 0..len {
                let dst = &mut gx[(o * len + k) * inner..(o * len + k + 1) * inner];
                dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
            }
        }
        vec![Some(gx)]
    }
}

struct Softmax {
    input: Tensor,
    axis: usize,
    output: Vec<f64>,
}

impl Backward for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (outer, len, inner) = axis_extents(self.input.shape(), self.axis);
        let y = &self.output;
        let mut gx = vec![0.0; y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                for k in 0..len {
                    gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.ndim() {
        return Err(TensorError::invalid(
            op,
            format!("axis {axis} out of range for shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Sum of all elements as a scalar (shape `[]`).
    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Tensor::from_op(
            vec![s],
            &[],
            Box::new(SumAll {
                input: self.clone(),
                scale: 1.0,
            }),
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![s / n],
            &[],
            Box::new(SumAll {
                input: self.clone(),
                scale: 1.0 / n,
            }),
        )
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis("sum_axis", self, axis)?;
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for k in 0..len {
                    let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                    for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Tensor::from_op(
            out,
            &shape,
            Box::new(SumAxis {
                input: self.clone(),
                axis,
            }),
        )
    }

    /// Softmax along `axis`, evaluated with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self, axis)?;
        let (outer, len, inner) = axis_extents(self.shape(), axis);
        let mut y = vec![0.0; self.numel()];
        {
            let x = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let max = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for k in 0..len {
                        let e = (x[idx(k)] - max).exp();
                        y[idx(k)] = e;
                        total += e;
                    }
                    for k in 0..len {
                        y[idx(k)] /= total;
                    }
                }
            }
        }
        Tensor::from_op(
            y.clone(),
            self.shape(),
            Box::new(Softmax {
                input: self.clone(),
                axis,
                output: y,
            }),
        )
    }
}
