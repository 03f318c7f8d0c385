use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::{numel_of, Backward, Tensor};

struct Reshape {
    input: Tensor,
}

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

struct Gather {
    input: Tensor,
    index: Rc<[usize]>,
}

impl Backward for Gather {
    fn name(&self) -> &'static str {
        "gather"
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.input.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; self.input.numel()];
        for (&src, &gi) in self.index.iter().zip(g) {
            gx[src] += gi;
        }
        vec![Some(gx)]
    }
}

struct Concat {
    parts: Vec<Tensor>,
    axis: usize,
}

impl Backward for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn inputs(&self) -> Vec<Tensor> {
        self.parts.clone()
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let shape0 = self.parts[0].shape();
        let outer: usize = shape0[..self.axis].iter().product();
        let inner: usize = shape0[self.axis + 1..].iter().product();
        let total: usize = self.parts.iter().map(|p| p.shape()[self.axis]).sum();
        let mut offset = 0;
        self.parts
            .iter()
            .map(|p| {
                let len = p.shape()[self.axis];
                let mut gp = vec![0.0; p.numel()];
                for o in 0..outer {
                    let src = (o * total + offset) * inner;
                    gp[o * len * inner..(o + 1) * len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                offset += len;
                p.requires_grad().then_some(gp)
            })
            .collect()
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op(self.to_vec(), shape, Box::new(Reshape { input: self.clone() }))
    }

    /// `out[i] = self[index[i]]` (flat indices), reshaped to `shape`. The
    /// backward pass scatter-adds, so repeated indices are allowed.
    pub fn gather(&self, index: Rc<[usize]>, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != index.len() {
            return Err(TensorError::invalid(
                "gather",
                format!("{} indices for output shape {shape:?}", index.len()),
            ));
        }
        let n = self.numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(TensorError::invalid("gather", format!("index {bad} out of range {n}")));
        }
        let data = {
            let x = self.data();
            index.iter().map(|&i| x[i]).collect()
        };
        Tensor::from_op(
            data,
            shape,
            Box::new(Gather {
                input: self.clone(),
                index,
            }),
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::invalid(
                "permute",
                format!("{axes:?} is not a permutation of {nd} axes"),
            ));
        }
        let in_strides = strides_of(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let total = self.numel();
        let mut index = Vec::with_capacity(total);
        let mut counter = vec![0usize; nd];
        for _ in 0..total {
            index.push(counter.iter().zip(axes).map(|(&c, &a)| c * in_strides[a]).sum());
            for d in (0..nd).rev() {
                counter[d] += 1;
                if counter[d] < out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        self.gather(index.into(), &out_shape)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.ndim() || len == 0 || start + len > self.shape()[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!("range {start}+{len} on axis {axis} of {:?}", self.shape()),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let full = self.shape()[axis];
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            index.extend(base..base + len * inner);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        self.gather(index.into(), &shape)
    }

    /// Nearest-neighbour upsampling of the last `dims` axes by an integer
    /// factor: output position `i` copies input position `i / factor`.
    pub fn upsample_nearest(&self, factor: usize, dims: usize) -> Result<Tensor> {
        if factor == 0 || dims == 0 || dims > self.ndim() {
            return Err(TensorError::invalid(
                "upsample_nearest",
                format!("factor {factor}, dims {dims} for shape {:?}", self.shape()),
            ));
        }
        let nd = self.ndim();
        let mut out_shape = self.shape().to_vec();
        for s in &mut out_shape[nd - dims..] {
            *s *= factor;
        }
        let in_strides = strides_of(self.shape());
        let total = numel_of(&out_shape);
        let mut index = Vec::with_capacity(total);
        let mut counter = vec![0usize; nd];
        for _ in 0..total {
            let src = (0..nd)
                .map(|d| {
                    let c = if d >= nd - dims { counter[d] / factor } else { counter[d] };
                    c * in_strides[d]
                })
                .sum();
            index.push(src);
            for d in (0..nd).rev() {
                counter[d] += 1;
                if counter[d] < out_shape[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        self.gather(index.into(), &out_shape)
    }
}

/// Joins tensors along `axis`; all other dimensions must agree.
pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no tensors"))?;
    if axis >= first.ndim() {
        return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
    }
    for p in &parts[1..] {
        let compatible = p.ndim() == first.ndim()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = vec![0.0; outer * total * inner];
    let mut offset = 0;
    for p in parts {
        let len = p.shape()[axis];
        let x = p.data();
        for o in 0..outer {
            let dst = (o * total + offset) * inner;
            out[dst..dst + len * inner].copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
        }
        offset += len;
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::from_op(
        out,
        &shape,
        Box::new(Concat {
            parts: parts.to_vec(),
            axis,
        }),
    )
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
    let lifted = parts
        .iter()
        .map(|p| {
            let mut s = vec![1];
            s.extend_from_slice(p.shape());
            p.reshape(&s)
        })
        .collect::<Result<Vec<_>>>()?;
    concat(&lifted, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_transposes() {
        let x = Tensor::new((0..6).map(f64::from).collect(), &[2, 3]).unwrap();
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn permute_rejects_duplicates() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn concat_middle_axis() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2]).unwrap();
        let b = Tensor::new(vec![5.0, 6.0, 7.0, 8.0], &[2, 1, 2]).unwrap();
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn narrow_then_values() {
        let x = Tensor::new((0..12).map(f64::from).collect(), &[3, 4]).unwrap();
        assert_eq!(x.narrow(1, 1, 2).unwrap().to_vec(), vec![1.0, 2.0, 5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn upsample_single_pixel() {
        let x = Tensor::new(vec![7.0], &[1, 1]).unwrap();
        let u = x.upsample_nearest(2, 2).unwrap();
        assert_eq!(u.shape(), &[2, 2]);
        assert_eq!(u.to_vec(), vec![7.0; 4]);
    }
}
