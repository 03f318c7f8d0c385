use crate::error::{Result, TensorError};
use crate::tensor::{Backward, Tensor};

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (cj, bj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cj += aip * bj;
            }
        }
    }
}

struct MatMul {
    a: Tensor,
    b: Tensor,
    m: usize,
    k: usize,
    n: usize,
}

impl Backward for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.a.clone(), self.b.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let a = self.a.data();
        let b = self.b.data();
        // dA = dC · Bᵀ
        let ga = self.a.requires_grad().then(|| {
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    ga[i * k + p] = (0..n).map(|j| g[i * n + j] * b[p * n + j]).sum();
                }
            }
            ga
        });
        // dB = Aᵀ · dC
        let gb = self.b.requires_grad().then(|| {
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = a[i * k + p];
                    for j in 0..n {
                        gb[p * n + j] += aip * g[i * n + j];
                    }
                }
            }
            gb
        });
        vec![ga, gb]
    }
}

impl Tensor {
    /// 2-D matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm_acc(&self.data(), &rhs.data(), &mut c, m, k, n);
        Tensor::from_op(
            c,
            &[m, n],
            Box::new(MatMul {
                a: self.clone(),
                b: rhs.clone(),
                m,
                k,
                n,
            }),
        )
    }
}
