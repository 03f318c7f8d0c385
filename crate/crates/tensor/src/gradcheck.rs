//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Denominator floor for relative error, so that near-zero gradients are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over all input elements of |analytic − numeric| / max(|numeric|, floor)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Fixed, non-constant weights used to reduce a non-scalar output to a
/// scalar. Plain summation would hide errors in ops whose outputs have a
/// constant sum (softmax).
fn probe_weight(i: usize) -> f64 {
    (1.3 * i as f64 + 0.7).cos() + 0.25
}

fn reduce(out: &Tensor) -> Result<Tensor> {
    if out.numel() == 1 {
        return out.reshape(&[]);
    }
    let w: Vec<f64> = (0..out.numel()).map(probe_weight).collect();
    out.mul(&Tensor::new(w, out.shape())?)?.sum()
}

/// Compares the reverse-mode gradient of `f` at `inputs` against central
/// differences with step `eps`. Inputs are copied into fresh tracked leaves;
/// the originals are not touched.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::detach_param).collect();
    let loss = reduce(&f(&leaves)?)?;
    loss.backward()?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for leaf in &leaves {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let orig = leaf.data()[j];
            leaf.data_mut()[j] = orig + eps;
            let plus = no_grad(|| reduce(&f(&leaves)?).map(|t| t.item()))?;
            leaf.data_mut()[j] = orig - eps;
            let minus = no_grad(|| reduce(&f(&leaves)?).map(|t| t.item()))?;
            leaf.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let abs = (a - numeric).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(abs / numeric.abs().max(REL_ERROR_FLOOR));
            report.checked += 1;
        }
    }
    Ok(report)
}
