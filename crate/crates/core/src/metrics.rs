//! Training loss and depth-error metrics over jointly valid pixels.

use std::collections::BTreeMap;
use std::rc::Rc;

use fusedepth_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::head::DepthMap;

/// Squared relative error form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqRelConvention {
    /// `((y − ŷ)/y)²`
    #[default]
    WholeRatio,
    /// `(y − ŷ)²/y`
    Kitti,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub sq_rel: SqRelConvention,
    /// Pixels with ground truth above this are skipped.
    pub max_depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Running sums so several maps can be pooled pixel-weighted.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    abs_rel: f64,
    sq_rel: f64,
    sq_err: f64,
    within: [usize; 3],
    n: usize,
    options: EvalOptions,
}

impl MetricsAccumulator {
    pub fn new(options: EvalOptions) -> Self {
        MetricsAccumulator {
            options,
            ..Default::default()
        }
    }

    pub fn add(&mut self, pred: &DepthMap, gt: &DepthMap) -> Result<()> {
        for (y, p) in joint_pixels(pred, gt, self.options.max_depth)? {
            if p <= 0.0 {
                return Err(CoreError::invalid("metrics", format!("non-positive prediction {p}")));
            }
            let e = y - p;
            self.abs_rel += e.abs() / y;
            self.sq_rel += match self.options.sq_rel {
                SqRelConvention::WholeRatio => (e / y) * (e / y),
                SqRelConvention::Kitti => e * e / y,
            };
            self.sq_err += e * e;
            let r = (p / y).max(y / p);
            for (k, w) in self.within.iter_mut().enumerate() {
                if r < 1.25f64.powi(k as i32 + 1) {
                    *w += 1;
                }
            }
            self.n += 1;
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.n
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.n == 0 {
            return Err(CoreError::invalid("metrics", "no jointly valid pixels"));
        }
        let n = self.n as f64;
        Ok(MetricsReport {
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq_err / n).sqrt(),
            delta1: self.within[0] as f64 / n,
            delta2: self.within[1] as f64 / n,
            delta3: self.within[2] as f64 / n,
            n_pixels: self.n,
            metadata: BTreeMap::new(),
        })
    }
}

/// `(gt, pred)` pairs on the joint valid mask.
fn joint_pixels(pred: &DepthMap, gt: &DepthMap, max_depth: Option<f64>) -> Result<Vec<(f64, f64)>> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(CoreError::invalid(
            "metrics",
            format!("prediction {}×{} vs ground truth {}×{}", pred.height, pred.width, gt.height, gt.width),
        ));
    }
    let mut out = Vec::with_capacity(gt.values.len());
    for i in 0..gt.values.len() {
        if !(gt.valid[i] && pred.valid[i]) || max_depth.is_some_and(|m| gt.values[i] > m) {
            continue;
        }
        if gt.values[i] <= 0.0 {
            return Err(CoreError::invalid("metrics", format!("non-positive ground truth at pixel {i}")));
        }
        out.push((gt.values[i], pred.values[i]));
    }
    Ok(out)
}

pub fn evaluate_with(pred: &DepthMap, gt: &DepthMap, options: EvalOptions) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(options);
    acc.add(pred, gt)?;
    acc.report()
}

pub fn evaluate_all(pred: &DepthMap, gt: &DepthMap) -> Result<MetricsReport> {
    evaluate_with(pred, gt, EvalOptions::default())
}

fn mean_over(pred: &DepthMap, gt: &DepthMap, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let px = joint_pixels(pred, gt, None)?;
    if px.is_empty() {
        return Err(CoreError::invalid("metrics", "no jointly valid pixels"));
    }
    Ok(px.iter().map(|&(y, p)| f(y, p)).sum::<f64>() / px.len() as f64)
}

pub fn abs_rel(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    mean_over(pred, gt, |y, p| (y - p).abs() / y)
}

pub fn sq_rel(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    mean_over(pred, gt, |y, p| ((y - p) / y).powi(2))
}

pub fn rmse(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    Ok(mean_over(pred, gt, |y, p| (y - p).powi(2))?.sqrt())
}

pub fn delta_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<(f64, f64, f64)> {
    let r = evaluate_all(pred, gt)?;
    Ok((r.delta1, r.delta2, r.delta3))
}

/// Mean absolute error between `pred` (`H×W`, differentiable) and `gt` over
/// pixels valid in both `pred_valid` and `gt.valid`.
pub fn mae_loss(pred: &Tensor, pred_valid: &[bool], gt: &DepthMap) -> Result<Tensor> {
    if pred.shape() != [gt.height, gt.width] || pred_valid.len() != gt.values.len() {
        return Err(CoreError::invalid(
            "mae_loss",
            format!("prediction {:?} vs ground truth {}×{}", pred.shape(), gt.height, gt.width),
        ));
    }
    let idx: Vec<usize> = (0..gt.values.len()).filter(|&i| pred_valid[i] && gt.valid[i]).collect();
    if idx.is_empty() {
        return Err(CoreError::invalid("mae_loss", "empty joint valid mask"));
    }
    let n = idx.len();
    let target = Tensor::new(idx.iter().map(|&i| gt.values[i]).collect(), &[n])?;
    let picked = pred.gather(Rc::from(idx), &[n])?;
    Ok(picked.sub(&target)?.abs()?.mean()?)
}
