//! Volume regularization, soft depth regression and upsampling.

use std::rc::Rc;

use fusedepth_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::fusion::CostVolume;
use crate::geometry::DepthHypothesisSet;
use crate::layers::Conv3d;
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != height * width || valid.len() != values.len() {
            return Err(CoreError::invalid("depth_map", format!("{} values for {height}×{width}", values.len())));
        }
        if values.iter().zip(&valid).any(|(v, &ok)| !v.is_finite() || (ok && *v <= 0.0)) {
            return Err(CoreError::invalid("depth_map", "valid depths must be finite and positive"));
        }
        Ok(DepthMap {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Residual 3-D conv stack reducing `C` channels to one score per voxel.
#[derive(Clone)]
pub struct Regularizer {
    pub stem: Conv3d,
    pub res_a: Conv3d,
    pub res_b: Conv3d,
    pub out: Conv3d,
}

impl Regularizer {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, width: usize) -> Result<Self> {
        Ok(Regularizer {
            stem: Conv3d::new(ps, &format!("{name}.stem"), channels, width, 3, 1)?,
            res_a: Conv3d::new(ps, &format!("{name}.res_a"), width, width, 3, 1)?,
            res_b: Conv3d::new(ps, &format!("{name}.res_b"), width, width, 3, 1)?,
            out: Conv3d::new(ps, &format!("{name}.out"), width, 1, 3, 1)?,
        })
    }

    /// `D×C×H×W` → `D×H×W` scores (higher = more likely).
    pub fn forward(&self, volume: &CostVolume) -> Result<Tensor> {
        let [d, _, h, w] = volume.dims();
        let x = volume.data.permute(&[1, 0, 2, 3])?;
        let x = self.stem.forward(&x)?.silu()?;
        let r = self.res_b.forward(&self.res_a.forward(&x)?.silu()?)?;
        let x = x.add(&r)?.silu()?;
        Ok(self.out.forward(&x)?.reshape(&[d, h, w])?)
    }
}

pub fn regularize(reg: &Regularizer, volume: &CostVolume) -> Result<Tensor> {
    reg.forward(volume)
}

pub struct Regression {
    /// `H×W` expected depth, differentiable.
    pub depth: Tensor,
    /// `D×H×W` softmax over hypotheses.
    pub prob: Tensor,
    pub confidence: ConfidenceMap,
}

/// First index of the 4-wide window around `k`, clipped to `[0, d)`.
fn window_start(k: usize, d: usize) -> usize {
    k.saturating_sub(1).min(d.saturating_sub(4))
}

/// Soft-argmin regression. Confidence is the probability mass in the
/// 4-hypothesis window around the argmax.
pub fn regress(scores: &Tensor, hyp: &DepthHypothesisSet) -> Result<Regression> {
    let s = scores.shape();
    if s.len() != 3 || s[0] != hyp.len() || hyp.len() < 2 {
        return Err(CoreError::invalid(
            "regress",
            format!("scores {s:?} do not match {} hypotheses", hyp.len()),
        ));
    }
    let (d, h, w) = (s[0], s[1], s[2]);
    let prob = scores.softmax(0)?;
    let planes = Tensor::new(hyp.values.clone(), &[d, 1, 1])?;
    let depth = prob.mul(&planes)?.sum_axis(0)?;
    let hw = h * w;
    let pv = prob.data();
    let conf = (0..hw)
        .map(|p| {
            let col = |i: usize| pv[i * hw + p];
            let k = (0..d).fold(0, |best, i| if col(i) > col(best) { i } else { best });
            let start = window_start(k, d);
            (start..(start + 4).min(d)).map(col).sum::<f64>().min(1.0)
        })
        .collect();
    drop(pv);
    Ok(Regression {
        depth,
        prob,
        confidence: ConfidenceMap {
            height: h,
            width: w,
            values: conf,
        },
    })
}

/// Nearest-neighbor upsampling of a row-major `h×w` map.
pub fn upsample_nearest<T: Copy>(map: &[T], h: usize, w: usize, factor: usize) -> Result<Vec<T>> {
    if factor == 0 || map.len() != h * w {
        return Err(CoreError::invalid("upsample_nearest", format!("factor {factor}, {} values for {h}×{w}", map.len())));
    }
    let ow = w * factor;
    Ok((0..h * factor * ow).map(|i| map[(i / ow / factor) * w + (i % ow) / factor]).collect())
}

/// Differentiable `H×W` nearest upsampling.
pub fn upsample_tensor(map: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(map.clone());
    }
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let idx: Rc<[usize]> = upsample_nearest(&(0..h * w).collect::<Vec<_>>(), h, w, factor)?.into();
    Ok(map.gather(idx, &[h * factor, w * factor])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_hypotheses;

    #[test]
    fn one_hot_scores() {
        let hyp = build_hypotheses(1.0, 8.0, 6).unwrap();
        for k in 0..6 {
            let mut s = vec![-1e3; 6];
            s[k] = 0.0;
            let r = regress(&Tensor::new(s, &[6, 1, 1]).unwrap(), &hyp).unwrap();
            assert!((r.depth.item() - hyp.values[k]).abs() < 1e-12);
            assert_eq!(r.confidence.values[0], 1.0);
        }
    }

    #[test]
    fn uniform_scores() {
        let hyp = build_hypotheses(1.0, 8.0, 16).unwrap();
        let r = regress(&Tensor::zeros(&[16, 2, 1]), &hyp).unwrap();
        let mean = hyp.values.iter().sum::<f64>() / 16.0;
        for (d, c) in r.depth.to_vec().iter().zip(&r.confidence.values) {
            assert!((d - mean).abs() < 1e-12);
            assert!((c - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn window_clipping() {
        assert_eq!(window_start(0, 16), 0);
        assert_eq!(window_start(5, 16), 4);
        assert_eq!(window_start(15, 16), 12);
        assert_eq!(window_start(1, 3), 0);
    }

    #[test]
    fn upsample_cases() {
        assert_eq!(upsample_nearest(&[1, 2, 3, 4], 2, 2, 1).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(upsample_nearest(&[7.0], 1, 1, 2).unwrap(), vec![7.0; 4]);
        assert_eq!(upsample_nearest(&[1, 2], 1, 2, 2).unwrap(), vec![1, 1, 2, 2, 1, 1, 2, 2]);
        assert!(upsample_nearest(&[1], 1, 1, 0).is_err());
    }

    #[test]
    fn upsample_tensor_matches_map() {
        let t = Tensor::new((0..6).map(f64::from).collect(), &[2, 3]).unwrap();
        let up = upsample_tensor(&t, 3).unwrap();
        assert_eq!(up.shape(), &[6, 9]);
        assert_eq!(up.to_vec(), upsample_nearest(&t.to_vec(), 2, 3, 3).unwrap());
    }
}
