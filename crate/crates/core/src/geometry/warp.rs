//! Differentiable bilinear homography warping of feature maps.

use std::rc::Rc;

use fusedepth_tensor::{Backward, Tensor};
use nalgebra::Matrix3;

use super::apply_homography;
use crate::error::{CoreError, Result};

/// Warped source features with a per-pixel validity mask. `features` is
/// `C×H×W` (single plane) or `D×C×H×W` (sweep); `valid` covers the
/// non-channel axes.
#[derive(Clone)]
pub struct WarpedView {
    pub features: Tensor,
    pub valid: Vec<bool>,
}

/// Four bilinear taps per output location; unused taps carry weight 0.
type Taps = [(u32, f64); 4];

struct Warp {
    src: Tensor,
    taps: Rc<[Taps]>,
    channels: usize,
    pixels: usize,
}

impl Backward for Warp {
    fn name(&self) -> &'static str {
        "warp"
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.src.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut gs = vec![0.0; self.channels * self.pixels];
        for (slot, taps) in self.taps.iter().enumerate() {
            let (d, p) = (slot / self.pixels, slot % self.pixels);
            for c in 0..self.channels {
                let go = g[(d * self.channels + c) * self.pixels + p];
                if go == 0.0 {
                    continue;
                }
                for &(i, w) in taps {
                    if w != 0.0 {
                        gs[c * self.pixels + i as usize] += w * go;
                    }
                }
            }
        }
        vec![Some(gs)]
    }
}

fn taps_for(h: &Matrix3<f64>, height: usize, width: usize, taps: &mut Vec<Taps>, valid: &mut Vec<bool>) {
    let (xmax, ymax) = ((width - 1) as f64, (height - 1) as f64);
    for v in 0..height {
        for u in 0..width {
            let mut t = [(0u32, 0.0); 4];
            let hit = apply_homography(h, u as f64, v as f64)
                .filter(|&(x, y)| (0.0..=xmax).contains(&x) && (0.0..=ymax).contains(&y));
            if let Some((x, y)) = hit {
                let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
                let (ax, ay) = (x - x0 as f64, y - y0 as f64);
                let idx = |yy: usize, xx: usize| (yy * width + xx) as u32;
                t = [
                    (idx(y0, x0), (1.0 - ax) * (1.0 - ay)),
                    (idx(y0, x1), ax * (1.0 - ay)),
                    (idx(y1, x0), (1.0 - ax) * ay),
                    (idx(y1, x1), ax * ay),
                ];
            }
            taps.push(t);
            valid.push(hit.is_some());
        }
    }
}

fn warp_many(src: &Tensor, homographies: &[Matrix3<f64>]) -> Result<(Tensor, Vec<bool>)> {
    let s = src.shape();
    if s.len() != 3 {
        return Err(CoreError::invalid("warp", format!("source features must be C×H×W, got {s:?}")));
    }
    let (c, height, width) = (s[0], s[1], s[2]);
    let pixels = height * width;
    let mut taps = Vec::with_capacity(homographies.len() * pixels);
    let mut valid = Vec::with_capacity(homographies.len() * pixels);
    for h in homographies {
        taps_for(h, height, width, &mut taps, &mut valid);
    }
    let mut out = vec![0.0; homographies.len() * c * pixels];
    {
        let sd = src.data();
        for (slot, t) in taps.iter().enumerate() {
            let (d, p) = (slot / pixels, slot % pixels);
            for ch in 0..c {
                let plane = &sd[ch * pixels..(ch + 1) * pixels];
                out[(d * c + ch) * pixels + p] = t.iter().map(|&(i, w)| if w != 0.0 { w * plane[i as usize] } else { 0.0 }).sum();
            }
        }
    }
    let out = Tensor::from_op(
        out,
        &[homographies.len(), c, height, width],
        Box::new(Warp {
            src: src.clone(),
            taps: taps.into(),
            channels: c,
            pixels,
        }),
    )?;
    Ok((out, valid))
}

/// Samples `src_feat` (`C×H×W`) at `H·(u,v,1)` for every reference pixel.
/// Samples outside `[0,W−1]×[0,H−1]` read 0 and are marked invalid.
pub fn warp_features(src_feat: &Tensor, h: &Matrix3<f64>) -> Result<WarpedView> {
    let (t, valid) = warp_many(src_feat, std::slice::from_ref(h))?;
    let s = t.shape()[1..].to_vec();
    Ok(WarpedView {
        features: t.reshape(&s)?,
        valid,
    })
}

/// One warp per hypothesis plane: features `D×C×H×W`, mask `D×H×W`.
pub fn warp_volume(src_feat: &Tensor, homographies: &[Matrix3<f64>]) -> Result<WarpedView> {
    if homographies.is_empty() {
        return Err(CoreError::invalid("warp_volume", "no homographies"));
    }
    let (features, valid) = warp_many(src_feat, homographies)?;
    Ok(WarpedView { features, valid })
}
