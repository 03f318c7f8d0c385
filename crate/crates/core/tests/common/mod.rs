#![allow(dead_code)]

use fusedepth_core::backbone::SsmBlockParams;
use fusedepth_core::geometry::{apply_homography, plane_homography, WarpedView};
use fusedepth_core::synth::{Render, Scene, SceneSample};
use fusedepth_core::ParamStore;
use fusedepth_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

pub fn random_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

fn bilinear(img: &[f64], w: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| img[yy * w + xx];
    let x1 = if ax > 0.0 { x0 + 1 } else { x0 };
    let y1 = if ay > 0.0 { y0 + 1 } else { y0 };
    (1.0 - ax) * (1.0 - ay) * at(y0, x0) + ax * (1.0 - ay) * at(y0, x1) + (1.0 - ax) * ay * at(y1, x0) + ax * ay * at(y1, x1)
}

/// Per reference pixel: photometric error after warping `src` onto the
/// reference through the ground-truth depth, the primitive seen in the
/// reference, and whether all four source taps see that same primitive.
pub struct Reprojection {
    pub error: Vec<Option<f64>>,
    pub same_surface: Vec<bool>,
    pub primitive: Vec<Option<usize>>,
    pub range: f64,
}

pub fn reproject(scene: &Scene, sample: &SceneSample, src: usize) -> Reprojection {
    let r = sample.reference;
    let (h, w) = (sample.gt_depth.height, sample.gt_depth.width);
    let ref_render: Render = scene.render(r);
    let src_render: Render = scene.render(src);
    let ref_img = &sample.frames[r].data[..h * w];
    let src_img = &sample.frames[src].data[..h * w];
    let lo = ref_img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ref_img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut error = vec![None; h * w];
    let mut same_surface = vec![false; h * w];
    for v in 0..h {
        for u in 0..w {
            let p = v * w + u;
            if !sample.gt_depth.valid[p] {
                continue;
            }
            let d = ref_render.depth[p];
            let hm = plane_homography(&sample.intrinsics[r], &sample.intrinsics[src], &sample.poses[r], &sample.poses[src], d).unwrap();
            let Some((x, y)) = apply_homography(&hm, u as f64, v as f64) else { continue };
            if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
                continue;
            }
            error[p] = Some((ref_img[p] - bilinear(src_img, w, x, y)).abs());
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            same_surface[p] = [(y0, x0), (y0, x1), (y1, x0), (y1, x1)]
                .iter()
                .all(|&(yy, xx)| src_render.primitive[yy * w + xx] == ref_render.primitive[p]);
        }
    }
    Reprojection {
        error,
        same_surface,
        primitive: ref_render.primitive,
        range: hi - lo,
    }
}

pub fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Central-difference check of `loss` against the gradients it leaves on
/// `params`, probing at most `per_param` evenly spaced elements of each.
/// Returns the worst relative error with denominators floored at 1e-3.
pub fn param_grad_error(loss: impl Fn() -> Tensor, params: &[Tensor], per_param: usize, eps: f64) -> f64 {
    for p in params {
        p.zero_grad();
    }
    loss().backward().unwrap();
    let grads: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()])).collect();
    let mut worst: f64 = 0.0;
    for (p, g) in params.iter().zip(&grads) {
        let n = p.numel();
        let stride = n.div_ceil(per_param).max(1);
        for j in (0..n).step_by(stride) {
            let orig = p.data()[j];
            p.data_mut()[j] = orig + eps;
            let plus = fusedepth_tensor::no_grad(|| loss().item());
            p.data_mut()[j] = orig - eps;
            let minus = fusedepth_tensor::no_grad(|| loss().item());
            p.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((g[j] - numeric).abs() / numeric.abs().max(1e-3));
        }
    }
    worst
}

/// Fixed non-constant weighting so that a map reduces to a scalar without
/// hiding errors behind a constant sum.
pub fn probe_sum(t: &Tensor) -> Tensor {
    let w: Vec<f64> = (0..t.numel()).map(|i| (0.91 * i as f64 + 0.3).sin() + 0.2).collect();
    t.mul(&Tensor::new(w, t.shape()).unwrap()).unwrap().sum().unwrap()
}

pub fn tensor_err(e: fusedepth_core::CoreError) -> fusedepth_tensor::TensorError {
    match e {
        fusedepth_core::CoreError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

/// Sequential recurrence computed from raw parameter values.
pub fn naive_scan(x: &[f64], l: usize, ch: usize, p: &SsmBlockParams) -> Vec<f64> {
    let s = p.state_dim();
    let (wd, bd) = (p.delta.weight.to_vec(), p.delta.bias.as_ref().unwrap().to_vec());
    let (wb, wc) = (p.b.weight.to_vec(), p.c.weight.to_vec());
    let a: Vec<f64> = p.a_log.to_vec().iter().map(|v| -v.exp()).collect();
    let d = p.d.to_vec();
    let mut h = vec![vec![0.0; s]; ch];
    let mut y = vec![0.0; l * ch];
    for t in 0..l {
        let xt = &x[t * ch..(t + 1) * ch];
        let proj = |w: &[f64], out: usize, j: usize| (0..ch).map(|i| xt[i] * w[i * out + j]).sum::<f64>();
        let b: Vec<f64> = (0..s).map(|j| proj(&wb, s, j)).collect();
        let c: Vec<f64> = (0..s).map(|j| proj(&wc, s, j)).collect();
        for k in 0..ch {
            let delta = softplus(proj(&wd, ch, k) + bd[k]);
            let mut out = d[k] * xt[k];
            for j in 0..s {
                h[k][j] = (delta * a[j]).exp() * h[k][j] + delta * b[j] * xt[k];
                out += c[j] * h[k][j];
            }
            y[t * ch + k] = out;
        }
    }
    y
}

pub fn randomized_params(seed: u64, ch: usize, s: usize) -> SsmBlockParams {
    let mut ps = ParamStore::new(seed);
    let p = SsmBlockParams::new(&mut ps, "ssm", ch, s).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in [&p.a_log, &p.d] {
        for v in t.data_mut().iter_mut() {
            *v += r.random_range(-0.5..0.5);
        }
    }
    p
}

/// Volume test dimensions.
pub const D: usize = 4;
pub const C: usize = 8;
pub const H: usize = 4;
pub const W: usize = 4;
pub const HW: usize = H * W;

pub fn views(r: &mut ChaCha8Rng, n: usize, p_valid: f64) -> Vec<WarpedView> {
    (0..n)
        .map(|_| WarpedView {
            features: random_tensor(r, &[D, C, H, W]),
            valid: (0..D * HW).map(|_| r.random_bool(p_valid)).collect(),
        })
        .collect()
}

pub fn variance_oracle(rf: &[f64], vs: &[WarpedView]) -> Vec<f64> {
    let mut out = vec![0.0; D * C * HW];
    for d in 0..D {
        for c in 0..C {
            for p in 0..HW {
                let mut xs = vec![rf[c * HW + p]];
                for v in vs.iter().filter(|v| v.valid[d * HW + p]) {
                    xs.push(v.features.to_vec()[(d * C + c) * HW + p]);
                }
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                out[(d * C + c) * HW + p] = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
            }
        }
    }
    out
}

pub fn gwc_oracle(rf: &[f64], vs: &[WarpedView], g: usize) -> Vec<f64> {
    let gs = C / g;
    let mut out = vec![0.0; D * g * HW];
    for d in 0..D {
        for gi in 0..g {
            for p in 0..HW {
                let live: Vec<&WarpedView> = vs.iter().filter(|v| v.valid[d * HW + p]).collect();
                if live.is_empty() {
                    continue;
                }
                let mut acc = 0.0;
                for v in &live {
                    let sv = v.features.to_vec();
                    let dot: f64 = (gi * gs..(gi + 1) * gs).map(|c| rf[c * HW + p] * sv[(d * C + c) * HW + p]).sum();
                    acc += dot / gs as f64;
                }
                out[(d * g + gi) * HW + p] = acc / live.len() as f64;
            }
        }
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
