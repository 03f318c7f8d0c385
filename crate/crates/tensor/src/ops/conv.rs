//! Direct 2-D and 3-D convolution in cross-correlation convention (the
//! kernel is not flipped) with zero padding. Both share one kernel that
//! treats a 2-D convolution as a 3-D one with unit depth.

use crate::error::{Result, TensorError};
use crate::tensor::{Backward, Tensor};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c_in: usize,
    c_out: usize,
    groups: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn in_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.c_out / self.groups
    }

    fn out_volume(&self) -> usize {
        self.output.iter().product()
    }

    /// Output positions `o` along axis `a` whose source `o*stride + k - pad`
    /// lies inside the input.
    fn valid_range(&self, a: usize, k: usize) -> std::ops::Range<usize> {
        let (s, p, n) = (self.stride[a], self.pad[a], self.input[a]);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n + p > k { ((n + p - k - 1) / s + 1).min(self.output[a]) } else { 0 };
        lo..hi.max(lo)
    }

    /// Calls `f(x_index, w_index, out_index, run)` for every contiguous run
    /// of output positions along the innermost axis.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [_, ih, iw] = self.input;
        let [_, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        let (ipg, opg) = (self.in_per_group(), self.out_per_group());
        for co in 0..self.c_out {
            let group = co / opg;
            for cig in 0..ipg {
                let ci = group * ipg + cig;
                for zd in 0..kd {
                    let rd = self.valid_range(0, zd);
                    for zh in 0..kh {
                        let rh = self.valid_range(1, zh);
                        for zw in 0..kw {
                            let rw = self.valid_range(2, zw);
                            if rw.is_empty() {
                                continue;
                            }
                            let w_idx = ((co * ipg + cig) * kd + zd) * kh * kw + zh * kw + zw;
                            for od in rd.clone() {
                                let id = od * self.stride[0] + zd - self.pad[0];
                                for oy in rh.clone() {
                                    let iy = oy * self.stride[1] + zh - self.pad[1];
                                    let ix = rw.start * self.stride[2] + zw - self.pad[2];
                                    let x_idx = ((ci * self.input[0] + id) * ih + iy) * iw + ix;
                                    let o_idx = ((co * self.output[0] + od) * oh + oy) * ow + rw.start;
                                    f(x_idx, w_idx, o_idx, rw.len());
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv {
    x: Tensor,
    w: Tensor,
    geo: Geometry,
    name: &'static str,
}

impl Backward for Conv {
    fn name(&self) -> &'static str {
        self.name
    }

    fn inputs(&self) -> Vec<Tensor> {
        vec![self.x.clone(), self.w.clone()]
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = self.x.data();
        let w = self.w.data();
        let sx = self.geo.stride[2];
        let mut gx = self.x.requires_grad().then(|| vec![0.0; x.len()]);
        let mut gw = self.w.requires_grad().then(|| vec![0.0; w.len()]);
        self.geo.for_each_tap(|xi, wi, oi, run| {
            let gs = &g[oi..oi + run];
            if let Some(gx) = gx.as_mut() {
                let wv = w[wi];
                for (j, gj) in gs.iter().enumerate() {
                    gx[xi + j * sx] += wv * gj;
                }
            }
            if let Some(gw) = gw.as_mut() {
                gw[wi] += gs.iter().enumerate().map(|(j, gj)| x[xi + j * sx] * gj).sum::<f64>();
            }
        });
        vec![gx, gw]
    }
}

fn conv_forward(name: &'static str, x: &Tensor, w: &Tensor, geo: Geometry) -> Result<Tensor> {
    let mut out = vec![0.0; geo.c_out * geo.out_volume()];
    {
        let xd = x.data();
        let wd = w.data();
        let sx = geo.stride[2];
        geo.for_each_tap(|xi, wi, oi, run| {
            let wv = wd[wi];
            if wv == 0.0 {
                return;
            }
            let dst = &mut out[oi..oi + run];
            if sx == 1 {
                for (d, s) in dst.iter_mut().zip(&xd[xi..xi + run]) {
                    *d += wv * s;
                }
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d += wv * xd[xi + j * sx];
                }
            }
        });
    }
    let mut shape = vec![geo.c_out];
    if name == "conv3d" {
        shape.push(geo.output[0]);
    }
    shape.extend_from_slice(&geo.output[1..]);
    Tensor::from_op(
        out,
        &shape,
        Box::new(Conv {
            x: x.clone(),
            w: w.clone(),
            geo,
            name,
        }),
    )
}

fn output_extent(op: &'static str, n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::invalid(op, "stride must be positive"));
    }
    if n + 2 * pad < k {
        return Err(TensorError::invalid(
            op,
            format!("kernel {k} larger than padded input {}", n + 2 * pad),
        ));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

/// Grouped 2-D convolution. `x` is `C_in×H×W`, `w` is
/// `C_out×(C_in/groups)×k×k` with `k` odd; `groups == C_in == C_out` gives a
/// depthwise convolution.
pub fn conv2d_grouped(x: &Tensor, w: &Tensor, stride: usize, pad: usize, groups: usize) -> Result<Tensor> {
    const OP: &str = "conv2d";
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let k = ws[2];
    if k % 2 == 0 {
        return Err(TensorError::invalid(OP, format!("kernel size {k} must be odd")));
    }
    if groups == 0 || xs[0] % groups != 0 || ws[0] % groups != 0 || ws[1] * groups != xs[0] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let oh = output_extent(OP, xs[1], k, stride, pad)?;
    let ow = output_extent(OP, xs[2], k, stride, pad)?;
    let geo = Geometry {
        c_in: xs[0],
        c_out: ws[0],
        groups,
        input: [1, xs[1], xs[2]],
        output: [1, oh, ow],
        kernel: [1, k, k],
        stride: [1, stride, stride],
        pad: [0, pad, pad],
    };
    conv_forward(OP, x, w, geo)
}

pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    conv2d_grouped(x, w, stride, pad, 1)
}

/// 3-D convolution: `x` is `C_in×D×H×W`, `w` is `C_out×C_in×k×k×k`, `k` odd.
pub fn conv3d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    const OP: &str = "conv3d";
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 5 || ws[1] != xs[0] || ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let k = ws[2];
    if k % 2 == 0 {
        return Err(TensorError::invalid(OP, format!("kernel size {k} must be odd")));
    }
    let od = output_extent(OP, xs[1], k, stride, pad)?;
    let oh = output_extent(OP, xs[2], k, stride, pad)?;
    let ow = output_extent(OP, xs[3], k, stride, pad)?;
    let geo = Geometry {
        c_in: xs[0],
        c_out: ws[0],
        groups: 1,
        input: [xs[1], xs[2], xs[3]],
        output: [od, oh, ow],
        kernel: [k, k, k],
        stride: [stride; 3],
        pad: [pad; 3],
    };
    conv_forward(OP, x, w, geo)
}
