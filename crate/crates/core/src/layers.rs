//! Thin learned-layer wrappers over the tensor ops.

use fusedepth_tensor::{conv2d_grouped, conv3d, Tensor};

use crate::error::Result;
use crate::params::ParamStore;

#[derive(Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub groups: usize,
}

impl Conv2d {
    pub fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, groups: usize) -> Result<Self> {
        let fan_in = c_in / groups * k * k;
        Ok(Conv2d {
            weight: ps.uniform(&format!("{name}.w"), &[c_out, c_in / groups, k, k], fan_in)?,
            bias: ps.zeros(&format!("{name}.b"), &[c_out])?,
            stride,
            groups,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.weight.shape();
        let y = conv2d_grouped(x, &self.weight, self.stride, s[2] / 2, self.groups)?;
        Ok(y.add(&self.bias.reshape(&[s[0], 1, 1])?)?)
    }
}

#[derive(Clone)]
pub struct Conv3d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv3d {
    pub fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Conv3d {
            weight: ps.uniform(&format!("{name}.w"), &[c_out, c_in, k, k, k], c_in * k * k * k)?,
            bias: ps.zeros(&format!("{name}.b"), &[c_out])?,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.weight.shape();
        let y = conv3d(x, &self.weight, self.stride, s[2] / 2)?;
        Ok(y.add(&self.bias.reshape(&[s[0], 1, 1, 1])?)?)
    }
}

/// Row-vector affine map `x·W + b` over the last axis of an `N×in` tensor.
#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        Ok(Linear {
            weight: ps.uniform(&format!("{name}.w"), &[d_in, d_out], d_in)?,
            bias: if bias { Some(ps.zeros(&format!("{name}.b"), &[d_out])?) } else { None },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.add(b)?,
            None => y,
        })
    }
}

/// Crops the trailing spatial axes of `x` to `target` (leading channel axis
/// kept). Used after nearest upsampling of an odd-sized stride-2 output.
pub(crate) fn crop_to(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    let mut y = x.clone();
    let lead = x.ndim() - target.len();
    for (i, &t) in target.iter().enumerate() {
        if y.shape()[lead + i] != t {
            y = y.narrow(lead + i, 0, t)?;
        }
    }
    Ok(y)
}
