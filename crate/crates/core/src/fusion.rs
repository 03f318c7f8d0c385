//! Cost volumes and their fusion.
//!
//! Two paths meet here: the matching branch (variance volume) and the
//! attention branch (group-wise correlation → per-voxel weights).

use std::fmt;
use std::str::FromStr;

use fusedepth_tensor::{concat, Backward, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{DepthHypothesisSet, WarpedView};
use crate::layers::{crop_to, Conv2d, Conv3d, Linear};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Variance,
    Gwc,
    Attention,
    Fused,
}

/// `D×C×H×W` volume; `coverage[d,h,w]` is true when at least one source
/// view observed the voxel.
#[derive(Clone)]
pub struct CostVolume {
    pub data: Tensor,
    pub hypotheses: DepthHypothesisSet,
    pub kind: VolumeKind,
    pub coverage: Vec<bool>,
}

impl CostVolume {
    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

/// `D×H×W` weights in (0,1).
#[derive(Clone)]
pub struct AttentionWeights {
    pub data: Tensor,
}

fn check_views(op: &'static str, ref_feat: &Tensor, warped: &[WarpedView], hyp: &DepthHypothesisSet) -> Result<[usize; 4]> {
    if warped.is_empty() {
        return Err(CoreError::invalid(op, "no source views"));
    }
    let r = ref_feat.shape();
    if r.len() != 3 {
        return Err(CoreError::invalid(op, format!("reference features must be C×H×W, got {r:?}")));
    }
    let dims = [hyp.len(), r[0], r[1], r[2]];
    for (i, v) in warped.iter().enumerate() {
        if v.features.shape() != dims || v.valid.len() != dims[0] * dims[2] * dims[3] {
            return Err(CoreError::invalid(
                op,
                format!("source {i} has shape {:?}, expected {dims:?}", v.features.shape()),
            ));
        }
    }
    Ok(dims)
}

fn coverage_of(warped: &[WarpedView]) -> Vec<bool> {
    (0..warped[0].valid.len()).map(|i| warped.iter().any(|v| v.valid[i])).collect()
}

struct VarianceOp {
    inputs: Vec<Tensor>,
    masks: Vec<Vec<bool>>,
    dims: [usize; 4],
    /// Per-voxel view mean.
    mean: Vec<f64>,
    /// Views counted per `(d, pixel)`.
    counts: Vec<f64>,
}

impl Backward for VarianceOp {
    fn name(&self) -> &'static str {
        "variance_volume"
    }

    fn inputs(&self) -> Vec<Tensor> {
        self.inputs.clone()
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [d, c, h, w] = self.dims;
        let hw = h * w;
        let rf = self.inputs[0].data();
        let srcs: Vec<_> = self.inputs[1..].iter().map(|t| t.data()).collect();
        let mut g_ref = vec![0.0; c * hw];
        let mut g_src: Vec<Vec<f64>> = srcs.iter().map(|s| vec![0.0; s.len()]).collect();
        for di in 0..d {
            for ci in 0..c {
                for p in 0..hw {
                    let i = (di * c + ci) * hw + p;
                    let k = 2.0 * g[i] / self.counts[di * hw + p];
                    let mu = self.mean[i];
                    g_ref[ci * hw + p] += k * (rf[ci * hw + p] - mu);
                    for (s, sd) in srcs.iter().enumerate() {
                        if self.masks[s][di * hw + p] {
                            g_src[s][i] = k * (sd[i] - mu);
                        }
                    }
                }
            }
        }
        std::iter::once(Some(g_ref)).chain(g_src.into_iter().map(Some)).collect()
    }
}

/// Per hypothesis, variance over `{ref} ∪ {valid warped sources}` with equal
/// view weights. Voxels with no valid source get variance over the
/// reference alone, i.e. 0, and are cleared in `coverage`.
pub fn variance_volume(ref_feat: &Tensor, warped: &[WarpedView], hyp: &DepthHypothesisSet) -> Result<CostVolume> {
    let dims = check_views("variance_volume", ref_feat, warped, hyp)?;
    let [d, c, h, w] = dims;
    let hw = h * w;
    let counts: Vec<f64> = (0..d * hw)
        .map(|i| 1.0 + warped.iter().filter(|v| v.valid[i]).count() as f64)
        .collect();
    let mut mean = vec![0.0; d * c * hw];
    let mut out = vec![0.0; d * c * hw];
    {
        let rf = ref_feat.data();
        let srcs: Vec<_> = warped.iter().map(|v| v.features.data()).collect();
        for di in 0..d {
            for ci in 0..c {
                for p in 0..hw {
                    let i = (di * c + ci) * hw + p;
                    let valid = |s: usize| warped[s].valid[di * hw + p];
                    let r = rf[ci * hw + p];
                    let mut sum = r;
                    for (s, sd) in srcs.iter().enumerate() {
                        if valid(s) {
                            sum += sd[i];
                        }
                    }
                    let n = counts[di * hw + p];
                    let mu = sum / n;
                    let mut var = (r - mu) * (r - mu);
                    for (s, sd) in srcs.iter().enumerate() {
                        if valid(s) {
                            var += (sd[i] - mu) * (sd[i] - mu);
                        }
                    }
                    mean[i] = mu;
                    out[i] = var / n;
                }
            }
        }
    }
    let mut inputs = vec![ref_feat.clone()];
    inputs.extend(warped.iter().map(|v| v.features.clone()));
    let data = Tensor::from_op(
        out,
        &dims,
        Box::new(VarianceOp {
            inputs,
            masks: warped.iter().map(|v| v.valid.clone()).collect(),
            dims,
            mean,
            counts,
        }),
    )?;
    Ok(CostVolume {
        data,
        hypotheses: hyp.clone(),
        kind: VolumeKind::Variance,
        coverage: coverage_of(warped),
    })
}

struct GwcOp {
    inputs: Vec<Tensor>,
    masks: Vec<Vec<bool>>,
    dims: [usize; 4],
    groups: usize,
}

impl GwcOp {
    fn valid_count(&self, i: usize) -> usize {
        self.masks.iter().filter(|m| m[i]).count()
    }
}

impl Backward for GwcOp {
    fn name(&self) -> &'static str {
        "gwc_volume"
    }

    fn inputs(&self) -> Vec<Tensor> {
        self.inputs.clone()
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [d, c, h, w] = self.dims;
        let (hw, gs) = (h * w, c / self.groups);
        let scale = self.groups as f64 / c as f64;
        let rf = self.inputs[0].data();
        let srcs: Vec<_> = self.inputs[1..].iter().map(|t| t.data()).collect();
        let mut g_ref = vec![0.0; c * hw];
        let mut g_src: Vec<Vec<f64>> = srcs.iter().map(|s| vec![0.0; s.len()]).collect();
        for di in 0..d {
            for p in 0..hw {
                let n = self.valid_count(di * hw + p);
                if n == 0 {
                    continue;
                }
                for gi in 0..self.groups {
                    let k = g[(di * self.groups + gi) * hw + p] * scale / n as f64;
                    for ci in gi * gs..(gi + 1) * gs {
                        let ri = ci * hw + p;
                        let vi = (di * c + ci) * hw + p;
                        for (s, sd) in srcs.iter().enumerate() {
                            if self.masks[s][di * hw + p] {
                                g_ref[ri] += k * sd[vi];
                                g_src[s][vi] += k * rf[ri];
                            }
                        }
                    }
                }
            }
        }
        std::iter::once(Some(g_ref)).chain(g_src.into_iter().map(Some)).collect()
    }
}

/// Group-wise correlation `⟨f_ref^g, f_src^g⟩·G/C`, averaged over valid
/// sources (0 where none is valid). Output `D×G×H×W`.
pub fn gwc_volume(ref_feat: &Tensor, warped: &[WarpedView], groups: usize, hyp: &DepthHypothesisSet) -> Result<CostVolume> {
    let dims = check_views("gwc_volume", ref_feat, warped, hyp)?;
    let [d, c, h, w] = dims;
    if groups == 0 || c % groups != 0 {
        return Err(CoreError::invalid("gwc_volume", format!("{c} channels not divisible into {groups} groups")));
    }
    let (hw, gs) = (h * w, c / groups);
    let scale = groups as f64 / c as f64;
    let mut out = vec![0.0; d * groups * hw];
    {
        let rf = ref_feat.data();
        let srcs: Vec<_> = warped.iter().map(|v| v.features.data()).collect();
        for di in 0..d {
            for p in 0..hw {
                let live: Vec<usize> = (0..srcs.len()).filter(|&s| warped[s].valid[di * hw + p]).collect();
                if live.is_empty() {
                    continue;
                }
                for gi in 0..groups {
                    let mut acc = 0.0;
                    for &s in &live {
                        let mut dot = 0.0;
                        for ci in gi * gs..(gi + 1) * gs {
                            dot += rf[ci * hw + p] * srcs[s][(di * c + ci) * hw + p];
                        }
                        acc += dot * scale;
                    }
                    out[(di * groups + gi) * hw + p] = acc / live.len() as f64;
                }
            }
        }
    }
    let mut inputs = vec![ref_feat.clone()];
    inputs.extend(warped.iter().map(|v| v.features.clone()));
    let data = Tensor::from_op(
        out,
        &[d, groups, h, w],
        Box::new(GwcOp {
            inputs,
            masks: warped.iter().map(|v| v.valid.clone()).collect(),
            dims,
            groups,
        }),
    )?;
    Ok(CostVolume {
        data,
        hypotheses: hyp.clone(),
        kind: VolumeKind::Gwc,
        coverage: coverage_of(warped),
    })
}

/// Multi-scale attention module followed by a two-level 3-D hourglass and a
/// single-channel sigmoid head.
#[derive(Clone)]
pub struct AttentionNet {
    pub context: Conv2d,
    pub squeeze_fine: Conv3d,
    pub squeeze_coarse: Conv3d,
    pub enc1: Conv3d,
    pub enc2: Conv3d,
    pub dec1: Conv3d,
    pub dec0: Conv3d,
    pub head: Conv3d,
}

impl AttentionNet {
    pub fn new(ps: &mut ParamStore, name: &str, groups: usize, context_channels: usize, width: usize) -> Result<Self> {
        let a = width;
        Ok(AttentionNet {
            context: Conv2d::new(ps, &format!("{name}.context"), context_channels, a, 1, 1, 1)?,
            squeeze_fine: Conv3d::new(ps, &format!("{name}.squeeze_fine"), groups, a, 3, 1)?,
            squeeze_coarse: Conv3d::new(ps, &format!("{name}.squeeze_coarse"), groups, a, 3, 2)?,
            enc1: Conv3d::new(ps, &format!("{name}.enc1"), a, a, 3, 2)?,
            enc2: Conv3d::new(ps, &format!("{name}.enc2"), a, a, 3, 2)?,
            dec1: Conv3d::new(ps, &format!("{name}.dec1"), a, a, 3, 1)?,
            dec0: Conv3d::new(ps, &format!("{name}.dec0"), a, a, 3, 1)?,
            head: Conv3d::new(ps, &format!("{name}.head"), a, 1, 3, 1)?,
        })
    }

    /// `gwc` is `D×G×H×W`; `context` holds reference features `C×H×W`.
    pub fn forward(&self, gwc: &CostVolume, context: &Tensor) -> Result<AttentionWeights> {
        if gwc.kind != VolumeKind::Gwc {
            return Err(CoreError::invalid("attention_weights", "input volume is not a gwc volume"));
        }
        let [d, _, h, w] = gwc.dims();
        if context.ndim() != 3 || context.shape()[1..] != [h, w] {
            return Err(CoreError::invalid(
                "attention_weights",
                format!("context {:?} does not match volume {h}×{w}", context.shape()),
            ));
        }
        let x = gwc.data.permute(&[1, 0, 2, 3])?;
        let full = [d, h, w];
        let up = |t: &Tensor, target: &[usize]| -> Result<Tensor> { crop_to(&t.upsample_nearest(2, 3)?, target) };

        let ctx = self.context.forward(context)?;
        let a = ctx.shape()[0];
        let ctx = ctx.reshape(&[a, 1, h, w])?;
        let fine = self.squeeze_fine.forward(&x)?.add(&ctx)?;
        let coarse = self.squeeze_coarse.forward(&x)?.silu()?;
        let m = fine.add(&up(&coarse, &full)?)?.silu()?;

        let e1 = self.enc1.forward(&m)?.silu()?;
        let e2 = self.enc2.forward(&e1)?.silu()?;
        let d1 = self.dec1.forward(&up(&e2, &e1.shape()[1..])?)?.silu()?.add(&e1)?;
        let d0 = self.dec0.forward(&up(&d1, &full)?)?.silu()?.add(&m)?;
        let out = self.head.forward(&d0)?.sigmoid()?;
        Ok(AttentionWeights {
            data: out.reshape(&full)?,
        })
    }
}

pub fn attention_weights(net: &AttentionNet, gwc: &CostVolume, context: &Tensor) -> Result<AttentionWeights> {
    net.forward(gwc, context)
}

/// `out[d,c,h,w] = var[d,c,h,w]·w[d,h,w]`.
pub fn attention_volume(var: &CostVolume, w: &AttentionWeights) -> Result<CostVolume> {
    let [d, _, h, wd] = var.dims();
    if var.kind != VolumeKind::Variance {
        return Err(CoreError::invalid("attention_volume", "input volume is not a variance volume"));
    }
    if w.data.shape() != [d, h, wd] {
        return Err(CoreError::invalid(
            "attention_volume",
            format!("weights {:?} do not match volume {:?}", w.data.shape(), var.dims()),
        ));
    }
    Ok(CostVolume {
        data: var.data.mul(&w.data.reshape(&[d, 1, h, wd])?)?,
        hypotheses: var.hypotheses.clone(),
        kind: VolumeKind::Attention,
        coverage: var.coverage.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Concat,
    CrossAttention,
    Proposed,
    /// Matching branch only: attention weights clamped to 1.
    VarianceOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::Concat,
        FusionMode::CrossAttention,
        FusionMode::Proposed,
        FusionMode::VarianceOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::CrossAttention => "cross_attention",
            FusionMode::Proposed => "proposed",
            FusionMode::VarianceOnly => "variance_only",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CoreError::invalid("fusion", format!("unknown fusion mode `{s}`")))
    }
}

#[derive(Clone)]
pub struct CrossAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

#[derive(Clone)]
pub enum Fusion {
    Concat(Conv3d),
    CrossAttention(CrossAttention),
    Proposed(AttentionNet),
    VarianceOnly,
}

impl Fusion {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        mode: FusionMode,
        channels: usize,
        groups: usize,
        attention_width: usize,
    ) -> Result<Self> {
        Ok(match mode {
            FusionMode::Concat => Fusion::Concat(Conv3d::new(ps, &format!("{name}.concat"), channels + groups, channels, 1, 1)?),
            FusionMode::CrossAttention => Fusion::CrossAttention(CrossAttention {
                query: Linear::new(ps, &format!("{name}.q"), channels, channels, false)?,
                key: Linear::new(ps, &format!("{name}.k"), groups, channels, false)?,
                value: Linear::new(ps, &format!("{name}.v"), groups, channels, false)?,
            }),
            FusionMode::Proposed => Fusion::Proposed(AttentionNet::new(ps, &format!("{name}.attn"), groups, channels, attention_width)?),
            FusionMode::VarianceOnly => Fusion::VarianceOnly,
        })
    }

    pub fn mode(&self) -> FusionMode {
        match self {
            Fusion::Concat(_) => FusionMode::Concat,
            Fusion::CrossAttention(_) => FusionMode::CrossAttention,
            Fusion::Proposed(_) => FusionMode::Proposed,
            Fusion::VarianceOnly => FusionMode::VarianceOnly,
        }
    }

    /// Fused `D×C×H×W` volume, plus the attention weights when the mode
    /// produces them.
    pub fn fuse(&self, var: &CostVolume, gwc: &CostVolume, context: &Tensor) -> Result<(CostVolume, Option<AttentionWeights>)> {
        let [d, c, h, w] = var.dims();
        let [gd, g, gh, gw] = gwc.dims();
        if [gd, gh, gw] != [d, h, w] {
            return Err(CoreError::invalid(
                "fuse",
                format!("volumes misaligned: {:?} vs {:?}", var.dims(), gwc.dims()),
            ));
        }
        let fused = |data: Tensor| CostVolume {
            data,
            hypotheses: var.hypotheses.clone(),
            kind: VolumeKind::Fused,
            coverage: var.coverage.clone(),
        };
        match self {
            Fusion::Concat(conv) => {
                let x = concat(&[var.data.clone(), gwc.data.clone()], 1)?.permute(&[1, 0, 2, 3])?;
                Ok((fused(conv.forward(&x)?.permute(&[1, 0, 2, 3])?), None))
            }
            Fusion::CrossAttention(ca) => {
                let n = d * h * w;
                let tokens = |t: &Tensor, k: usize| -> Result<Tensor> { Ok(t.permute(&[0, 2, 3, 1])?.reshape(&[n, k])?) };
                let q = ca.query.forward(&tokens(&var.data, c)?)?.reshape(&[n, c, 1])?;
                let gt = tokens(&gwc.data, g)?;
                let k = ca.key.forward(&gt)?.reshape(&[n, 1, c])?;
                let v = ca.value.forward(&gt)?.reshape(&[n, 1, c])?;
                let attn = q.mul(&k)?.softmax(2)?;
                let out = attn.mul(&v)?.sum_axis(2)?.reshape(&[d, h, w, c])?.permute(&[0, 3, 1, 2])?;
                Ok((fused(var.data.add(&out)?), None))
            }
            Fusion::Proposed(net) => {
                let wts = net.forward(gwc, context)?;
                let mut v = attention_volume(var, &wts)?;
                v.kind = VolumeKind::Fused;
                Ok((v, Some(wts)))
            }
            Fusion::VarianceOnly => Ok((fused(var.data.clone()), None)),
        }
    }
}

pub fn fuse(fusion: &Fusion, var: &CostVolume, gwc: &CostVolume, context: &Tensor) -> Result<CostVolume> {
    Ok(fusion.fuse(var, gwc, context)?.0)
}
