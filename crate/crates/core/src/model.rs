//! End-to-end depth model: backbone → plane sweep → volumes → fusion →
//! regularization → soft regression → ×4 nearest upsampling.

use fusedepth_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BackboneKind, FeatureExtractor};
use crate::error::{CoreError, Result};
use crate::fusion::{gwc_volume, variance_volume, AttentionWeights, Fusion, FusionMode};
use crate::geometry::{build_hypotheses, plane_homography, warp_volume, DepthHypothesisSet, Intrinsics, Pose};
use crate::head::{regress, upsample_nearest, upsample_tensor, ConfidenceMap, DepthMap, Regularizer};
use crate::params::ParamStore;
use crate::synth::{Image, SceneSample};

/// Spatial reduction between the input and the cost volume.
pub const VOLUME_STRIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub fusion: FusionMode,
    pub in_channels: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub blocks_per_stage: usize,
    pub groups: usize,
    pub planes: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub attention_width: usize,
    pub regularizer_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneKind::DepthMamba,
            fusion: FusionMode::Proposed,
            in_channels: 1,
            channels: 8,
            state_dim: 4,
            blocks_per_stage: 2,
            groups: 4,
            planes: 16,
            d_min: 2.0,
            d_max: 10.0,
            attention_width: 8,
            regularizer_width: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(CoreError::config(format!("model.{field}"), msg));
        for (field, v) in [
            ("in_channels", self.in_channels),
            ("channels", self.channels),
            ("state_dim", self.state_dim),
            ("groups", self.groups),
            ("attention_width", self.attention_width),
            ("regularizer_width", self.regularizer_width),
        ] {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        if self.channels % self.groups != 0 {
            return bad("groups", format!("{} channels not divisible into {} groups", self.channels, self.groups));
        }
        if self.planes < 2 {
            return bad("planes", "need at least 2 depth planes".into());
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return bad("d_min", format!("need 0 < d_min < d_max, got {} and {}", self.d_min, self.d_max));
        }
        Ok(())
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            kind: self.backbone,
            in_channels: self.in_channels,
            channels: self.channels,
            state_dim: self.state_dim,
            blocks_per_stage: self.blocks_per_stage,
        }
    }
}

pub struct Prediction {
    /// Full-resolution expected depth, differentiable.
    pub depth: Tensor,
    pub valid: Vec<bool>,
    pub confidence: ConfidenceMap,
    /// `D×h×w` hypothesis distribution at volume resolution.
    pub prob: Tensor,
    pub weights: Option<AttentionWeights>,
}

impl Prediction {
    pub fn depth_map(&self) -> Result<DepthMap> {
        let s = self.depth.shape();
        DepthMap::new(s[0], s[1], self.depth.to_vec(), self.valid.clone())
    }
}

pub struct DepthModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub backbone: FeatureExtractor,
    pub regularizer: Regularizer,
    pub fusion: Fusion,
    pub hypotheses: DepthHypothesisSet,
}

impl DepthModel {
    /// Parameters are created backbone first, then regularizer, then fusion,
    /// so models differing only in fusion mode share their other weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed);
        let backbone = FeatureExtractor::new(&mut ps, "backbone", config.backbone_config())?;
        let regularizer = Regularizer::new(&mut ps, "regularizer", config.channels, config.regularizer_width)?;
        let fusion = Fusion::new(&mut ps, "fusion", config.fusion, config.channels, config.groups, config.attention_width)?;
        let hypotheses = build_hypotheses(config.d_min, config.d_max, config.planes)?;
        Ok(DepthModel {
            config,
            params: ps,
            backbone,
            regularizer,
            fusion,
            hypotheses,
        })
    }

    pub fn forward(&self, sample: &SceneSample) -> Result<Prediction> {
        self.forward_views(&sample.frames, &sample.intrinsics, &sample.poses, sample.reference)
    }

    pub fn forward_views(&self, frames: &[Image], intrinsics: &[Intrinsics], poses: &[Pose], reference: usize) -> Result<Prediction> {
        let n = frames.len();
        if n < 2 || intrinsics.len() != n || poses.len() != n || reference >= n {
            return Err(CoreError::invalid(
                "forward_pipeline",
                format!("{n} frames, {} intrinsics, {} poses, reference {reference}", intrinsics.len(), poses.len()),
            ));
        }
        let (h, w) = (frames[reference].height, frames[reference].width);
        if frames.iter().any(|f| (f.height, f.width) != (h, w)) {
            return Err(CoreError::invalid("forward_pipeline", "frames differ in size"));
        }
        let feats = frames
            .iter()
            .map(|f| Ok(self.backbone.extract(&f.to_tensor()?)?.coarsest().clone()))
            .collect::<Result<Vec<Tensor>>>()?;
        let scale = VOLUME_STRIDE as f64;
        let k_ref = intrinsics[reference].downscaled(scale);
        let mut warped = Vec::with_capacity(n - 1);
        for src in (0..n).filter(|&i| i != reference) {
            let k_src = intrinsics[src].downscaled(scale);
            let hs = self
                .hypotheses
                .values
                .iter()
                .map(|&d| plane_homography(&k_ref, &k_src, &poses[reference], &poses[src], d))
                .collect::<Result<Vec<_>>>()?;
            warped.push(warp_volume(&feats[src], &hs)?);
        }
        let ref_feat = &feats[reference];
        let var = variance_volume(ref_feat, &warped, &self.hypotheses)?;
        let gwc = gwc_volume(ref_feat, &warped, self.config.groups, &self.hypotheses)?;
        let (fused, weights) = self.fusion.fuse(&var, &gwc, ref_feat)?;
        let scores = self.regularizer.forward(&fused)?;
        let reg = regress(&scores, &self.hypotheses)?;

        let [d, _, fh, fw] = fused.dims();
        let covered: Vec<bool> = (0..fh * fw).map(|p| (0..d).all(|di| fused.coverage[di * fh * fw + p])).collect();
        let depth = upsample_tensor(&reg.depth, VOLUME_STRIDE)?;
        if depth.shape() != [h, w] {
            return Err(CoreError::invalid("forward_pipeline", format!("upsampled depth {:?} vs image {h}×{w}", depth.shape())));
        }
        Ok(Prediction {
            depth,
            valid: upsample_nearest(&covered, fh, fw, VOLUME_STRIDE)?,
            confidence: ConfidenceMap {
                height: h,
                width: w,
                values: upsample_nearest(&reg.confidence.values, fh, fw, VOLUME_STRIDE)?,
            },
            prob: reg.prob,
            weights,
        })
    }
}

pub fn forward_pipeline(sample: &SceneSample, model: &DepthModel) -> Result<(DepthMap, ConfidenceMap)> {
    let p = model.forward(sample)?;
    Ok((p.depth_map()?, p.confidence))
}
