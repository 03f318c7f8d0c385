//! Multi-scale feature backbone built from selective-scan blocks.

mod scan;
mod ssm;

pub use scan::{cross_merge, cross_scan_2d, ScanOrder};
pub use ssm::{scan_core, selective_scan, SsmBlockParams};

use std::fmt;
use std::str::FromStr;

use fusedepth_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::layers::Conv2d;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    ConvOnly,
    MambaPlain,
    DepthMamba,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 3] = [BackboneKind::ConvOnly, BackboneKind::MambaPlain, BackboneKind::DepthMamba];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::ConvOnly => "conv_only",
            BackboneKind::MambaPlain => "mamba_plain",
            BackboneKind::DepthMamba => "depth_mamba",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        BackboneKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CoreError::invalid("backbone", format!("unknown backbone kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub in_channels: usize,
    pub channels: usize,
    pub state_dim: usize,
    pub blocks_per_stage: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::DepthMamba,
            in_channels: 1,
            channels: 8,
            state_dim: 4,
            blocks_per_stage: 2,
        }
    }
}

/// Feature maps at 1/2 and 1/4 of the input resolution, finest first.
#[derive(Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn coarsest(&self) -> &Tensor {
        self.levels.last().expect("pyramid has levels")
    }
}

/// `f + silu(pointwise(depthwise3×3(f)))`.
#[derive(Clone)]
pub struct LocalFeatureBlock {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
}

impl LocalFeatureBlock {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(LocalFeatureBlock {
            depthwise: Conv2d::new(ps, &format!("{name}.dw"), channels, channels, 3, 1, channels)?,
            pointwise: Conv2d::new(ps, &format!("{name}.pw"), channels, channels, 1, 1, 1)?,
        })
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let g = self.pointwise.forward(&self.depthwise.forward(f)?)?.silu()?;
        Ok(f.add(&g)?)
    }
}

pub fn local_feature_block(f: &Tensor, block: &LocalFeatureBlock) -> Result<Tensor> {
    block.forward(f)
}

/// Inverted-bottleneck residual conv block standing in for a ConvNeXt stage.
#[derive(Clone)]
struct ConvBlock {
    depthwise: Conv2d,
    expand: Conv2d,
    project: Conv2d,
}

impl ConvBlock {
    fn new(ps: &mut ParamStore, name: &str, c: usize) -> Result<Self> {
        Ok(ConvBlock {
            depthwise: Conv2d::new(ps, &format!("{name}.dw"), c, c, 3, 1, c)?,
            expand: Conv2d::new(ps, &format!("{name}.expand"), c, 2 * c, 1, 1, 1)?,
            project: Conv2d::new(ps, &format!("{name}.project"), 2 * c, c, 1, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.expand.forward(&self.depthwise.forward(x)?)?.silu()?;
        Ok(x.add(&self.project.forward(&h)?)?)
    }
}

/// Residual scan block: `x + merge(scan paths)`, then an optional local
/// feature block.
#[derive(Clone)]
struct MambaBlock {
    paths: Vec<SsmBlockParams>,
    local: Option<LocalFeatureBlock>,
}

impl MambaBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let order = ScanOrder::new(s[1], s[2]);
        let mut merged: Option<Tensor> = None;
        for (k, p) in self.paths.iter().enumerate() {
            let y = order.unscan(&selective_scan(&order.scan(x, k)?, p)?, k)?;
            merged = Some(match merged {
                Some(m) => m.add(&y)?,
                None => y,
            });
        }
        let g = x.add(&merged.expect("at least one path"))?;
        match &self.local {
            Some(l) => l.forward(&g),
            None => Ok(g),
        }
    }
}

#[derive(Clone)]
enum Block {
    Conv(ConvBlock),
    Mamba(MambaBlock),
}

impl Block {
    fn new(ps: &mut ParamStore, name: &str, cfg: &BackboneConfig) -> Result<Self> {
        let c = cfg.channels;
        Ok(match cfg.kind {
            BackboneKind::ConvOnly => Block::Conv(ConvBlock::new(ps, name, c)?),
            BackboneKind::MambaPlain => Block::Mamba(MambaBlock {
                paths: vec![SsmBlockParams::new(ps, &format!("{name}.ssm0"), c, cfg.state_dim)?],
                local: None,
            }),
            BackboneKind::DepthMamba => Block::Mamba(MambaBlock {
                paths: (0..4)
                    .map(|k| SsmBlockParams::new(ps, &format!("{name}.ssm{k}"), c, cfg.state_dim))
                    .collect::<Result<_>>()?,
                local: Some(LocalFeatureBlock::new(ps, &format!("{name}.lfb"), c)?),
            }),
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Conv(b) => b.forward(x),
            Block::Mamba(b) => b.forward(x),
        }
    }
}

/// Stem conv (stride 2) → block stack → conv (stride 2) → block stack.
#[derive(Clone)]
pub struct FeatureExtractor {
    pub config: BackboneConfig,
    pub stem: Conv2d,
    pub down: Conv2d,
    stage1: Vec<Block>,
    stage2: Vec<Block>,
}

impl FeatureExtractor {
    pub fn new(ps: &mut ParamStore, name: &str, config: BackboneConfig) -> Result<Self> {
        if config.channels == 0 || config.in_channels == 0 || config.state_dim == 0 {
            return Err(CoreError::invalid("backbone", "channel and state sizes must be positive"));
        }
        let c = config.channels;
        let stem = Conv2d::new(ps, &format!("{name}.stem"), config.in_channels, c, 3, 2, 1)?;
        let stage1 = (0..config.blocks_per_stage)
            .map(|i| Block::new(ps, &format!("{name}.s1.b{i}"), &config))
            .collect::<Result<_>>()?;
        let down = Conv2d::new(ps, &format!("{name}.down"), c, c, 3, 2, 1)?;
        let stage2 = (0..config.blocks_per_stage)
            .map(|i| Block::new(ps, &format!("{name}.s2.b{i}"), &config))
            .collect::<Result<_>>()?;
        Ok(FeatureExtractor {
            config,
            stem,
            down,
            stage1,
            stage2,
        })
    }

    pub fn extract(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let s = image.shape();
        if s.len() != 3 || s[0] != self.config.in_channels || s[1] % 4 != 0 || s[2] % 4 != 0 {
            return Err(CoreError::invalid(
                "extract_pyramid",
                format!(
                    "image {s:?} must be {}×H×W with H, W divisible by 4",
                    self.config.in_channels
                ),
            ));
        }
        let mut x = self.stem.forward(image)?.silu()?;
        for b in &self.stage1 {
            x = b.forward(&x)?;
        }
        let half = x.clone();
        let mut x = self.down.forward(&x)?.silu()?;
        for b in &self.stage2 {
            x = b.forward(&x)?;
        }
        Ok(FeaturePyramid { levels: vec![half, x] })
    }
}

pub fn backbone_variant(ps: &mut ParamStore, name: &str, config: BackboneConfig) -> Result<FeatureExtractor> {
    FeatureExtractor::new(ps, name, config)
}

pub fn extract_pyramid(image: &Tensor, extractor: &FeatureExtractor) -> Result<FeaturePyramid> {
    extractor.extract(image)
}
