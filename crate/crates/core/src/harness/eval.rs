use std::fs;
use std::path::{Path, PathBuf};

use fusedepth_tensor::no_grad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use super::train::train_model;
use crate::backbone::BackboneKind;
use crate::error::{CoreError, Result};
use crate::fusion::FusionMode;
use crate::geometry::{inject_pose_noise, Pose};
use crate::io::{normalize_to_u8, write_pfm, write_pgm, FloatImage};
use crate::metrics::{EvalOptions, MetricsAccumulator, MetricsReport};
use crate::model::{DepthModel, ModelConfig};
use crate::synth::{scene_seed, SceneSample};

/// Pose perturbation applied at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct NoiseSetting {
    pub sigma_rot: f64,
    pub sigma_trans: f64,
    pub seed: u64,
    /// Perturb the reference pose too instead of sources only.
    pub all_poses: bool,
}

impl NoiseSetting {
    pub fn clean() -> Self {
        NoiseSetting::default()
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_rot == 0.0 && self.sigma_trans == 0.0
    }
}

/// Poses of scene `index` under `noise`. The generator is keyed on the noise
/// seed and scene index only, so every grid cell sees the same draws.
pub fn noisy_poses(sample: &SceneSample, index: usize, noise: &NoiseSetting) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(noise.seed, index as u64));
    let baseline = sample.baseline();
    sample
        .poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let noisy = inject_pose_noise(p, noise.sigma_rot, noise.sigma_trans, baseline, &mut rng);
            if k == sample.reference && !noise.all_poses {
                *p
            } else {
                noisy
            }
        })
        .collect()
}

/// Pixel-weighted metrics of `model` over `samples` under `noise`.
pub fn evaluate(model: &DepthModel, samples: &[SceneSample], noise: &NoiseSetting, options: EvalOptions) -> Result<MetricsReport> {
    if !(noise.sigma_rot >= 0.0 && noise.sigma_trans >= 0.0) {
        return Err(CoreError::invalid("evaluate", "noise sigmas must be non-negative"));
    }
    let mut acc = MetricsAccumulator::new(options);
    no_grad(|| -> Result<()> {
        for (i, s) in samples.iter().enumerate() {
            let poses = noisy_poses(s, i, noise);
            let pred = model.forward_views(&s.frames, &s.intrinsics, &poses, s.reference)?;
            acc.add(&pred.depth_map()?, &s.gt_depth)?;
        }
        Ok(())
    })?;
    let mut report = acc.report()?;
    let meta = &mut report.metadata;
    meta.insert("scenes".into(), samples.len().to_string());
    meta.insert("sigma_rot".into(), noise.sigma_rot.to_string());
    meta.insert("sigma_trans".into(), noise.sigma_trans.to_string());
    meta.insert("noise_seed".into(), noise.seed.to_string());
    meta.insert("noise_all_poses".into(), noise.all_poses.to_string());
    meta.insert("backbone".into(), model.config.backbone.to_string());
    meta.insert("fusion".into(), model.config.fusion.to_string());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRow {
    pub sigma_rot: f64,
    pub sigma_trans: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub delta1: f64,
    pub n_pixels: usize,
    pub abs_rel_ratio: f64,
    pub sq_rel_ratio: f64,
    pub rmse_ratio: f64,
    pub delta1_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    pub clean: MetricsReport,
    pub rows: Vec<NoiseRow>,
}

impl NoiseTable {
    pub fn cell(&self, sigma_rot: f64, sigma_trans: f64) -> Option<&NoiseRow> {
        self.rows.iter().find(|r| r.sigma_rot == sigma_rot && r.sigma_trans == sigma_trans)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CoreError::Serialize(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CoreError::Serialize(e.to_string()))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Evaluates every `σ_rot × σ_trans` cell of the config's grid, with ratios
/// against the clean report.
pub fn bench_noise(model: &DepthModel, samples: &[SceneSample], cfg: &RunConfig) -> Result<NoiseTable> {
    if cfg.sigma_rot.is_empty() || cfg.sigma_trans.is_empty() {
        return Err(CoreError::config("sigma_rot", "noise grid must be non-empty"));
    }
    let setting = |sigma_rot, sigma_trans| NoiseSetting {
        sigma_rot,
        sigma_trans,
        seed: cfg.noise_seed,
        all_poses: cfg.noise_all_poses,
    };
    let options = cfg.eval_options();
    let clean = evaluate(model, samples, &setting(0.0, 0.0), options)?;
    let mut rows = Vec::with_capacity(cfg.sigma_rot.len() * cfg.sigma_trans.len());
    for &sr in &cfg.sigma_rot {
        for &st in &cfg.sigma_trans {
            let r = if sr == 0.0 && st == 0.0 {
                clean.clone()
            } else {
                evaluate(model, samples, &setting(sr, st), options)?
            };
            rows.push(NoiseRow {
                sigma_rot: sr,
                sigma_trans: st,
                abs_rel: r.abs_rel,
                sq_rel: r.sq_rel,
                rmse: r.rmse,
                delta1: r.delta1,
                n_pixels: r.n_pixels,
                abs_rel_ratio: r.abs_rel / clean.abs_rel,
                sq_rel_ratio: r.sq_rel / clean.sq_rel,
                rmse_ratio: r.rmse / clean.rmse,
                delta1_ratio: r.delta1 / clean.delta1,
            });
        }
    }
    Ok(NoiseTable { clean, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Backbone,
    Fusion,
}

impl std::str::FromStr for AblationAxis {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(AblationAxis::Backbone),
            "fusion" => Ok(AblationAxis::Fusion),
            _ => Err(CoreError::config("axis", format!("unknown ablation axis {s:?}; expected backbone or fusion"))),
        }
    }
}

impl AblationAxis {
    /// Variant names with the model configs they produce.
    pub fn variants(self, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
        match self {
            AblationAxis::Backbone => BackboneKind::ALL
                .iter()
                .map(|&k| (k.to_string(), ModelConfig { backbone: k, ..base.clone() }))
                .collect(),
            AblationAxis::Fusion => [FusionMode::Concat, FusionMode::CrossAttention, FusionMode::Proposed]
                .iter()
                .map(|&f| (f.to_string(), ModelConfig { fusion: f, ..base.clone() }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub variant: String,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub runs: Vec<AblationRow>,
}

impl AblationTable {
    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    pub fn abs_rel(&self, variant: &str, seed: u64) -> Option<f64> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed).map(|r| r.abs_rel)
    }

    /// One row per variant holding the median over seeds.
    pub fn summary(&self) -> Vec<AblationSummary> {
        self.variants()
            .into_iter()
            .map(|v| {
                let rows: Vec<&AblationRow> = self.runs.iter().filter(|r| r.variant == v).collect();
                let med = |f: fn(&AblationRow) -> f64| median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                AblationSummary {
                    variant: v,
                    abs_rel: med(|r| r.abs_rel),
                    sq_rel: med(|r| r.sq_rel),
                    rmse: med(|r| r.rmse),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, runs: &Path, summary: &Path) -> Result<()> {
        write_rows(runs, &self.runs)?;
        write_rows(summary, &self.summary())
    }
}

/// Median; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Trains and evaluates every variant on `axis` for every seed in the config,
/// all under the same budget and data.
pub fn ablate(cfg: &RunConfig, axis: AblationAxis, train: &[SceneSample], heldout: &[SceneSample]) -> Result<AblationTable> {
    let mut runs = Vec::new();
    for (name, model_cfg) in axis.variants(&cfg.model) {
        let run_cfg = RunConfig {
            model: model_cfg,
            ..cfg.clone()
        };
        for &seed in &cfg.seeds {
            let (model, log) = train_model(&run_cfg, seed, train, None)?;
            let r = evaluate(&model, heldout, &NoiseSetting::clean(), cfg.eval_options())?;
            runs.push(AblationRow {
                variant: name.clone(),
                seed,
                abs_rel: r.abs_rel,
                sq_rel: r.sq_rel,
                rmse: r.rmse,
                final_loss: log.records.last().map_or(f64::NAN, |s| s.loss),
            });
        }
    }
    Ok(AblationTable { runs })
}

/// Writes `depth_NNNNN.pfm`, `confidence_NNNNN.pfm` and `depth_NNNNN.pgm`
/// per scene. Previews map `[d_min, d_max]` onto `[0, 255]`.
pub fn export_maps(model: &DepthModel, samples: &[SceneSample], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;
    let mut written = Vec::with_capacity(samples.len() * 3);
    no_grad(|| -> Result<()> {
        for (i, s) in samples.iter().enumerate() {
            let pred = model.forward(s)?;
            let depth = pred.depth_map()?;
            let (h, w) = (depth.height, depth.width);
            let single = |data: Vec<f64>| FloatImage {
                width: w,
                height: h,
                channels: 1,
                data,
            };
            let depth_path = out_dir.join(format!("depth_{i:05}.pfm"));
            write_pfm(&depth_path, &single(depth.values.clone()))?;
            let conf_path = out_dir.join(format!("confidence_{i:05}.pfm"));
            write_pfm(&conf_path, &single(pred.confidence.values.clone()))?;
            let pgm_path = out_dir.join(format!("depth_{i:05}.pgm"));
            let pixels = normalize_to_u8(&depth.values, model.config.d_min, model.config.d_max);
            write_pgm(&pgm_path, w, h, &pixels)?;
            written.extend([depth_path, conf_path, pgm_path]);
        }
        Ok(())
    })?;
    Ok(written)
}

/// Loads `checkpoint` into a fresh model built from `config`.
pub fn load_model(config: &ModelConfig, checkpoint: &Path) -> Result<DepthModel> {
    let model = DepthModel::new(config.clone(), 0)?;
    model.params.load(checkpoint)?;
    Ok(model)
}
