use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::{EvalOptions, SqRelConvention};
use crate::model::ModelConfig;
use crate::synth::{SceneConfig, SceneSample};

/// Every knob of a run. Loaded from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub eval_dataset: PathBuf,
    pub output_dir: PathBuf,
    pub image_width: usize,
    pub image_height: usize,
    pub n_frames: usize,
    pub seed: u64,
    /// Training seeds for ablations and multi-seed runs.
    pub seeds: Vec<u64>,
    pub epochs: usize,
    /// Hard cap on optimizer steps; 0 disables the cap.
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub noise_seed: u64,
    pub noise_all_poses: bool,
    pub sigma_rot: Vec<f64>,
    pub sigma_trans: Vec<f64>,
    pub sq_rel: SqRelConvention,
    pub max_depth: Option<f64>,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub model: ModelConfig,
    pub scene: SceneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data/train"),
            eval_dataset: PathBuf::from("data/heldout"),
            output_dir: PathBuf::from("runs/default"),
            image_width: 32,
            image_height: 32,
            n_frames: 3,
            seed: 0,
            seeds: vec![0, 1, 2],
            epochs: 10,
            max_steps: 500,
            batch_size: 1,
            lr_max: 1e-4,
            weight_decay: 0.01,
            warmup_fraction: 0.3,
            noise_seed: 0,
            noise_all_poses: false,
            sigma_rot: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            sigma_trans: vec![0.0, 0.01, 0.02, 0.05],
            sq_rel: SqRelConvention::WholeRatio,
            max_depth: None,
            train_scenes: 50,
            eval_scenes: 10,
            model: ModelConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CoreError::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Serialize(e.to_string()))
    }

    /// Writes `manifest_<command>.toml` into `dir`: the fully resolved config,
    /// loadable again with `load`, headed by a comment naming the command.
    pub fn write_manifest(&self, dir: &Path, command: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let path = dir.join(format!("manifest_{command}.toml"));
        let text = format!("# fusedepth {command}\n{}", self.to_toml()?);
        fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(CoreError::config(field, msg));
        if self.image_width == 0 || self.image_height == 0 || self.image_width % 4 != 0 || self.image_height % 4 != 0 {
            return bad("image_width", "image sides must be positive multiples of 4");
        }
        if self.n_frames < 2 {
            return bad("n_frames", "need a reference and at least one source frame");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return bad("lr_max", "must be positive and finite");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction", "must lie in (0, 1)");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed");
        }
        if self.sigma_rot.is_empty() || self.sigma_trans.is_empty() {
            return bad("sigma_rot", "noise grid must be non-empty");
        }
        if self.sigma_rot.iter().chain(&self.sigma_trans).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("sigma_rot", "noise levels must be finite and non-negative");
        }
        if self.max_depth.is_some_and(|m| !(m > 0.0)) {
            return bad("max_depth", "must be positive");
        }
        self.model.validate()?;
        self.scene.validate()?;
        if (self.scene.width, self.scene.height, self.scene.n_frames) != (self.image_width, self.image_height, self.n_frames) {
            return bad("scene", "scene width/height/n_frames must match image_width/image_height/n_frames");
        }
        if self.scene.channels != self.model.in_channels {
            return bad("model.in_channels", "must equal scene.channels");
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            sq_rel: self.sq_rel,
            max_depth: self.max_depth,
        }
    }

    /// Checks that loaded samples have the configured shape.
    pub fn check_samples(&self, samples: &[SceneSample], path: &Path) -> Result<()> {
        for (i, s) in samples.iter().enumerate() {
            let f = &s.frames[0];
            if (f.width, f.height, s.frames.len(), f.channels) != (self.image_width, self.image_height, self.n_frames, self.model.in_channels) {
                return Err(CoreError::Dataset {
                    path: path.to_path_buf(),
                    msg: format!(
                        "scene {i} is {}×{}×{} with {} frames; config expects {}×{}×{} with {}",
                        f.channels,
                        f.height,
                        f.width,
                        s.frames.len(),
                        self.model.in_channels,
                        self.image_height,
                        self.image_width,
                        self.n_frames
                    ),
                });
            }
        }
        Ok(())
    }
}
