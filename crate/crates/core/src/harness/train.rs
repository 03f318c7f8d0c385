use std::fs;
use std::path::Path;

use fusedepth_tensor::{adamw_step, AdamWConfig, LrSchedule, OptimizerState, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use crate::error::{CoreError, Result};
use crate::metrics::mae_loss;
use crate::model::DepthModel;
use crate::synth::{splitmix64, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CoreError::Serialize(format!("{}: {e}", path.display())))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| CoreError::Serialize(e.to_string()))?;
        }
        w.flush().map_err(|e| CoreError::io(path, e))
    }
}

/// Optimizer steps for `n_scenes` under the config's epoch count and cap.
pub fn planned_steps(cfg: &RunConfig, n_scenes: usize) -> usize {
    let per_epoch = n_scenes.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    if cfg.max_steps > 0 {
        total.min(cfg.max_steps)
    } else {
        total
    }
}

/// Trains a fresh model seeded with `seed`. When `out_dir` is given, writes
/// `checkpoint_epoch_NNN.bin` after every epoch, `checkpoint.bin`,
/// `model.toml` and `loss.csv`.
pub fn train_model(cfg: &RunConfig, seed: u64, train: &[SceneSample], out_dir: Option<&Path>) -> Result<(DepthModel, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CoreError::config("dataset", "training set is empty"));
    }
    let model = DepthModel::new(cfg.model.clone(), seed)?;
    let params = model.params.params().to_vec();
    let total = planned_steps(cfg, train.len());
    let schedule = LrSchedule {
        warmup_fraction: cfg.warmup_fraction,
        ..LrSchedule::new(cfg.lr_max, total)
    };
    let mut opt = OptimizerState::new(
        &params,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let text = toml::to_string(&model.config).map_err(|e| CoreError::Serialize(e.to_string()))?;
        fs::write(dir.join("model.toml"), text).map_err(|e| CoreError::io(dir.join("model.toml"), e))?;
    }
    let mut log = TrainLog::default();
    let mut step = 0;
    let mut epoch = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    while step < total {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(epoch as u64 + 1)));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if step == total {
                break;
            }
            model.params.zero_grad();
            let mut loss_sum = 0.0;
            for &i in batch {
                let s = &train[i];
                let diverged = |e: CoreError| match e {
                    CoreError::Tensor(TensorError::NonFinite { .. }) => CoreError::NonFiniteLoss { step },
                    other => other,
                };
                let pred = model.forward(s).map_err(diverged)?;
                let loss = mae_loss(&pred.depth, &pred.valid, &s.gt_depth).map_err(diverged)?.scale(1.0 / batch.len() as f64);
                let loss = loss.map_err(|_| CoreError::NonFiniteLoss { step })?;
                if !loss.item().is_finite() {
                    return Err(CoreError::NonFiniteLoss { step });
                }
                loss.backward()?;
                loss_sum += loss.item();
            }
            let lr = schedule.lr(step)?;
            adamw_step(&params, &mut opt, lr).map_err(|_| CoreError::NonFiniteLoss { step })?;
            log.records.push(StepRecord {
                step,
                epoch,
                lr,
                loss: loss_sum,
            });
            step += 1;
        }
        if let Some(dir) = out_dir {
            model.params.save(&dir.join(format!("checkpoint_epoch_{epoch:03}.bin")))?;
        }
        epoch += 1;
    }
    if let Some(dir) = out_dir {
        model.params.save(&dir.join("checkpoint.bin"))?;
        log.write_csv(&dir.join("loss.csv"))?;
    }
    Ok((model, log))
}
