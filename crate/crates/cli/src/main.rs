use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fusedepth_core::backbone::BackboneKind;
use fusedepth_core::fusion::FusionMode;
use fusedepth_core::harness::{
    ablate, bench_noise, evaluate, export_maps, load_model, train_model, AblationAxis, NoiseSetting, RunConfig,
};
use fusedepth_core::model::ModelConfig;
use fusedepth_core::synth::{load_dataset, make_dataset};
use fusedepth_core::CoreError;

#[derive(Parser)]
#[command(name = "fusedepth", version, about = "Fused single/multi-view depth estimation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Write one dataset here instead of the configured train and held-out sets.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scene count for `--out`.
        #[arg(long, default_value_t = 10)]
        scenes: usize,
    },
    /// Train a model on the training dataset.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the held-out dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[arg(long, default_value_t = 0.0)]
        eval_sigma_rot: f64,
        #[arg(long, default_value_t = 0.0)]
        eval_sigma_trans: f64,
    },
    /// Evaluate a checkpoint over the pose-noise grid.
    BenchNoise {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
    },
    /// Train and compare variants along one axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// `backbone` or `fusion`.
        #[arg(long)]
        axis: AblationAxis,
    },
    /// Write depth and confidence maps for every held-out scene.
    ExportMaps {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Destination directory; defaults to `<output_dir>/maps`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CheckpointArg {
    /// Defaults to `<output_dir>/checkpoint.bin`. A `model.toml` beside it
    /// overrides the configured model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Config file plus per-key overrides.
#[derive(Args)]
struct Common {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    eval_dataset: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    backbone: Option<BackboneKind>,
    #[arg(long)]
    fusion: Option<FusionMode>,
    #[arg(long)]
    planes: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    d_min: Option<f64>,
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    noise_all_poses: bool,
    #[arg(long, value_delimiter = ',')]
    sigma_rot: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sigma_trans: Option<Vec<f64>>,
    #[arg(long)]
    scene_seed: Option<u64>,
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    eval_scenes: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$field { c.$($target).+ = v.clone(); })*
            };
        }
        set! {
            dataset => dataset, eval_dataset => eval_dataset, output_dir => output_dir,
            width => image_width, height => image_height, n_frames => n_frames,
            seed => seed, seeds => seeds, epochs => epochs, max_steps => max_steps,
            batch_size => batch_size, lr_max => lr_max, weight_decay => weight_decay,
            backbone => model.backbone, fusion => model.fusion, planes => model.planes,
            channels => model.channels, groups => model.groups, d_min => model.d_min, d_max => model.d_max,
            noise_seed => noise_seed, sigma_rot => sigma_rot, sigma_trans => sigma_trans,
            scene_seed => scene.seed, train_scenes => train_scenes, eval_scenes => eval_scenes,
        }
        set! { width => scene.width, height => scene.height, n_frames => scene.n_frames, d_min => scene.d_min, d_max => scene.d_max }
        if self.noise_all_poses {
            c.noise_all_poses = true;
        }
        c.validate()?;
        Ok(c)
    }
}

fn checkpoint_model(cfg: &RunConfig, arg: &CheckpointArg) -> Result<fusedepth_core::model::DepthModel> {
    let path = arg.checkpoint.clone().unwrap_or_else(|| cfg.output_dir.join("checkpoint.bin"));
    let beside = path.with_file_name("model.toml");
    let model_cfg = if beside.exists() {
        let text = fs::read_to_string(&beside).with_context(|| format!("reading {}", beside.display()))?;
        toml::from_str::<ModelConfig>(&text).with_context(|| format!("parsing {}", beside.display()))?
    } else {
        cfg.model.clone()
    };
    Ok(load_model(&model_cfg, &path)?)
}

fn load_checked(cfg: &RunConfig, path: &Path) -> Result<Vec<fusedepth_core::synth::SceneSample>> {
    let samples = load_dataset(path)?;
    cfg.check_samples(&samples, path)?;
    Ok(samples)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out, scenes } => {
            let cfg = common.resolve()?;
            match out {
                Some(dir) => {
                    make_dataset(&cfg.scene, scenes, &dir)?;
                    println!("wrote {scenes} scenes to {}", dir.display());
                }
                None => {
                    make_dataset(&cfg.scene, cfg.train_scenes, &cfg.dataset)?;
                    let mut held = cfg.scene.clone();
                    held.seed = cfg.scene.seed.wrapping_add(1);
                    make_dataset(&held, cfg.eval_scenes, &cfg.eval_dataset)?;
                    println!(
                        "wrote {} training scenes to {} and {} held-out scenes to {}",
                        cfg.train_scenes,
                        cfg.dataset.display(),
                        cfg.eval_scenes,
                        cfg.eval_dataset.display()
                    );
                }
            }
            cfg.write_manifest(&cfg.output_dir, "synth")?;
        }
        Command::Train { common } => {
            let cfg = common.resolve()?;
            let train = load_checked(&cfg, &cfg.dataset)?;
            cfg.write_manifest(&cfg.output_dir, "train")?;
            let (_, log) = train_model(&cfg, cfg.seed, &train, Some(&cfg.output_dir))?;
            let last = log.records.last().map_or(f64::NAN, |r| r.loss);
            println!("trained {} steps, final loss {last:.6}, outputs in {}", log.records.len(), cfg.output_dir.display());
        }
        Command::Eval {
            common,
            ckpt,
            eval_sigma_rot,
            eval_sigma_trans,
        } => {
            let cfg = common.resolve()?;
            let model = checkpoint_model(&cfg, &ckpt)?;
            let samples = load_checked(&cfg, &cfg.eval_dataset)?;
            cfg.write_manifest(&cfg.output_dir, "eval")?;
            let noise = NoiseSetting {
                sigma_rot: eval_sigma_rot,
                sigma_trans: eval_sigma_trans,
                seed: cfg.noise_seed,
                all_poses: cfg.noise_all_poses,
            };
            let report = evaluate(&model, &samples, &noise, cfg.eval_options())?;
            write_json(&cfg.output_dir.join("eval_report.json"), &report)?;
            println!(
                "abs_rel {:.6} sq_rel {:.6} rmse {:.6} delta1 {:.4} delta2 {:.4} delta3 {:.4} pixels {}",
                report.abs_rel, report.sq_rel, report.rmse, report.delta1, report.delta2, report.delta3, report.n_pixels
            );
        }
        Command::BenchNoise { common, ckpt } => {
            let cfg = common.resolve()?;
            let model = checkpoint_model(&cfg, &ckpt)?;
            let samples = load_checked(&cfg, &cfg.eval_dataset)?;
            cfg.write_manifest(&cfg.output_dir, "bench-noise")?;
            let table = bench_noise(&model, &samples, &cfg)?;
            let csv_path = cfg.output_dir.join("noise_table.csv");
            table.write_csv(&csv_path)?;
            write_json(&cfg.output_dir.join("noise_clean.json"), &table.clean)?;
            println!("sigma_rot sigma_trans abs_rel abs_rel_ratio");
            for r in &table.rows {
                println!("{:>9} {:>11} {:.6} {:.4}", r.sigma_rot, r.sigma_trans, r.abs_rel, r.abs_rel_ratio);
            }
            println!("wrote {}", csv_path.display());
        }
        Command::Ablate { common, axis } => {
            let cfg = common.resolve()?;
            let train = load_checked(&cfg, &cfg.dataset)?;
            let held = load_checked(&cfg, &cfg.eval_dataset)?;
            cfg.write_manifest(&cfg.output_dir, "ablate")?;
            let table = ablate(&cfg, axis, &train, &held)?;
            let name = match axis {
                AblationAxis::Backbone => "backbone",
                AblationAxis::Fusion => "fusion",
            };
            let summary = cfg.output_dir.join(format!("ablation_{name}.csv"));
            table.write_csv(&cfg.output_dir.join(format!("ablation_{name}_runs.csv")), &summary)?;
            println!("variant median over seeds {:?}", cfg.seeds);
            for s in table.summary() {
                println!("{:<16} abs_rel {:.6} sq_rel {:.6} rmse {:.6}", s.variant, s.abs_rel, s.sq_rel, s.rmse);
            }
            println!("wrote {}", summary.display());
        }
        Command::ExportMaps { common, ckpt, out } => {
            let cfg = common.resolve()?;
            let model = checkpoint_model(&cfg, &ckpt)?;
            let samples = load_checked(&cfg, &cfg.eval_dataset)?;
            cfg.write_manifest(&cfg.output_dir, "export-maps")?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("maps"));
            let files = export_maps(&model, &samples, &dir)?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.downcast_ref::<CoreError>().map_or("error", CoreError::category);
            eprintln!("error[{category}]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
