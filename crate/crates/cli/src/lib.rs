//! `focusclf`: the pipeline as subcommands. Exit codes: 0 success, 1 input
//! or configuration error, 2 numeric or internal error.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use focusclf_core::error::Result;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "focusclf",
    about = "Lesion patch classification: CNN training, wELM feature classification, CAM saliency and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct CommonOpts {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; all stage randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Bound on fold/sweep parallelism (default: FOCUSCLF_JOBS or all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic dataset (volumes + manifest).
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 320)]
        lesions: usize,
        /// Fraction of lesions labeled malignant.
        #[arg(long, default_value_t = 0.25)]
        ratio: f64,
        #[arg(long, default_value_t = 6)]
        depth: usize,
        #[arg(long, default_value_t = 48)]
        height: usize,
        #[arg(long, default_value_t = 48)]
        width: usize,
        #[arg(long, default_value_t = 0.04)]
        noise: f64,
        /// Put the class signal only on the first channel (T2W).
        #[arg(long, default_value_t = false)]
        t2w_only_signal: bool,
    },
    /// Extract original patches into a patch bundle.
    ExtractPatches {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        /// Comma-separated modality names in channel order.
        #[arg(long)]
        modalities: Option<String>,
    },
    /// Apply an augmentation policy and write the patch bundle.
    Augment {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        modalities: Option<String>,
        /// Augmentation policy: 1 or 2.
        #[arg(long)]
        policy: Option<u8>,
    },
    /// Stratified k-fold cross-validation training.
    CvTrain {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        policy: Option<u8>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        modalities: Option<String>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        kernel_size: Option<usize>,
    },
    /// Class probabilities for every patch in a bundle.
    Predict {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        patches: PathBuf,
    },
    /// Intermediate-layer feature extraction to CSV.
    Features {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        /// Tap combination, e.g. C1+C4 or FC2.
        #[arg(long, default_value = "C1+C4")]
        taps: String,
        /// channel-average or flatten.
        #[arg(long, default_value = "channel-average")]
        pooling: String,
    },
    /// Weighted kernel ELM: per-fold grid search on a feature CSV, or a
    /// per-tap table from a checkpoint.
    Welm {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        folds_file: PathBuf,
        /// Comma-separated C grid (defaults to the built-in log-2 grid).
        #[arg(long)]
        grid_c: Option<String>,
        #[arg(long)]
        grid_gamma: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        patches: Option<PathBuf>,
        /// Validation fold for tap-table mode.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Comma-separated tap sets, e.g. "C1,C4,C1+C4".
        #[arg(long)]
        tap_sets: Option<String>,
        #[arg(long, default_value = "channel-average")]
        pooling: String,
    },
    /// Build, fine-tune and render class activation maps.
    Cam {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train_patches: PathBuf,
        #[arg(long)]
        render_patches: Option<PathBuf>,
        /// malignant, benign or both.
        #[arg(long, default_value = "malignant")]
        class: String,
        #[arg(long, default_value_t = 0.5)]
        alpha: f32,
        #[arg(long, default_value_t = 0)]
        max_epochs: usize,
        #[arg(long, default_value_t = false)]
        full_finetune: bool,
        /// Also export per-layer channel-mean feature maps.
        #[arg(long, default_value_t = false)]
        avg_feature_maps: bool,
    },
    /// Exact t-SNE embedding of a feature CSV.
    Tsne {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Confusion metrics (and AUC when scores are present) from CSVs.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Train one model per modality combination on a shared split.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Comma-separated combos of +-joined modalities,
        /// e.g. "T2W,ADC,T2W+ADC".
        #[arg(long)]
        combos: Option<String>,
        /// Validation fold index.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        policy: Option<u8>,
        #[arg(long)]
        patch_size: Option<usize>,
    },
}

fn env_jobs() -> Option<usize> {
    std::env::var("FOCUSCLF_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
}

fn policy_from_flag(flag: Option<u8>) -> Result<Option<focusclf_core::data::AugmentPolicy>> {
    match flag {
        None => Ok(None),
        Some(1) => Ok(Some(focusclf_core::data::AugmentPolicy::Policy1)),
        Some(2) => Ok(Some(focusclf_core::data::AugmentPolicy::Policy2)),
        Some(other) => Err(focusclf_core::Error::Input(format!(
            "augmentation policy must be 1 or 2, got {}",
            other
        ))),
    }
}

/// Base configuration: the file named by --config, or defaults; flags win.
fn base_config(common: &CommonOpts) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    if let Some(jobs) = common.jobs.or_else(env_jobs) {
        config.jobs = Some(jobs);
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            lesions,
            ratio,
            depth,
            height,
            width,
            noise,
            t2w_only_signal,
        } => {
            let config = base_config(&common)?;
            let args = commands::SynthArgs {
                out: config.require_out()?.to_path_buf(),
                lesions,
                ratio,
                seed: config.require_seed()?,
                depth,
                height,
                width,
                noise,
                t2w_only_signal,
            };
            commands::cmd_synth(&args)
        }
        Command::ExtractPatches {
            common,
            manifest,
            data_root,
            size,
            modalities,
        } => {
            let mut config = base_config(&common)?;
            if let Some(m) = manifest {
                config.manifest = Some(m);
            }
            if let Some(r) = data_root {
                config.data_root = Some(r);
            }
            if let Some(s) = size {
                config.patch_size = s;
            }
            if let Some(m) = modalities {
                config.modalities = m.split(',').map(|s| s.trim().to_string()).collect();
            }
            commands::cmd_extract_patches(&config)
        }
        Command::Augment {
            common,
            manifest,
            data_root,
            size,
            modalities,
            policy,
        } => {
            let mut config = base_config(&common)?;
            if let Some(m) = manifest {
                config.manifest = Some(m);
            }
            if let Some(r) = data_root {
                config.data_root = Some(r);
            }
            if let Some(s) = size {
                config.patch_size = s;
            }
            if let Some(m) = modalities {
                config.modalities = m.split(',').map(|s| s.trim().to_string()).collect();
            }
            if let Some(p) = policy_from_flag(policy)? {
                config.augment_policy = p;
            }
            commands::cmd_augment(&config)
        }
        Command::CvTrain {
            common,
            manifest,
            data_root,
            folds,
            policy,
            epochs,
            batch_size,
            patch_size,
            modalities,
            learning_rate,
            kernel_size,
        } => {
            let mut config = base_config(&common)?;
            if let Some(m) = manifest {
                config.manifest = Some(m);
            }
            if let Some(r) = data_root {
                config.data_root = Some(r);
            }
            if let Some(k) = folds {
                config.folds = k;
            }
            if let Some(p) = policy_from_flag(policy)? {
                config.augment_policy = p;
            }
            if let Some(e) = epochs {
                config.model.epochs = e;
            }
            if let Some(b) = batch_size {
                config.model.batch_size = b;
            }
            if let Some(s) = patch_size {
                config.patch_size = s;
            }
            if let Some(m) = modalities {
                config.modalities = m.split(',').map(|s| s.trim().to_string()).collect();
            }
            if let Some(lr) = learning_rate {
                config.model.optimizer.lr = lr;
            }
            if let Some(k) = kernel_size {
                config.model.kernel_size = k;
            }
            commands::cmd_cv_train(&config)
        }
        Command::Predict {
            common,
            checkpoint,
            patches,
        } => {
            let config = base_config(&common)?;
            commands::cmd_predict(&commands::PredictArgs {
                checkpoint,
                patches,
                out: config.require_out()?.to_path_buf(),
            })
        }
        Command::Features {
            common,
            checkpoint,
            patches,
            taps,
            pooling,
        } => {
            let config = base_config(&common)?;
            commands::cmd_features(&commands::FeaturesArgs {
                checkpoint,
                patches,
                taps,
                pooling,
                out: config.require_out()?.to_path_buf(),
            })
        }
        Command::Welm {
            common,
            features,
            folds_file,
            grid_c,
            grid_gamma,
            checkpoint,
            patches,
            fold,
            tap_sets,
            pooling,
        } => {
            let config = base_config(&common)?;
            commands::cmd_welm(&commands::WelmArgs {
                features,
                folds: folds_file,
                out: config.require_out()?.to_path_buf(),
                grid_c,
                grid_gamma,
                checkpoint,
                patches,
                fold,
                tap_sets,
                pooling,
            })
        }
        Command::Cam {
            common,
            checkpoint,
            train_patches,
            render_patches,
            class,
            alpha,
            max_epochs,
            full_finetune,
            avg_feature_maps,
        } => {
            let config = base_config(&common)?;
            commands::cmd_cam(&commands::CamArgs {
                checkpoint,
                train_patches,
                render_patches,
                out: config.require_out()?.to_path_buf(),
                class,
                alpha,
                max_epochs,
                full_finetune,
                avg_feature_maps,
            })
        }
        Command::Tsne {
            common,
            features,
            perplexity,
            iterations,
        } => {
            let config = base_config(&common)?;
            commands::cmd_tsne(
                &commands::TsneArgs {
                    features,
                    out: config.require_out()?.to_path_buf(),
                    perplexity,
                    iterations,
                    seed: config.seed,
                },
                &config,
            )
        }
        Command::Eval {
            common,
            pred,
            labels,
        } => {
            let config = base_config(&common)?;
            commands::cmd_eval(&commands::EvalArgs {
                pred,
                labels,
                out: config.out.clone(),
            })
        }
        Command::Sweep {
            common,
            manifest,
            data_root,
            combos,
            fold,
            folds,
            epochs,
            policy,
            patch_size,
        } => {
            let mut config = base_config(&common)?;
            if let Some(m) = manifest {
                config.manifest = Some(m);
            }
            if let Some(r) = data_root {
                config.data_root = Some(r);
            }
            if let Some(k) = folds {
                config.folds = k;
            }
            if let Some(e) = epochs {
                config.model.epochs = e;
            }
            if let Some(p) = policy_from_flag(policy)? {
                config.augment_policy = p;
            }
            if let Some(s) = patch_size {
                config.patch_size = s;
            }
            commands::cmd_sweep(&commands::SweepArgs { combos, fold }, &config)
        }
    }
}

/// Parse and run; returns the process exit code. `args[0]` is the program
/// name.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{}", err.render());
                    0
                }
                _ => {
                    eprint!("{}", err.render());
                    1
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {}", err);
            err.exit_code()
        }
    }
}

/// Convenience for tests: run with string literals.
pub fn run_args(args: &[&str]) -> i32 {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    run(&owned)
}
