//! `factoformer`: pre-training, fine-tuning, evaluation, classification maps,
//! cost profiling and ablation grids from JSON run configurations.
//!
//! Exit status is 0 on success, 2 for configuration and input errors and 3
//! when training diverges.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use factoformer::data::synthetic::SceneConfig;
use factoformer::tokenizer::TokenMode;

use commands::{Grid, Init};
use config::RunConfig;
use run::{invalid, CliResult};

#[derive(Parser, Debug)]
#[command(name = "factoformer", version, about = "Factorized spectral-spatial transformers for hyperspectral images")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration, or the manifest of an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Patch size S.
    #[arg(long, global = true)]
    patch: Option<usize>,
    /// Adjacent bands per spectral token.
    #[arg(long, global = true)]
    group: Option<usize>,
    /// Scene name under the data root.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Directory holding one folder per scene [default: $FACTOFORMER_DATA].
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Spectral,
    Spatial,
    Joint,
}

impl From<ModeArg> for TokenMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Spectral => TokenMode::Spectral,
            ModeArg::Spatial => TokenMode::Spatial,
            ModeArg::Joint => TokenMode::Joint,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GridArg {
    Ratio,
    Patch,
    Group,
    DataFraction,
}

impl From<GridArg> for Grid {
    fn from(g: GridArg) -> Self {
        match g {
            GridArg::Ratio => Grid::Ratio,
            GridArg::Patch => Grid::Patch,
            GridArg::Group => Grid::Group,
            GridArg::DataFraction => Grid::DataFraction,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Masked-reconstruction pre-training of one encoder on unlabeled pixels.
    Pretrain {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Masking ratio for this encoder.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Supervised end-to-end training on the split's training pixels, then evaluation.
    #[command(group(ArgGroup::new("init").required(true).args(["scratch", "from_pretrained"])))]
    Finetune {
        /// Random initialization of both encoders.
        #[arg(long)]
        scratch: bool,
        /// Spectral and spatial pre-training checkpoints.
        #[arg(long, num_args = 2, value_names = ["SPECTRAL", "SPATIAL"])]
        from_pretrained: Option<Vec<PathBuf>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Metrics of a trained model on the test pixels.
    Evaluate {
        /// Model checkpoint [default: <out>/checkpoints/model.ckpt].
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Classification map as a portable pixmap with a palette sidecar.
    ExportMap {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also classify unlabeled pixels.
        #[arg(long)]
        all_pixels: bool,
    },
    /// Parameter counts, analytic cost and measured step times.
    Profile {
        /// Samples timed per network.
        #[arg(long, default_value_t = 4)]
        samples: usize,
        /// Band count when no scene is available.
        #[arg(long, default_value_t = 200)]
        bands: usize,
        /// Class count when no scene is available.
        #[arg(long, default_value_t = 16)]
        classes: usize,
    },
    /// Trains and evaluates every setting of a grid; writes a CSV.
    Ablate {
        #[arg(long, value_enum)]
        grid: GridArg,
        /// Grid values [default: the standard grid]; the ratio grid uses them on both axes.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Skip pre-training.
        #[arg(long)]
        scratch: bool,
        #[arg(long)]
        pretrain_epochs: Option<usize>,
        #[arg(long)]
        finetune_epochs: Option<usize>,
    },
    /// Writes a generated labeled scene with a split to `<out>/<dataset>/`.
    Synth {
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Training pixels per class in the split file.
        #[arg(long, default_value_t = 10)]
        per_class: usize,
    },
}

fn effective_config(common: &Common, tweak: impl FnOnce(&mut RunConfig)) -> CliResult<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(patch) = common.patch {
        config.patch_size = patch;
    }
    if let Some(group) = common.group {
        config.band_group = group;
    }
    if let Some(name) = &common.dataset {
        config.dataset.name = name.clone();
    }
    if let Some(root) = &common.data_root {
        config.dataset.root = Some(root.clone());
    }
    config.resolve_defaults();
    tweak(&mut config);
    config.validate()?;
    Ok(config)
}

fn set_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<()> {
    set_threads(cli.common.threads)?;
    let common = &cli.common;
    match cli.command {
        Command::Pretrain { mode, ratio, epochs } => {
            let mode = TokenMode::from(mode);
            let config = effective_config(common, |c| {
                if let Some(r) = ratio {
                    c.mask_ratio.set(mode, r);
                }
                if let Some(e) = epochs {
                    c.pretrain.epochs = e;
                }
            })?;
            commands::cmd_pretrain(&config, mode)
        }
        Command::Finetune {
            scratch,
            from_pretrained,
            epochs,
        } => {
            let config = effective_config(common, |c| {
                if let (Some(e), Some(f)) = (epochs, c.finetune.as_mut()) {
                    f.epochs = e;
                }
            })?;
            let init = match (scratch, from_pretrained) {
                (_, Some(paths)) => Init::Pretrained {
                    spectral: paths[0].clone(),
                    spatial: paths[1].clone(),
                },
                _ => Init::Scratch,
            };
            commands::cmd_finetune(&config, &init)
        }
        Command::Evaluate { model } => commands::cmd_evaluate(&effective_config(common, |_| {})?, &model),
        Command::ExportMap { model, all_pixels } => {
            commands::cmd_export_map(&effective_config(common, |_| {})?, &model, all_pixels)
        }
        Command::Profile { samples, bands, classes } => {
            commands::cmd_profile(&effective_config(common, |_| {})?, samples, bands, classes)
        }
        Command::Ablate {
            grid,
            values,
            scratch,
            pretrain_epochs,
            finetune_epochs,
        } => {
            let config = effective_config(common, |c| {
                if let Some(e) = pretrain_epochs {
                    c.pretrain.epochs = e;
                }
                if let (Some(e), Some(f)) = (finetune_epochs, c.finetune.as_mut()) {
                    f.epochs = e;
                }
            })?;
            commands::cmd_ablate(&config, grid.into(), &values, scratch)
        }
        Command::Synth {
            size,
            bands,
            classes,
            noise,
            per_class,
        } => {
            if size == 0 || bands == 0 || classes == 0 {
                return Err(invalid("size, bands and classes must be positive"));
            }
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            let name = common.dataset.clone().unwrap_or_else(|| "synthetic".into());
            let scene = SceneConfig {
                height: size,
                width: size,
                bands,
                classes,
                noise,
                seed: common.seed.unwrap_or(0),
                ..SceneConfig::default()
            };
            commands::cmd_synth(&dir, &name, &scene, per_class)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
