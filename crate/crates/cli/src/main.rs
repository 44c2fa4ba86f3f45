use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use smokesal_cli::commands::{self, FusionWeights};
use smokesal_cli::{error_json, exit_code, report, RunConfig};
use smokesal_core::eval::{AreaRatio, Averaging};
use smokesal_core::{ErrorKind, Result};

/// Smoke saliency detection: training, inference, fusion, superpixels,
/// augmentation, evaluation and stage timing.
#[derive(Parser)]
#[command(name = "smokesal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for model.smkt, model.json, loss.csv and train.json.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write saliency PNGs and existence.json for a dataset directory.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fuse 8-bit saliency maps with a 1×1 convolution and a sigmoid.
    Fuse {
        /// Input maps in channel order, e.g. pixel-level then object-level.
        #[arg(long = "map", required = true)]
        maps: Vec<PathBuf>,
        /// Take the fusion weights from this checkpoint.
        #[arg(long, conflicts_with_all = ["weights", "bias"])]
        model: Option<PathBuf>,
        /// Comma-separated weights, one per map.
        #[arg(long, value_delimiter = ',', required_unless_present = "model")]
        weights: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        bias: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Object-level saliency map of a JSON box list.
    Objectness {
        #[arg(long)]
        boxes: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// SLIC superpixels; writes a 16-bit label PNG.
    Slic {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask for the overlap rendering.
        #[arg(long, requires = "render")]
        mask: Option<PathBuf>,
        #[arg(long, requires = "mask")]
        render: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Dataset synthesis and augmentation.
    Augment {
        #[command(subcommand)]
        op: AugmentOp,
    },
    /// Score saliency PNGs against a dataset.
    Eval {
        /// Directory of predicted maps named {image_id}.png.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the precision-recall curve here.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "micro")]
        averaging: AveragingArg,
        #[command(flatten)]
        common: Common,
    },
    /// Smoke region statistics of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "image")]
        area: AreaArg,
        #[command(flatten)]
        common: Common,
    },
    /// Mean seconds per test-time stage.
    Bench {
        #[arg(long, default_value_t = 10)]
        images: usize,
        #[arg(long, default_value_t = 192)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        /// CSV output; the table is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum AugmentOp {
    /// Generate a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Gradient-domain insertion of a masked source into a target image.
    Composite {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Top-left corner `x,y` of the source in the target.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        offset: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Hide-and-seek occlusion of the smoke region.
    Hide {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        out_mask: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Clone, Copy, ValueEnum)]
enum AreaArg {
    Image,
    Background,
}

fn resolve(c: &Common) -> Result<RunConfig> {
    RunConfig::resolve(c.config.as_deref(), c.seed)
}

// Write errors (a closed pipe) are ignored; the artifacts are already on disk.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print<T: Serialize>(value: &T) {
    emit(&serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { data, out, steps, common } => {
            let mut cfg = resolve(&common)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            print(&commands::cmd_train(&cfg, &data, &out)?);
        }
        Command::Infer { model, data, out, common } => {
            let file = commands::cmd_infer(&resolve(&common)?, &model, &data, &out)?;
            print(&file);
        }
        Command::Fuse { maps, model, weights, bias, out, common } => {
            let w = match model {
                Some(m) => FusionWeights::Model(m),
                None => FusionWeights::Explicit { weights, bias },
            };
            commands::cmd_fuse(&resolve(&common)?, &maps, &w, &out)?;
        }
        Command::Objectness { boxes, width, height, out, common } => {
            commands::cmd_objectness(&resolve(&common)?, &boxes, width, height, &out)?;
        }
        Command::Slic { image, out, mask, render, common } => {
            let r = mask.as_deref().zip(render.as_deref());
            print(&commands::cmd_slic(&resolve(&common)?, &image, &out, r)?);
        }
        Command::Augment { op } => match op {
            AugmentOp::Synth { out, common } => print(&commands::cmd_synth(&resolve(&common)?, &out)?),
            AugmentOp::Composite { source, mask, target, offset, out, common } => {
                let off = (offset[0], offset[1]);
                print(&commands::cmd_composite(&resolve(&common)?, &source, &mask, &target, off, &out)?);
            }
            AugmentOp::Hide { image, mask, out_image, out_mask, common } => {
                let visible = commands::cmd_hide(&resolve(&common)?, &image, &mask, &out_image, &out_mask)?;
                emit(&format!("{{\"visible_mask_pixels\": {visible}}}"));
            }
        },
        Command::Eval { pred, data, out, pr_csv, averaging, common } => {
            let averaging = match averaging {
                AveragingArg::Micro => Averaging::Micro,
                AveragingArg::Macro => Averaging::Macro,
            };
            let m = commands::cmd_eval(&resolve(&common)?, &pred, &data, &out, pr_csv.as_deref(), averaging)?;
            print(&m.report.aggregate);
        }
        Command::Stats { data, out, area, common } => {
            let area = match area {
                AreaArg::Image => AreaRatio::Image,
                AreaArg::Background => AreaRatio::Background,
            };
            commands::cmd_stats(&resolve(&common)?, &data, area, &out)?;
        }
        Command::Bench { images, height, width, out, common } => {
            let rows = commands::cmd_bench(&resolve(&common)?, images, [height, width], out.as_deref())?;
            let mut table = format!("{:<14} {:>14}", "stage", "mean seconds");
            for r in rows {
                table += &format!("\n{:<14} {:>14.6}", r.stage, r.mean_seconds);
            }
            emit(&table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = write!(std::io::stdout().lock(), "{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json(ErrorKind::Usage, e.to_string().trim()));
            return ExitCode::from(exit_code(ErrorKind::Usage) as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, json) = report(&err);
            eprintln!("{json}");
            ExitCode::from(code as u8)
        }
    }
}
