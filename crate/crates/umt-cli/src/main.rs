use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use umt_cli::commands::{self, EvalOptions};
use umt_cli::config::{default_config, load_config, ExperimentConfig, ModelHalf};
use umt_cli::exit_code;
use umt_core::engine::Variant;
use umt_core::synth::Direction;
use umt_core::Result;

/// Cross-domain mean-teacher detection experiments on the synthetic
/// two-domain shapes benchmark.
#[derive(Parser)]
#[command(name = "umt", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment config (TOML). Defaults apply when omitted; any key can
    /// also be overridden via UMT_* environment variables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for the invoked command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs where the command would otherwise refuse.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the five dataset splits.
    GenData,
    /// Train one variant for one seed.
    Train {
        /// Model variant (source-only, umt-s, umt-sc, umt-sca, umt).
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Dataset directory (defaults to <out_dir>/dataset).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from the latest checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (defaults to <out_dir>/dataset).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split to evaluate on.
        #[arg(long, default_value = "target_test")]
        split: String,
        /// Comma-separated ascending IoU thresholds for a sweep curve.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<f64>>,
        /// Emit the localization/classification error taxonomy.
        #[arg(long)]
        error_analysis: bool,
        /// Compare target against exact source-like translations.
        #[arg(long)]
        bias_diagnostic: bool,
        /// Write annotated detection images.
        #[arg(long)]
        dump_images: bool,
        /// Matching IoU threshold (defaults to the config value).
        #[arg(long)]
        iou_threshold: Option<f64>,
        /// Which checkpoint half to evaluate: teacher or student.
        #[arg(long, value_parser = parse_model_half)]
        model: Option<ModelHalf>,
    },
    /// Train and evaluate the full variant ladder across seeds.
    Ablation {
        /// Comma-separated seeds (defaults to the config seed list).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Apply or invert the configured domain shift over a split directory.
    Translate {
        #[arg(long)]
        input: PathBuf,
        /// apply (to target style) or invert (to source style).
        #[arg(long, value_parser = parse_direction)]
        direction: Direction,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_model_half(s: &str) -> std::result::Result<ModelHalf, String> {
    match s {
        "teacher" => Ok(ModelHalf::Teacher),
        "student" => Ok(ModelHalf::Student),
        other => Err(format!(
            "unknown model half `{other}` (expected teacher or student)"
        )),
    }
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    match s {
        "apply" => Ok(Direction::Apply),
        "invert" => Ok(Direction::Invert),
        other => Err(format!(
            "unknown direction `{other}` (expected apply or invert)"
        )),
    }
}

fn load(global: &GlobalArgs) -> Result<ExperimentConfig> {
    match &global.config {
        Some(path) => load_config(path),
        None => default_config(),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load(&cli.global)?;
    match cli.command {
        Command::GenData => {
            commands::cmd_gen_data(
                &config,
                cli.global.out.as_deref(),
                cli.global.seed,
                cli.global.force,
            )?;
        }
        Command::Train {
            variant,
            data,
            resume,
        } => {
            let variant = variant.unwrap_or(config.train.variant);
            let seed = cli.global.seed.unwrap_or_else(|| config.seeds[0]);
            let summary = commands::cmd_train(
                &config,
                variant,
                seed,
                data.as_deref(),
                cli.global.out.as_deref(),
                resume,
            )?;
            println!(
                "trained {} seed {seed}: checkpoint {}",
                variant.name(),
                summary.final_checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            sweep,
            error_analysis,
            bias_diagnostic,
            dump_images,
            iou_threshold,
            model,
        } => {
            let opts = EvalOptions {
                split,
                sweep,
                error_analysis,
                bias_diagnostic,
                dump_images,
                iou_threshold,
                model,
            };
            commands::cmd_eval(
                &config,
                &checkpoint,
                data.as_deref(),
                cli.global.out.as_deref(),
                &opts,
            )?;
        }
        Command::Ablation { seeds, data } => {
            let seeds = seeds.unwrap_or_else(|| config.seeds.clone());
            commands::cmd_ablation(&config, &seeds, data.as_deref(), cli.global.out.as_deref())?;
        }
        Command::Translate { input, direction } => {
            let out = cli.global.out.clone().ok_or_else(|| {
                umt_core::Error::config("translate requires --out for the destination directory")
            })?;
            let seed = cli.global.seed.unwrap_or(0);
            commands::cmd_translate(&config, &input, &out, direction, seed, cli.global.force)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
