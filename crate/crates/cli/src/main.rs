mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pmdice::LossKind;

use crate::exit::Failure;

#[derive(Parser, Debug)]
#[command(name = "pmdice", version, about = "Pixel-wise modulated Dice loss toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a loss on a probability field and a label map.
    Loss(LossArgs),
    /// Score a prediction against a label map.
    Eval(EvalArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write synthetic scenes as TNSR and PGM files.
    Synth(RunArgs),
    /// Train the linear per-pixel model.
    Train(RunArgs),
    /// Train pm_dice over a grid of focusing parameters and seeds.
    Sweep(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct LossOptions {
    #[arg(long, value_parser = parse_kind)]
    loss: LossKind,
    /// Focusing parameter (focal_ce, pm_dice).
    #[arg(long, conflicts_with = "gamma_class")]
    gamma: Option<f64>,
    /// Per-class focusing parameters for pm_dice, e.g. `0=1,1=2`.
    #[arg(long, value_parser = parse_gamma_class)]
    gamma_class: Option<GammaClass>,
    /// Percentage of pixels kept by the top-K losses.
    #[arg(long = "k")]
    k_percent: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
struct GammaClass(Vec<(usize, f64)>);

#[derive(Args, Debug)]
struct LossArgs {
    #[command(flatten)]
    loss: LossOptions,
    /// Probability field `[C, spatial...]` (TNSR, f32).
    #[arg(long)]
    pred: PathBuf,
    /// Label map (TNSR or PGM).
    #[arg(long)]
    label: PathBuf,
    /// Second loss of a weighted sum.
    #[arg(long, value_parser = parse_kind)]
    compound: Option<LossKind>,
    #[arg(long, default_value_t = 1.0, requires = "compound")]
    w1: f64,
    #[arg(long, default_value_t = 1.0, requires = "compound")]
    w2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Probability field (TNSR f32) or hard label map (TNSR u8 or PGM).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    label: PathBuf,
    /// NSD tolerance in pixels.
    #[arg(long, default_value_t = pmdice::metrics::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    loss: LossOptions,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Differentiate through the modulating term and resampling masks too.
    #[arg(long)]
    unfrozen: bool,
    /// Use the fixed four-pixel detach-witness instance instead of random ones.
    #[arg(long)]
    witness: bool,
    #[arg(long, default_value_t = pmdice::verification::DEFAULT_STEP)]
    step: f64,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kind(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = LossKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown loss kind `{s}` (expected one of {})", names.join(", "))
    })
}

fn parse_gamma_class(s: &str) -> Result<GammaClass, String> {
    s.split(',')
        .map(|pair| {
            let (c, g) = pair.split_once('=').ok_or_else(|| format!("`{pair}` is not class=gamma"))?;
            let c = c.trim().parse().map_err(|_| format!("bad class index `{c}`"))?;
            let g = g.trim().parse().map_err(|_| format!("bad gamma `{g}`"))?;
            Ok((c, g))
        })
        .collect::<Result<_, _>>()
        .map(GammaClass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(exit::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Loss(a) => commands::loss(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            eprintln!("pmdice: {message}");
            ExitCode::from(code)
        }
    }
}
