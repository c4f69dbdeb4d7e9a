use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mrf_core::run::{run_inference, write_report, Method, Precision, RunConfig, Source};
use mrf_core::testkit::{grad_check, CheckEngine, GradCheckConfig};
use mrf_core::PairwiseKind;

#[derive(Parser)]
#[command(name = "mrf", version, about = "Message-passing energy minimization on grid MRFs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an inference method and write an energy CSV plus label maps.
    Infer(InferArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sgm,
    SgmStd,
    Isgmr,
    Trwp,
    Mf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairwiseArg {
    Potts,
    Tl,
    Tq,
    P1p2,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 4, value_parser = parse_dirs)]
    dirs: usize,
    #[arg(long, default_value_t = 1)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = PairwiseArg::Tl)]
    pairwise: PairwiseArg,
    /// Truncation for tl/tq.
    #[arg(long, default_value_t = 2.0)]
    trunc: f64,
    #[arg(long, default_value_t = 1.0)]
    p1: f64,
    #[arg(long, default_value_t = 4.0)]
    p2: f64,
    /// Constant edge weight.
    #[arg(long, default_value_t = 1.0)]
    weight: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Label count for stereo inputs.
    #[arg(long, default_value_t = 16)]
    max_disp: usize,
    /// MPCV1 cost volume used as unaries.
    #[arg(long, conflicts_with_all = ["left", "right"])]
    unary_file: Option<PathBuf>,
    #[arg(long, requires = "right")]
    left: Option<PathBuf>,
    #[arg(long, requires = "left")]
    right: Option<PathBuf>,
    /// Size of the synthetic stereo pair used when no input is given.
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    /// Repeat the full forward pass this many times and report the mean.
    #[arg(long, default_value_t = 0)]
    timing: usize,
    /// Output directory for energy.csv and the label maps.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, value_enum, default_value_t = GradEngine::Isgmr)]
    engine: GradEngine,
    #[arg(long, default_value_t = 6)]
    height: usize,
    #[arg(long, default_value_t = 6)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    labels: usize,
    #[arg(long, default_value_t = 2)]
    iters: usize,
    #[arg(long, default_value_t = 4, value_parser = parse_dirs)]
    dirs: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Relative-error threshold for success.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradEngine {
    Isgmr,
    Trwp,
}

fn parse_dirs(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(v @ (4 | 8 | 16)) => Ok(v),
        _ => Err(format!("expected 4, 8 or 16, got {s}")),
    }
}

fn infer(a: InferArgs) -> Result<()> {
    let pairwise = match a.pairwise {
        PairwiseArg::Potts => PairwiseKind::Potts,
        PairwiseArg::Tl => PairwiseKind::TruncatedLinear { tau: a.trunc },
        PairwiseArg::Tq => PairwiseKind::TruncatedQuadratic { tau: a.trunc },
        PairwiseArg::P1p2 => PairwiseKind::SgmP1P2 { p1: a.p1, p2: a.p2 },
    };
    let source = match (a.unary_file, a.left, a.right) {
        (Some(p), _, _) => Source::CostVolume(p),
        (None, Some(left), Some(right)) => Source::Stereo { left, right },
        _ => Source::Synthetic { height: a.height, width: a.width },
    };
    let cfg = RunConfig {
        method: match a.method {
            MethodArg::Sgm => Method::Sgm,
            MethodArg::SgmStd => Method::SgmStd,
            MethodArg::Isgmr => Method::Isgmr,
            MethodArg::Trwp => Method::Trwp,
            MethodArg::Mf => Method::MeanField,
        },
        connectivity: a.dirs,
        iterations: a.iters,
        pairwise,
        weight: a.weight,
        rho: a.rho,
        max_disp: a.max_disp,
        source,
        seed: a.seed,
        threads: a.threads,
        precision: match a.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
        timing_repeats: a.timing,
    };
    let report = run_inference(&cfg)?;
    write_report(&report, &a.out).with_context(|| format!("writing results to {}", a.out.display()))?;
    let last = report.rows.last().expect("at least one iteration");
    println!("iterations {} final energy {} forward_ms {:.3}", last.iteration, last.energy, last.forward_ms);
    if let Some(ms) = report.mean_forward_ms {
        println!("mean forward over {} repeats: {ms:.3} ms", cfg.timing_repeats);
    }
    Ok(())
}

fn grad(a: GradArgs) -> Result<()> {
    let cfg = GradCheckConfig {
        height: a.height,
        width: a.width,
        labels: a.labels,
        iterations: a.iters,
        connectivity: a.dirs,
        engine: match a.engine {
            GradEngine::Isgmr => CheckEngine::Isgmr,
            GradEngine::Trwp => CheckEngine::Trwp { rho: a.rho },
        },
        step: a.step,
        ..GradCheckConfig::default()
    };
    let r = grad_check(&cfg, a.seed)?;
    println!(
        "max relative error {:.3e} over {} coordinates (worst {} #{}), {} tie resamples",
        r.max_rel_error, r.coordinates, r.worst.0, r.worst.1, r.resamples
    );
    if r.max_rel_error >= a.tol {
        bail!("relative error {:.3e} exceeds {:.1e}", r.max_rel_error, a.tol);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Infer(a) => infer(a),
        Command::GradCheck(a) => grad(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
