//! `seqsens`: sensitivity bounds, sweeps and worst-case distributions from
//! the command line.
//!
//! Exit codes: 0 on success, 1 for input errors, 2 for computation failures.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqsens::bounds::{BoundOptions, Model, Scheme, SensitivitySpec};
use seqsens::config::resolve_config;
use seqsens::study::{emit_implied_distribution, run_bounds, run_sweep, write_bounds_csv, Backend, SweepRequest, DEFAULT_NODES};
use seqsens::validate::run_validation;
use seqsens::{Direction, Error, TreatmentStrategy};

#[derive(Parser)]
#[command(name = "seqsens", version, about = "Sensitivity bounds under sequential unmeasured confounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bounds at explicit per-period parameters.
    Bounds(BoundsArgs),
    /// Bounds over a grid of common parameter values.
    Sweep(SweepArgs),
    /// Worst-case distributions attaining the sharp primary bound.
    ImpliedDist(ImpliedArgs),
    /// Oracle agreement and property checks.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Built-in id (C1..C4) or path to a JSON law document.
    #[arg(long, default_value = "C1")]
    config: String,
    /// Treatment strategy such as `11`; all-treat by default.
    #[arg(long)]
    strategy: Option<String>,
    /// Quadrature nodes per Gaussian cell.
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
    /// Use an empirical tree from this many simulated trajectories.
    #[arg(long)]
    mc: Option<usize>,
    /// Seed for `--mc`.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock runtimes (makes output nondeterministic).
    #[arg(long)]
    timing: bool,
    /// Use coordinate descent instead of the exact nested scheme.
    #[arg(long)]
    coordinate_descent: bool,
    /// Allow more periods than the default cap.
    #[arg(long, default_value_t = seqsens::bounds::DEFAULT_MAX_PERIODS)]
    max_periods: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Upper,
    Lower,
    Both,
}

impl DirectionArg {
    fn expand(self) -> Vec<Direction> {
        match self {
            DirectionArg::Upper => vec![Direction::Upper],
            DirectionArg::Lower => vec![Direction::Lower],
            DirectionArg::Both => vec![Direction::Upper, Direction::Lower],
        }
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    common: Common,
    /// Per-period parameters for the primary and joint models, e.g. `2,3`;
    /// a single value applies to every period.
    #[arg(long, default_value = "1")]
    lambda: String,
    /// Covariate-channel parameters of the product models; the last must be 1.
    #[arg(long)]
    lambda_l: Option<String>,
    /// Outcome-channel parameters of the product models.
    #[arg(long)]
    lambda_y: Option<String>,
    /// Comma-separated models: primary, joint, prod_v1, prod_v2, prod.
    #[arg(long, default_value = "primary")]
    model: String,
    #[arg(long, value_enum, default_value = "both")]
    direction: DirectionArg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated grid of common parameter values.
    #[arg(long, default_value = "1,1.25,1.5,2,2.5,3,4,5")]
    lambda: String,
    /// Comma-separated models: primary, joint, prod_v1, prod_v2, prod.
    #[arg(long, default_value = "primary,prod_v1,prod_v2,prod")]
    model: String,
    #[arg(long, value_enum, default_value = "upper")]
    direction: DirectionArg,
}

#[derive(Args)]
struct ImpliedArgs {
    #[command(flatten)]
    common: Common,
    /// Per-period parameters, e.g. `2` or `2,3`.
    #[arg(long, default_value = "2")]
    lambda: String,
    #[arg(long, value_enum, default_value = "upper")]
    direction: DirectionArg,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_NODES)]
    nodes: usize,
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| Error::InvalidParameter(format!("{what}: `{p}` is not a number")))
        })
        .collect()
}

fn parse_models(s: &str) -> Result<Vec<Model>, Error> {
    s.split(',').map(|m| m.trim().parse()).collect()
}

fn per_period(values: Vec<f64>, periods: usize, what: &str) -> Result<Vec<f64>, Error> {
    match values.len() {
        1 => Ok(vec![values[0]; periods]),
        n if n == periods => Ok(values),
        n => Err(Error::InvalidParameter(format!("{what}: {n} values for {periods} periods"))),
    }
}

struct Setup {
    id: String,
    law: seqsens::ObservedLaw,
    strategy: TreatmentStrategy,
    backend: Backend,
    options: BoundOptions,
}

fn setup(c: &Common) -> Result<Setup, Error> {
    let (id, law) = resolve_config(&c.config)?;
    let strategy = match &c.strategy {
        Some(s) => s.parse()?,
        None => TreatmentStrategy::always_treat(law.periods())?,
    };
    let backend = match c.mc {
        Some(n) => Backend::MonteCarlo { n, seed: c.seed },
        None => Backend::Quadrature { nodes: c.nodes },
    };
    let scheme = if c.coordinate_descent { Scheme::CoordinateDescent } else { Scheme::Nested };
    let options = BoundOptions { scheme, max_periods: c.max_periods, ..BoundOptions::default() };
    Ok(Setup { id, law, strategy, backend, options })
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Writes records and reports failures; `Ok(false)` when any record failed.
fn finish(records: &[seqsens::study::RunRecord], out: &Option<PathBuf>) -> Result<bool, Error> {
    write_bounds_csv(records, output(out)?)?;
    let mut ok = true;
    for r in records {
        if let Err(e) = &r.outcome {
            ok = false;
            eprintln!("{} {} {} {}: {e}", r.config, r.model, r.lambda_spec, r.direction.as_str());
        }
    }
    Ok(ok)
}

fn bounds(a: &BoundsArgs) -> Result<bool, Error> {
    let s = setup(&a.common)?;
    let k = s.law.periods();
    let mut specs = Vec::new();
    for model in parse_models(&a.model)? {
        let spec = match model {
            Model::Primary => SensitivitySpec::primary(per_period(parse_list(&a.lambda, "--lambda")?, k, "--lambda")?)?,
            Model::Joint => SensitivitySpec::joint(per_period(parse_list(&a.lambda, "--lambda")?, k, "--lambda")?)?,
            Model::ProdV1 | Model::ProdV2 | Model::Prod => {
                let (Some(l), Some(y)) = (&a.lambda_l, &a.lambda_y) else {
                    return Err(Error::InvalidParameter("product models need --lambda-l and --lambda-y".into()));
                };
                SensitivitySpec::product(
                    per_period(parse_list(l, "--lambda-l")?, k, "--lambda-l")?,
                    per_period(parse_list(y, "--lambda-y")?, k, "--lambda-y")?,
                )?
            }
        };
        specs.push((model, spec));
    }
    let records =
        run_bounds(&s.id, &s.law, &s.strategy, &specs, &a.direction.expand(), s.backend, &s.options, a.common.timing)?;
    finish(&records, &a.common.out)
}

fn sweep(a: &SweepArgs) -> Result<bool, Error> {
    let s = setup(&a.common)?;
    let req = SweepRequest {
        config: s.id,
        law: s.law,
        strategy: s.strategy,
        models: parse_models(&a.model)?,
        grid: parse_list(&a.lambda, "--lambda")?,
        directions: a.direction.expand(),
        backend: s.backend,
        options: s.options,
        timing: a.common.timing,
    };
    finish(&run_sweep(&req)?, &a.common.out)
}

fn implied(a: &ImpliedArgs) -> Result<bool, Error> {
    if a.common.out.is_some() && matches!(a.direction, DirectionArg::Both) {
        return Err(Error::InvalidParameter("--direction both cannot share one --out file".into()));
    }
    let s = setup(&a.common)?;
    let lambdas = per_period(parse_list(&a.lambda, "--lambda")?, s.law.periods(), "--lambda")?;
    let tree = s.backend.build_tree(&s.law, &s.strategy)?;
    let mut ok = true;
    for d in a.direction.expand() {
        let summary = emit_implied_distribution(&tree, &lambdas, d, output(&a.common.out)?)?;
        eprintln!(
            "{} {}: bound {} marginal mean {} largest normalization residual {:.2e}",
            s.id,
            d.as_str(),
            summary.bound,
            summary.marginal_mean,
            summary.max_residual
        );
        ok &= (summary.bound - summary.marginal_mean).abs() <= 1e-6 * (1.0 + summary.bound.abs());
    }
    Ok(ok)
}

fn validate(a: &ValidateArgs) -> Result<bool, Error> {
    let checks = run_validation(a.seed, a.nodes)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Bounds(a) => bounds(a),
        Command::Sweep(a) => sweep(a),
        Command::ImpliedDist(a) => implied(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
