use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ripbf::bound::{screen_key, Decision};
use ripbf::code::{keygen, CodeParams, ParityCheckMatrix};
use ripbf::decoder::{DecoderConfig, PermMode};
use ripbf::model::{Composition, EnsembleParams, Rho0Variant};
use ripbf::numerics::DEFAULT_PRECISION;
use ripbf::sim::{
    format_probability, model_curve, run_experiment, write_model_csv, write_sim_csv, CodeSource, CurveSpec,
    CurveVariant, DfrRecord, ExperimentSpec, ModelRecord,
};
use ripbf::Error;

/// Randomized in-place bit-flipping decoding: simulation, DFR models and
/// weak-key screening for QC-LDPC/MDPC codes.
#[derive(Parser, Debug)]
#[command(name = "ripbf", version)]
struct Cli {
    /// Mantissa bits of the high-precision arithmetic.
    #[arg(long, global = true, default_value_t = DEFAULT_PRECISION)]
    bits: u32,

    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Print the summary as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random quasi-cyclic parity-check matrix.
    Keygen {
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the decoding failure rate by Monte-Carlo simulation.
    Simulate(SimulateArgs),
    /// Evaluate the ensemble DFR model.
    Model(ModelArgs),
    /// Code-specific DFR upper bound of a key.
    Bound {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        b: u64,
        #[arg(long, value_parser = parse_range)]
        t_range: TRange,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accept or reject a key against a DFR budget.
    Screen {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        b: u64,
        #[arg(long)]
        t: u64,
        #[arg(long, allow_negative_numbers = true)]
        budget_log2: f64,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct CodeArgs {
    /// Number of circulant blocks.
    #[arg(long)]
    n0: usize,
    /// Circulant size.
    #[arg(long)]
    p: usize,
    /// Column weight.
    #[arg(long)]
    v: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    key: Option<PathBuf>,
    /// Generate the key from --n0/--p/--v/--seed.
    #[arg(long, requires_all = ["n0", "p", "v", "seed"])]
    random: bool,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    v: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_min: usize,
    #[arg(long)]
    t_max: usize,
    #[arg(long, default_value_t = 1)]
    t_step: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    itermax: usize,
    /// Per-iteration thresholds; a single value applies to every iteration.
    #[arg(long, value_delimiter = ',', required = true)]
    thresholds: Vec<usize>,
    #[arg(long, value_enum, default_value_t = PermArg::Random)]
    perm_mode: PermArg,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// Per-iteration thresholds; a single value applies to every iteration.
    #[arg(long, value_delimiter = ',', required = true)]
    b: Vec<u64>,
    #[arg(long, value_parser = parse_range)]
    t_range: TRange,
    /// dfr1avg, dfr1star or dfrstarN (N iterations).
    #[arg(long, default_value = "dfr1avg", value_parser = parse_variant)]
    variant: CurveVariant,
    /// Iteration count for dfrstarN when N is omitted from the name.
    #[arg(long)]
    itermax: Option<usize>,
    #[arg(long, value_enum, default_value_t = Rho0Arg::Consistent)]
    rho0: Rho0Arg,
    #[arg(long, value_enum, default_value_t = CompositionArg::Joint)]
    composition: CompositionArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PermArg {
    Random,
    Worst,
    Identity,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Rho0Arg {
    Consistent,
    Paper,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CompositionArg {
    Joint,
    Factorized,
}

/// Residual weights given as `a:b[:step]` or a single value.
#[derive(Clone, Debug)]
struct TRange(Vec<u64>);

fn parse_range(s: &str) -> Result<TRange, String> {
    let parts: Vec<u64> = s
        .split(':')
        .map(|x| x.trim().parse::<u64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let (lo, hi, step) = match parts[..] {
        [t] => (t, t, 1),
        [a, b] => (a, b, 1),
        [a, b, c] => (a, b, c),
        _ => return Err("expected a, a:b or a:b:step".into()),
    };
    if step == 0 || lo > hi {
        return Err("need lo <= hi and step >= 1".into());
    }
    Ok(TRange((lo..=hi).step_by(step as usize).collect()))
}

fn parse_variant(s: &str) -> Result<CurveVariant, String> {
    match s {
        "dfrstarN" => Ok(CurveVariant::DfrStarIter(0)),
        "codebound" => Err("use the bound command for code-specific bounds".into()),
        _ => s.parse().map_err(|e: Error| e.to_string()),
    }
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn broadcast<T: Copy>(values: &[T], itermax: usize) -> Result<Vec<T>, Failure> {
    match values {
        [one] => Ok(vec![*one; itermax]),
        v if v.len() == itermax => Ok(v.to_vec()),
        v => Err(usage(format!("{} thresholds given for {itermax} iterations", v.len()))),
    }
}

fn read_key(path: &Path) -> Result<ParityCheckMatrix, Failure> {
    ParityCheckMatrix::read_json(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value).map_err(Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn sim_json(records: &[DfrRecord]) -> serde_json::Value {
    records
        .iter()
        .map(|r| {
            json!({
                "t": r.t, "trials": r.trials, "failures": r.failures,
                "syndrome_failures": r.syndrome_failures,
                "dfr": r.dfr, "ci_low": r.ci_low, "ci_high": r.ci_high,
            })
        })
        .collect()
}

fn model_json(records: &[ModelRecord]) -> serde_json::Value {
    records
        .iter()
        .map(|r| json!({"t": r.t, "variant": r.variant.to_string(), "dfr": format_probability(&r.dfr)}))
        .collect()
}

fn report_model(records: &[ModelRecord], out: Option<&Path>, as_json: bool) -> Result<(), Failure> {
    for r in records.iter().filter(|r| !r.consistent()) {
        eprintln!(
            "warning: t={} {}: half-precision recomputation differs by {:e}",
            r.t, r.variant, r.half_precision_rel_diff
        );
    }
    if as_json && out.is_none() {
        return print_json(&model_json(records));
    }
    write_model_csv(records, open_output(out)?)?;
    if as_json {
        print_json(&model_json(records))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    if cli.bits < 24 {
        return Err(usage("--bits must be at least 24"));
    }
    match cli.command {
        Command::Keygen { code, seed, out } => {
            let params = CodeParams::new(code.n0, code.p, code.v)?;
            let h = keygen(params, seed)?;
            h.write_json(&out)?;
            if cli.json {
                print_json(&json!({
                    "n0": params.n0, "p": params.p, "v": params.v,
                    "n": params.n(), "r": params.r(), "w": params.w(), "seed": seed,
                }))?;
            } else {
                println!(
                    "n0={} p={} v={} n={} r={} w={} seed={seed}",
                    params.n0,
                    params.p,
                    params.v,
                    params.n(),
                    params.r(),
                    params.w()
                );
            }
        }
        Command::Simulate(a) => {
            if a.trials == 0 {
                return Err(usage("--trials must be at least 1"));
            }
            if a.t_step == 0 || a.t_min > a.t_max {
                return Err(usage("need --t-min <= --t-max and --t-step >= 1"));
            }
            let code = match a.key {
                Some(path) => CodeSource::KeyFile(path),
                None => CodeSource::Generate {
                    params: CodeParams::new(a.n0.unwrap_or(0), a.p.unwrap_or(0), a.v.unwrap_or(0))?,
                    seed: a.seed.unwrap_or(0),
                },
            };
            let h = match &code {
                CodeSource::KeyFile(path) => read_key(path)?,
                other => other.load()?,
            };
            let mode = match a.perm_mode {
                PermArg::Random => PermMode::Random,
                PermArg::Worst => PermMode::WorstCase,
                PermArg::Identity => PermMode::Identity,
            };
            let thresholds = broadcast(&a.thresholds, a.itermax)?;
            let decoder = DecoderConfig::new(thresholds, mode, h.v())?;
            let spec = ExperimentSpec {
                code,
                t_values: (a.t_min..=a.t_max).step_by(a.t_step).collect(),
                trials: a.trials,
                decoder,
                master_seed: a.master_seed,
                output: None,
                workers: cli.workers,
            };
            let records = run_experiment(&spec)?;
            for r in &records {
                eprintln!(
                    "t={} failures={}/{} dfr={:?} ci95=[{:?}, {:?}]",
                    r.t, r.failures, r.trials, r.dfr, r.ci_low, r.ci_high
                );
            }
            if !(cli.json && a.out.is_none()) {
                write_sim_csv(&records, open_output(a.out.as_deref())?)?;
            }
            if cli.json {
                print_json(&sim_json(&records))?;
            }
        }
        Command::Model(a) => {
            let variant = match (a.variant, a.itermax) {
                (CurveVariant::DfrStarIter(0), Some(k)) if k >= 1 => CurveVariant::DfrStarIter(k),
                (CurveVariant::DfrStarIter(0), _) => return Err(usage("dfrstarN needs --itermax")),
                (CurveVariant::DfrStarIter(k), Some(i)) if i != k => {
                    return Err(usage(format!("--itermax {i} contradicts variant dfrstar{k}")))
                }
                (v, _) => v,
            };
            let itermax = match variant {
                CurveVariant::DfrStarIter(k) => k,
                _ => 1,
            };
            let params = CodeParams::new(a.code.n0, a.code.p, a.code.v)?;
            let ens = EnsembleParams {
                n: params.n() as u64,
                w: params.w() as u64,
                v: params.v as u64,
                thresholds: broadcast(&a.b, itermax)?,
            };
            let spec = CurveSpec {
                params: ens,
                precision: cli.bits,
                rho0: match a.rho0 {
                    Rho0Arg::Consistent => Rho0Variant::Consistent,
                    Rho0Arg::Paper => Rho0Variant::PaperVerbatim,
                },
                composition: match a.composition {
                    CompositionArg::Joint => Composition::Joint,
                    CompositionArg::Factorized => Composition::Factorized,
                },
                variant,
            };
            let records = model_curve(&spec, &a.t_range.0, None)?;
            report_model(&records, a.out.as_deref(), cli.json)?;
        }
        Command::Bound { key, b, t_range, out } => {
            let h = read_key(&key)?;
            let spec = CurveSpec {
                params: EnsembleParams {
                    n: h.n() as u64,
                    w: (h.params().n0 * h.v()) as u64,
                    v: h.v() as u64,
                    thresholds: vec![b],
                },
                precision: cli.bits,
                rho0: Rho0Variant::Consistent,
                composition: Composition::Joint,
                variant: CurveVariant::CodeBound,
            };
            let records = model_curve(&spec, &t_range.0, Some(&h))?;
            report_model(&records, out.as_deref(), cli.json)?;
        }
        Command::Screen { key, b, t, budget_log2 } => {
            let h = read_key(&key)?;
            let report = screen_key(&h, t, b, budget_log2, cli.bits)?;
            println!("{}", report.to_json()?);
            eprintln!("screening took {:?}", report.elapsed);
            if report.decision == Decision::Reject {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
