//! Monte-Carlo DFR estimation, model curves, and their CSV files.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bound::CodeBound;
use crate::code::{keygen, sample_error, syndrome, CodeParams, ParityCheckMatrix};
use crate::decoder::{decode, DecoderConfig, PermMode};
use crate::error::{Error, Result};
use crate::model::{Composition, EnsembleModel, EnsembleParams, Rho0Variant};
use crate::numerics::HpReal;

pub const SIM_HEADER: [&str; 6] = ["t", "trials", "failures", "dfr", "ci_low", "ci_high"];
pub const MODEL_HEADER: [&str; 3] = ["t", "variant", "dfr"];

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `failures` out of `trials` at normal quantile `z`.
pub fn wilson_interval(failures: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = failures as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

/// Where the simulated key comes from.
#[derive(Clone, Debug)]
pub enum CodeSource {
    KeyFile(PathBuf),
    Generate { params: CodeParams, seed: u64 },
}

impl CodeSource {
    pub fn load(&self) -> Result<ParityCheckMatrix> {
        match self {
            CodeSource::KeyFile(path) => ParityCheckMatrix::read_json(path),
            CodeSource::Generate { params, seed } => keygen(*params, *seed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub code: CodeSource,
    pub t_values: Vec<usize>,
    pub trials: u64,
    pub decoder: DecoderConfig,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

/// Simulated failure count at one error weight.
#[derive(Clone, Debug, PartialEq)]
pub struct DfrRecord {
    pub t: usize,
    pub trials: u64,
    /// Trials with `ê ≠ e`.
    pub failures: u64,
    /// Trials ending with a nonzero syndrome (a subset of `failures`).
    pub syndrome_failures: u64,
    pub dfr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl DfrRecord {
    pub fn new(t: usize, trials: u64, failures: u64, syndrome_failures: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(failures, trials, Z95);
        DfrRecord {
            t,
            trials,
            failures,
            syndrome_failures,
            dfr: failures as f64 / trials as f64,
            ci_low,
            ci_high,
        }
    }

    /// Wilson interval at quantile `z`.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        wilson_interval(self.failures, self.trials, z)
    }
}

/// Stream selector of one trial: the error weight in the high bits, the
/// trial index in the low 40.
fn trial_stream(t: usize, trial: u64) -> u64 {
    ((t as u64) << 40) | trial
}

/// Decodes `trials` random weight-`t` errors per entry of `t_values`.
///
/// Trial `i` at weight `t` draws everything from
/// `ChaCha8Rng::seed_from_u64(master_seed)` on stream `(t << 40) | i`, so
/// totals do not depend on scheduling or on the worker count.
pub fn simulate(
    h: &ParityCheckMatrix,
    t_values: &[usize],
    trials: u64,
    config: &DecoderConfig,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<DfrRecord>> {
    if trials == 0 || trials >= 1 << 40 {
        return Err(Error::params("trials must be in [1, 2^40)"));
    }
    if t_values.is_empty() {
        return Err(Error::params("no error weights to simulate"));
    }
    if let Some(&t) = t_values.iter().find(|&&t| t > h.n()) {
        return Err(Error::params(format!("error weight {t} exceeds n = {}", h.n())));
    }
    let config = DecoderConfig::new(config.thresholds().to_vec(), config.perm_mode(), h.v())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::params(format!("cannot start worker pool: {e}")))?;
    let needs_truth = config.perm_mode() == PermMode::WorstCase;
    let base = ChaCha8Rng::seed_from_u64(master_seed);
    pool.install(|| {
        t_values
            .iter()
            .map(|&t| {
                let (failures, syndrome_failures) = (0..trials)
                    .into_par_iter()
                    .map(|i| -> Result<(u64, u64)> {
                        let mut rng = base.clone();
                        rng.set_stream(trial_stream(t, i));
                        let e = sample_error(h.n(), t, &mut rng)?;
                        let s = syndrome(h, &e)?;
                        let out = decode(h, &s, &config, &mut rng, needs_truth.then_some(&e))?;
                        Ok((u64::from(out.e_hat != e), u64::from(!out.success)))
                    })
                    .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
                Ok::<_, Error>(DfrRecord::new(t, trials, failures, syndrome_failures))
            })
            .collect()
    })
}

/// Loads the code, simulates, and writes the CSV when an output is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<DfrRecord>> {
    let h = spec.code.load()?;
    let records = simulate(&h, &spec.t_values, spec.trials, &spec.decoder, spec.master_seed, spec.workers)?;
    if let Some(path) = &spec.output {
        write_sim_csv(&records, File::create(path)?)?;
    }
    Ok(records)
}

/// Model quantity evaluated by [`model_curve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveVariant {
    /// Single iteration, random order, mean run-length approximation.
    Dfr1Avg,
    /// Single iteration, worst-case order.
    Dfr1Star,
    /// Worst-case order after the given number of iterations.
    DfrStarIter(usize),
    /// Code-specific upper bound (needs a key).
    CodeBound,
}

impl fmt::Display for CurveVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveVariant::Dfr1Avg => f.write_str("dfr1avg"),
            CurveVariant::Dfr1Star => f.write_str("dfr1star"),
            CurveVariant::DfrStarIter(k) => write!(f, "dfrstar{k}"),
            CurveVariant::CodeBound => f.write_str("codebound"),
        }
    }
}

impl FromStr for CurveVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dfr1avg" => Ok(CurveVariant::Dfr1Avg),
            "dfr1star" => Ok(CurveVariant::Dfr1Star),
            "codebound" => Ok(CurveVariant::CodeBound),
            _ => s
                .strip_prefix("dfrstar")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(CurveVariant::DfrStarIter)
                .ok_or_else(|| Error::params(format!("unknown model variant {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CurveSpec {
    /// Thresholds of length 1 are broadcast to the iteration count of
    /// [`CurveVariant::DfrStarIter`].
    pub params: EnsembleParams,
    pub precision: u32,
    pub rho0: Rho0Variant,
    pub composition: Composition,
    pub variant: CurveVariant,
}

/// One model value, with its agreement against a half-precision recomputation.
#[derive(Clone, Debug)]
pub struct ModelRecord {
    pub t: u64,
    pub variant: CurveVariant,
    pub dfr: HpReal,
    pub half_precision_rel_diff: f64,
}

impl ModelRecord {
    pub fn consistent(&self) -> bool {
        self.half_precision_rel_diff <= crate::numerics::CROSS_CHECK_TOLERANCE
    }
}

fn evaluate_curve(spec: &CurveSpec, precision: u32, t_values: &[u64], key: Option<&ParityCheckMatrix>) -> Result<Vec<HpReal>> {
    match spec.variant {
        CurveVariant::CodeBound => {
            let h = key.ok_or_else(|| Error::params("the codebound variant needs a key"))?;
            let b = *spec
                .params
                .thresholds
                .first()
                .ok_or_else(|| Error::params("no threshold given"))?;
            let mut cb = CodeBound::new(h, b, precision)?;
            t_values
                .iter()
                .map(|&t| Ok(cb.code_specific_dfr1(t)?.dfr_upper))
                .collect()
        }
        variant => {
            let mut params = spec.params.clone();
            if let CurveVariant::DfrStarIter(k) = variant {
                if params.thresholds.len() == 1 {
                    params.thresholds = vec![params.thresholds[0]; k];
                } else if params.thresholds.len() != k {
                    return Err(Error::params(format!(
                        "{} thresholds given for {k} iterations",
                        params.thresholds.len()
                    )));
                }
            } else {
                params.thresholds.truncate(1);
            }
            let model = EnsembleModel::with_variant(params, precision, spec.rho0)?;
            t_values
                .iter()
                .map(|&t| match variant {
                    CurveVariant::Dfr1Avg => model.dfr1_avg(t),
                    CurveVariant::Dfr1Star => model.dfr1_star(t),
                    _ => model.multi_iteration_dfr(t, spec.composition),
                })
                .collect()
        }
    }
}

/// Evaluates the curve at `spec.precision` and at half precision.
pub fn model_curve(spec: &CurveSpec, t_values: &[u64], key: Option<&ParityCheckMatrix>) -> Result<Vec<ModelRecord>> {
    let full = evaluate_curve(spec, spec.precision, t_values, key)?;
    let half = evaluate_curve(spec, (spec.precision / 2).max(24), t_values, key)?;
    Ok(t_values
        .iter()
        .zip(full.into_iter().zip(half))
        .map(|(&t, (dfr, h))| ModelRecord {
            t,
            variant: spec.variant,
            half_precision_rel_diff: dfr.rel_diff(&h),
            dfr,
        })
        .collect())
}

/// Shortest round-trip decimal; values below the `f64` range keep their own
/// exponent instead of printing as zero.
pub fn format_probability(x: &HpReal) -> String {
    let f = x.to_f64();
    if f == 0.0 && !x.is_zero() {
        x.to_sci_string(17)
    } else {
        format!("{f:?}")
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed(format!("{other:?}")),
    }
}

pub fn write_sim_csv<W: Write>(records: &[DfrRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(SIM_HEADER).map_err(csv_error)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.trials.to_string(),
            r.failures.to_string(),
            format!("{:?}", r.dfr),
            format!("{:?}", r.ci_low),
            format!("{:?}", r.ci_high),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_model_csv<W: Write>(records: &[ModelRecord], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(MODEL_HEADER).map_err(csv_error)?;
    for r in records {
        w.write_record([r.t.to_string(), r.variant.to_string(), format_probability(&r.dfr)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[DfrRecord], path: &Path) -> Result<()> {
    write_sim_csv(records, File::create(path)?)
}

fn read_rows<R: Read>(input: R, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found = r.headers().map_err(csv_error)?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Malformed(format!("unexpected CSV header {found:?}")));
    }
    r.records().map(|rec| rec.map_err(csv_error)).collect()
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Malformed(format!("bad field {i} in {rec:?}")))
}

/// Reads a simulation CSV. Only the six written columns are restored, so
/// `syndrome_failures` reads back as `failures`.
pub fn read_sim_csv<R: Read>(input: R) -> Result<Vec<DfrRecord>> {
    read_rows(input, &SIM_HEADER)?
        .iter()
        .map(|rec| {
            let failures = field(rec, 2)?;
            Ok(DfrRecord {
                t: field(rec, 0)?,
                trials: field(rec, 1)?,
                failures,
                syndrome_failures: failures,
                dfr: field(rec, 3)?,
                ci_low: field(rec, 4)?,
                ci_high: field(rec, 5)?,
            })
        })
        .collect()
}

/// One line of a model CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelRow {
    pub t: u64,
    pub variant: CurveVariant,
    pub dfr: f64,
}

pub fn read_model_csv<R: Read>(input: R) -> Result<Vec<ModelRow>> {
    read_rows(input, &MODEL_HEADER)?
        .iter()
        .map(|rec| {
            Ok(ModelRow {
                t: field(rec, 0)?,
                variant: rec[1].parse()?,
                dfr: field(rec, 2)?,
            })
        })
        .collect()
}
