//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ripbf::bound::{count_subsets, CodeBound, SubsetCountQuery};
use ripbf::code::{gamma_representative_rows, keygen, CodeParams, GammaRow, ParityCheckMatrix};
use ripbf::decoder::{DecoderConfig, PermMode};
use ripbf::model::*;
use ripbf::numerics::{ratio_to_real, HpReal};
use ripbf::sim::{model_curve, simulate, CurveSpec, CurveVariant, DfrRecord};

const BITS: u32 = 256;
const TRIALS: u64 = 10_000;
const KEY_SEED: u64 = 2024;
const B: u64 = 25;

/// Plotted averages at n0=2, p=4801, v=45, b=25.
const REFERENCE_AVG: [(u64, f64); 6] = [
    (20, 1.4729e-6),
    (30, 7.8208e-4),
    (40, 3.4785e-2),
    (50, 0.35956),
    (60, 0.92741),
    (70, 0.99993),
];

type Outcome = Result<String, String>;
type Oracle = fn() -> Result<usize, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn paper_params(itermax: usize) -> EnsembleParams {
    EnsembleParams::qc(2, 4801, 45, B, itermax)
}

fn curve(variant: CurveVariant, ts: &[u64], key: Option<&ParityCheckMatrix>) -> Vec<f64> {
    let spec = CurveSpec {
        params: paper_params(1),
        precision: BITS,
        rho0: Rho0Variant::Consistent,
        composition: Composition::Joint,
        variant,
    };
    model_curve(&spec, ts, key)
        .expect("model curve")
        .iter()
        .map(|r| r.dfr.to_f64())
        .collect()
}

struct Fixture {
    key: ParityCheckMatrix,
    random: Vec<DfrRecord>,
    worst: Vec<DfrRecord>,
}

impl Fixture {
    fn random_at(&self, t: usize) -> &DfrRecord {
        self.random.iter().find(|r| r.t == t).expect("random record")
    }

    fn worst_at(&self, t: usize) -> &DfrRecord {
        self.worst.iter().find(|r| r.t == t).expect("worst-case record")
    }
}

fn run(key: &ParityCheckMatrix, ts: &[usize], mode: PermMode, seed: u64) -> Vec<DfrRecord> {
    let cfg = DecoderConfig::uniform(1, B as usize, mode, key.v()).unwrap();
    simulate(key, ts, TRIALS, &cfg, seed, None).expect("simulation")
}

/// Two-proportion z statistic of `a` minus `b` with pooled variance.
fn two_proportion_z(a: &DfrRecord, b: &DfrRecord) -> f64 {
    let (na, nb) = (a.trials as f64, b.trials as f64);
    let pooled = (a.failures + b.failures) as f64 / (na + nb);
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return 0.0;
    }
    (a.dfr - b.dfr) / se
}

fn criterion_1() -> Outcome {
    let ts: Vec<u64> = REFERENCE_AVG.iter().map(|&(t, _)| t).collect();
    let start = Instant::now();
    let got = curve(CurveVariant::Dfr1Avg, &ts, None);
    let elapsed = start.elapsed();
    let mut worst = 0f64;
    for (&(_, want), &g) in REFERENCE_AVG.iter().zip(&got) {
        worst = worst.max((g - want).abs() / want);
    }
    let monotone = got.windows(2).all(|w| w[0] <= w[1]);
    check(
        worst <= 0.05 && monotone && elapsed < Duration::from_secs(60),
        format!("max relative error {worst:.3e}, monotone {monotone}, {elapsed:.2?}"),
    )
}

fn criterion_2(fx: &Fixture, elapsed: Duration) -> Outcome {
    let ts = [45u64, 50, 55, 60];
    let model = curve(CurveVariant::Dfr1Avg, &ts, None);
    let mut detail = Vec::new();
    let mut ok = elapsed < Duration::from_secs(300);
    for (&t, &m) in ts.iter().zip(&model) {
        let r = fx.random_at(t as usize);
        let (lo, hi) = r.interval(3.0);
        ok &= lo <= m && m <= hi;
        detail.push(format!("t={t} sim {:.4} [{lo:.4}, {hi:.4}] model {m:.4}", r.dfr));
    }
    detail.push(format!("{elapsed:.2?}"));
    check(ok, detail.join("; "))
}

fn criterion_3(fx: &Fixture) -> Outcome {
    let z = two_proportion_z(fx.worst_at(55), fx.random_at(55));
    let ts: Vec<u64> = (10..=100).collect();
    let star = curve(CurveVariant::Dfr1Star, &ts, None);
    let avg = curve(CurveVariant::Dfr1Avg, &ts, None);
    let violations: Vec<u64> = ts
        .iter()
        .zip(star.iter().zip(&avg))
        .filter(|(_, (s, a))| s < a)
        .map(|(&t, _)| t)
        .collect();
    check(
        z >= -3.0 && violations.is_empty(),
        format!(
            "t=55 worst {:.4} vs random {:.4} (z={z:.2}); star<avg at {violations:?}",
            fx.worst_at(55).dfr,
            fx.random_at(55).dfr
        ),
    )
}

fn criterion_4(fx: &Fixture) -> Outcome {
    let ts: Vec<u64> = (20..=80).collect();
    let start = Instant::now();
    let mut bound = CodeBound::new(&fx.key, B, BITS).expect("bound");
    let values: Vec<f64> = ts
        .iter()
        .map(|&t| bound.code_specific_dfr1(t).expect("bound value").dfr_upper.to_f64())
        .collect();
    let elapsed = start.elapsed();
    let star = curve(CurveVariant::Dfr1Star, &ts, None);
    let below: Vec<u64> = ts
        .iter()
        .zip(values.iter().zip(&star))
        .filter(|(_, (b, s))| b < s)
        .map(|(&t, _)| t)
        .collect();
    let mut ok = below.is_empty() && elapsed < Duration::from_secs(10);
    let mut detail = vec![format!("bound<star at {below:?}, bound curve {elapsed:.2?}")];
    for t in [45usize, 55] {
        let ub = values[t - 20];
        for (name, r) in [("random", fx.random_at(t)), ("worst", fx.worst_at(t))] {
            let (lo, _) = r.interval(3.0);
            ok &= lo <= ub;
            detail.push(format!("t={t} {name} {:.4} vs bound {ub:.4}", r.dfr));
        }
    }
    check(ok, detail.join("; "))
}

fn criterion_6(key: &ParityCheckMatrix) -> Outcome {
    let random = run(key, &[60], PermMode::Random, 61);
    let identity = run(key, &[60], PermMode::Identity, 62);
    let z = two_proportion_z(&identity[0], &random[0]);
    check(
        z.abs() < 4.0,
        format!("identity {:.4} vs random {:.4}, z={z:.2}", identity[0].dfr, random[0].dfr),
    )
}

// Oracle suites, in compact form.

fn choose(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    (0..k).fold(BigInt::one(), |acc, i| acc * (n - i) / (i + 1))
}

fn rational(num: BigUint, den: BigUint) -> BigRational {
    BigRational::new(num.into(), den.into())
}

fn to_real(x: &BigRational) -> HpReal {
    ratio_to_real(&x.numer().to_biguint().unwrap(), &x.denom().to_biguint().unwrap(), BITS).unwrap()
}

fn subset_counts_match_brute_force() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 256 {
        let len = rng.gen_range(1..=18usize);
        let items: Vec<u64> = (0..len).map(|_| rng.gen_range(0..6)).collect();
        let eta = rng.gen_range(0..=len as u32);
        let thr = rng.gen_range(-2i64..25);
        let mut brute = 0u64;
        for mask in 0u32..(1 << len) {
            if mask.count_ones() == eta {
                let s: u64 = (0..len).filter(|i| mask >> i & 1 == 1).map(|i| items[i]).sum();
                brute += u64::from(s as i64 <= thr);
            }
        }
        let row = GammaRow::from_counts(items.iter().copied());
        let got = count_subsets(&SubsetCountQuery { row, eta: u64::from(eta), thr });
        if got != BigUint::from(brute) {
            return Err(format!("{items:?} eta={eta} thr={thr}: {got} vs {brute}"));
        }
        done += 1;
    }
    Ok(done)
}

struct ExactTable {
    pf1: Vec<BigRational>,
    pm0: Vec<BigRational>,
}

impl ExactTable {
    fn new(n: u64, w: u64, v: u64, b: u64) -> Self {
        let pow = |x: &BigRational, k: u64| (0..k).fold(BigRational::one(), |acc, _| acc * x);
        let tail = |rho: &BigRational, from: u64, to: u64| {
            (from..=to)
                .map(|u| BigRational::from_integer(choose(v, u)) * pow(rho, u) * pow(&(BigRational::one() - rho), v - u))
                .fold(BigRational::zero(), |a, x| a + x)
        };
        let pf1 = (0..=n)
            .map(|t| {
                if t == 0 {
                    return BigRational::zero();
                }
                let num: BigInt = (0..=(w - 1).min(t - 1))
                    .step_by(2)
                    .map(|l| choose(w - 1, l) * choose(n - w, t - 1 - l))
                    .sum();
                tail(&BigRational::new(num, choose(n - 1, t - 1)), b, v)
            })
            .collect();
        let pm0 = (0..=n)
            .map(|t| {
                if t == n {
                    return BigRational::one();
                }
                let num: BigInt = (1..=(w - 1).min(t))
                    .step_by(2)
                    .map(|l| choose(w - 1, l) * choose(n - w, t - l))
                    .sum();
                tail(&BigRational::new(num, choose(n - 1, t)), 0, b - 1)
            })
            .collect();
        ExactTable { pf1, pm0 }
    }

    /// Residual distribution after visiting positions of the given kinds
    /// (`true` = wrong), enumerating every decision path.
    fn paths(&self, kinds: &[bool], residual: u64, p: BigRational, out: &mut [BigRational]) {
        let Some((&wrong, rest)) = kinds.split_first() else {
            out[residual as usize] += p;
            return;
        };
        if p.is_zero() {
            return;
        }
        let r = residual as usize;
        if wrong {
            self.paths(rest, residual - 1, &p * &self.pf1[r], out);
            self.paths(rest, residual, &p * (BigRational::one() - &self.pf1[r]), out);
        } else {
            self.paths(rest, residual, &p * &self.pm0[r], out);
            self.paths(rest, residual + 1, &p * (BigRational::one() - &self.pm0[r]), out);
        }
    }
}

fn chains_match_path_enumeration() -> Result<usize, String> {
    let (n, w, v, b) = (14u64, 4u64, 2u64, 1u64);
    let exact = ExactTable::new(n, w, v, b);
    let probs = FlipProbabilities::new(n, w, v, b, BITS, Rho0Variant::Consistent).map_err(|e| e.to_string())?;
    let opts = ChainOptions::exact();
    let mut compared = 0;
    let mut compare = |got: HpReal, want: &BigRational, what: String| -> Result<(), String> {
        let d = got.rel_diff(&to_real(want));
        compared += 1;
        if d <= 1e-10 {
            Ok(())
        } else {
            Err(format!("{what}: relative difference {d:e}"))
        }
    };
    for omega in 0..=6u64 {
        let steps = (n - omega) as usize;
        let mut want = vec![BigRational::zero(); n as usize + 2];
        exact.paths(&vec![false; steps], omega, BigRational::one(), &mut want);
        let got = distribution_after_e0(omega, &probs, &opts).map_err(|e| e.to_string())?;
        for i in 0..=steps {
            compare(got.get(i), &want[omega as usize + i], format!("E0 omega={omega} i={i}"))?;
        }
    }
    for (t1, t_star) in [(10u64, 12u64), (10, 10), (7, 13), (4, 6)] {
        let mut want = vec![BigRational::zero(); n as usize + 2];
        exact.paths(&vec![true; t1 as usize], t_star, BigRational::one(), &mut want);
        let got = distribution_after_e1(t1, t_star, &probs, &opts).map_err(|e| e.to_string())?;
        for k in 0..=t1 {
            compare(got.get(k as usize), &want[(t_star - t1 + k) as usize], format!("E1 t1={t1} k={k}"))?;
        }
    }
    for t in [1usize, 3] {
        let kinds: Vec<bool> = (0..n as usize).map(|i| i >= n as usize - t).collect();
        let mut want = vec![BigRational::zero(); n as usize + 2];
        exact.paths(&kinds, t as u64, BigRational::one(), &mut want);
        let got = one_iteration_transition(t as u64, &probs, Composition::Joint, &opts).map_err(|e| e.to_string())?;
        for (x, wx) in want.iter().enumerate().take(n as usize + 1) {
            compare(got.get(x), wx, format!("iteration t={t} x={x}"))?;
        }
    }
    Ok(compared)
}

fn rho_matches_census() -> Result<usize, String> {
    let mut compared = 0;
    for (n, w) in [(8u64, 4u64), (12, 5), (16, 6)] {
        let row: u32 = (1 << w) - 1;
        for t in 1..n {
            let (mut odd1, mut all1, mut odd0, mut all0) = (0u64, 0u64, 0u64, 0u64);
            for mask in 0u32..(1 << n) {
                if u64::from(mask.count_ones()) != t {
                    continue;
                }
                let odd = u64::from((mask & row).count_ones() % 2);
                if mask & 1 == 1 {
                    all1 += 1;
                    odd1 += odd;
                } else {
                    all0 += 1;
                    odd0 += odd;
                }
            }
            let (a, b) = rho1u_ratio(n, w, t).map_err(|e| e.to_string())?;
            let (c, d) = rho0u_ratio(n, w, t, Rho0Variant::Consistent).map_err(|e| e.to_string())?;
            if rational(a, b) != rational(odd1.into(), all1.into()) || rational(c, d) != rational(odd0.into(), all0.into())
            {
                return Err(format!("n={n} w={w} t={t}"));
            }
            compared += 2;
        }
    }
    Ok(compared)
}

fn worst_case_order_is_minimal() -> Result<usize, String> {
    let mut placements = 0;
    for (n, w, v, b) in [(8u64, 2u64, 2u64, 1u64), (8, 3, 3, 2), (8, 2, 1, 1), (7, 3, 3, 3), (6, 3, 1, 1)] {
        let probs = FlipProbabilities::new(n, w, v, b, BITS, Rho0Variant::Consistent).map_err(|e| e.to_string())?;
        probs.check_monotone(3).map_err(|e| e.to_string())?;
        for t_hat in 0..=3usize {
            let star: Vec<usize> = (n as usize - t_hat..n as usize).collect();
            let beta_star = success_probability_for_order(&star, n as usize, &probs).map_err(|e| e.to_string())?;
            let mut min: Option<HpReal> = None;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != t_hat {
                    continue;
                }
                let pos: Vec<usize> = (0..n as usize).filter(|i| mask >> i & 1 == 1).collect();
                let beta = success_probability_for_order(&pos, n as usize, &probs).map_err(|e| e.to_string())?;
                placements += 1;
                if min.as_ref().is_none_or(|m| beta < *m) {
                    min = Some(beta);
                }
            }
            if min.as_ref() != Some(&beta_star) {
                return Err(format!("n={n} w={w} v={v} b={b} t_hat={t_hat}"));
            }
        }
    }
    Ok(placements)
}

fn representative_rows_match_gamma() -> Result<usize, String> {
    let mut rows = 0;
    for (n0, p, v, seed) in [(2, 5, 2, 1u64), (2, 13, 3, 2), (3, 13, 4, 3), (2, 31, 5, 4), (4, 31, 3, 5)] {
        let h = keygen(CodeParams::new(n0, p, v).unwrap(), seed).map_err(|e| e.to_string())?;
        let reps = gamma_representative_rows(&h);
        let cols: Vec<Vec<usize>> = (0..h.n()).map(|j| h.column_support(j).unwrap()).collect();
        for z in 0..h.n() {
            let row = GammaRow::from_counts(
                (0..h.n())
                    .filter(|&j| j != z)
                    .map(|j| cols[z].iter().filter(|r| cols[j].contains(r)).count() as u64),
            );
            if row != reps[z / p] {
                return Err(format!("n0={n0} p={p} v={v} column {z}"));
            }
            rows += 1;
        }
    }
    Ok(rows)
}

fn criterion_5() -> Outcome {
    let parts: [(&str, Oracle); 5] = [
        ("a subset counts", subset_counts_match_brute_force),
        ("b chains", chains_match_path_enumeration),
        ("c flip rates", rho_matches_census),
        ("d worst-case order", worst_case_order_is_minimal),
        ("e representative rows", representative_rows_match_gamma),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, f) in parts {
        match f() {
            Ok(k) => detail.push(format!("{name}: {k} ok")),
            Err(e) => {
                ok = false;
                detail.push(format!("{name}: FAILED {e}"));
            }
        }
    }
    check(ok, detail.join("; "))
}

fn ripbf(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_ripbf"))
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited with {status}"))
    }
}

fn twice(dir: &Path, name: &str, args: &[&str]) -> Result<bool, String> {
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.join(format!("{name}{i}.csv"));
        let mut full: Vec<&str> = args.to_vec();
        let out_str = out.to_str().unwrap().to_owned();
        full.extend(["--out", &out_str]);
        ripbf(&full)?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    Ok(!outputs[0].is_empty() && outputs[0] == outputs[1])
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let key = dir.path().join("key.json");
    let key_str = key.to_str().unwrap();
    ripbf(&["keygen", "--n0", "2", "--p", "4801", "--v", "45", "--seed", "9", "--out", key_str])?;
    let cases: [(&str, Vec<&str>); 4] = [
        (
            "simulate",
            vec![
                "simulate", "--key", key_str, "--t-min", "40", "--t-max", "60", "--t-step", "10", "--trials", "300",
                "--thresholds", "25", "--master-seed", "3",
            ],
        ),
        (
            "simulate-workers",
            vec![
                "--workers", "3", "simulate", "--random", "--n0", "2", "--p", "101", "--v", "5", "--seed", "1",
                "--t-min", "2", "--t-max", "6", "--trials", "500", "--thresholds", "3,4", "--itermax", "2",
                "--perm-mode", "worst",
            ],
        ),
        ("model", vec!["model", "--n0", "2", "--p", "4801", "--v", "45", "--b", "25", "--t-range", "20:70:5"]),
        ("bound", vec!["bound", "--key", key_str, "--b", "25", "--t-range", "20:80:5"]),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, args) in &cases {
        let same = twice(dir.path(), name, args)?;
        ok &= same;
        detail.push(format!("{name} identical={same}"));
    }
    check(ok, detail.join("; "))
}

fn main() -> ExitCode {
    let key = keygen(CodeParams::new(2, 4801, 45).unwrap(), KEY_SEED).expect("key");
    let start = Instant::now();
    let random = run(&key, &[45, 50, 55, 60], PermMode::Random, 1);
    let sim_elapsed = start.elapsed();
    let worst = run(&key, &[45, 55], PermMode::WorstCase, 2);
    let fx = Fixture { key, random, worst };

    let results = [
        ("model reproduction", criterion_1()),
        ("simulation vs model", criterion_2(&fx, sim_elapsed)),
        ("worst-case dominance", criterion_3(&fx)),
        ("conservative bound", criterion_4(&fx)),
        ("oracle suites", criterion_5()),
        ("identity permutation", criterion_6(&fx.key)),
        ("determinism", criterion_7()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(d) => println!("PASS {} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {} {name}: {d}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
