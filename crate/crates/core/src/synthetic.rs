//! Synthetic coefficient signals, simulated regression data and the
//! estimation-error benchmark.
//!
//! Signal definitions (all nonnegative, maximum 1, indices 0-based):
//!
//! * **Gradient**: `Σ_d i_d / Σ_d (I_d − 1)`, a linear ramp between opposite
//!   corners.
//! * **Floor**: `K` nested boxes, the outermost being the whole domain; the
//!   value is `(number of boxes containing the point) / K`. Box `k` is inset
//!   by `round(I_d · k / 2K)` on every mode except the first, where the inset
//!   stops growing at `k = K − 2`. The two innermost boxes therefore share a
//!   row band and the 2-D signal with `K = 4` has CP rank 3.
//! * **Wave**: `max(0, Π_d sin(2π P (i_d + ½) / I_d))` with `P` periods per
//!   axis (CP rank 2 in 2-D).
//! * **FadingCross**: the union of `D` axis-aligned slabs of width `w`
//!   through the center, `{i : |i_d + ½ − I_d/2| < w/2}` for some `d`, with
//!   value `1 − f · max_d |i_d + ½ − I_d/2| / (I_d/2)` on the support,
//!   rescaled to maximum 1.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::RhoRule;
use crate::error::{NsktrError, Result};
use crate::loss::{sigmoid, Loss};
use crate::model::{fit, Dataset, FitOptions};
use crate::regularizer::ModeRegConfig;
use crate::selection::{greedy_lambda_search, LambdaGrid, LambdaMask};
use crate::tensor::{inner_product, kruskal_reconstruct, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    Gradient,
    Floor,
    Wave,
    FadingCross,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] = [
        SignalKind::Gradient,
        SignalKind::Floor,
        SignalKind::Wave,
        SignalKind::FadingCross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::Gradient => "gradient",
            SignalKind::Floor => "floor",
            SignalKind::Wave => "wave",
            SignalKind::FadingCross => "fading-cross",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalKind {
    type Err = NsktrError;

    fn from_str(s: &str) -> Result<Self> {
        SignalKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (k.name().replace('-', "_") == s))
            .ok_or_else(|| NsktrError::Usage(format!("unknown signal `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    /// Floor: number of plateaus `K`.
    pub plateaus: usize,
    /// Wave: periods per axis `P`.
    pub periods: f64,
    /// FadingCross: slab width `w`.
    pub width: usize,
    /// FadingCross: intensity drop `f` from center to faces, in [0, 1).
    pub fade: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self {
            plateaus: 4,
            periods: 2.0,
            width: 8,
            fade: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub dims: Vec<usize>,
    pub params: SignalParams,
}

impl SignalSpec {
    pub fn new(kind: SignalKind, dims: Vec<usize>) -> Self {
        Self {
            kind,
            dims,
            params: SignalParams::default(),
        }
    }

    /// 128 x 128 for the 2-D kinds, 32 x 32 x 32 for the cross.
    pub fn full(kind: SignalKind) -> Self {
        match kind {
            SignalKind::FadingCross => Self::new(kind, vec![32; 3]),
            _ => Self::new(kind, vec![128; 2]),
        }
    }

    /// 32 x 32 for the 2-D kinds, 16 x 16 x 16 for the cross.
    pub fn desk(kind: SignalKind) -> Self {
        match kind {
            SignalKind::FadingCross => Self::new(kind, vec![16; 3]),
            _ => Self::new(kind, vec![32; 2]),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(NsktrError::InvalidDims(format!("signal dims {:?}", self.dims)));
        }
        let p = &self.params;
        if p.plateaus == 0 {
            return Err(NsktrError::param("plateaus", "must be positive"));
        }
        if !(p.periods > 0.0) {
            return Err(NsktrError::param("periods", "must be positive"));
        }
        if p.width == 0 {
            return Err(NsktrError::param("width", "must be positive"));
        }
        if !(0.0..1.0).contains(&p.fade) {
            return Err(NsktrError::param("fade", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub fn generate_signal(spec: &SignalSpec) -> Result<DenseTensor> {
    spec.validate()?;
    let dims = &spec.dims;
    let p = spec.params;
    let mut t = match spec.kind {
        SignalKind::Gradient => {
            let span: usize = dims.iter().map(|n| n - 1).sum();
            let span = span.max(1) as f64;
            DenseTensor::from_fn(dims.clone(), |idx| idx.iter().sum::<usize>() as f64 / span)?
        }
        SignalKind::Floor => {
            let k = p.plateaus;
            let inset = |d: usize, b: usize| {
                let step = if d == 0 { b.min(k.saturating_sub(2)) } else { b };
                ((dims[d] * step) as f64 / (2 * k) as f64).round() as usize
            };
            DenseTensor::from_fn(dims.clone(), |idx| {
                let inside = (0..k)
                    .filter(|&b| {
                        idx.iter()
                            .enumerate()
                            .all(|(d, &i)| i >= inset(d, b) && i < dims[d] - inset(d, b))
                    })
                    .count();
                inside as f64 / k as f64
            })?
        }
        SignalKind::Wave => DenseTensor::from_fn(dims.clone(), |idx| {
            let v: f64 = idx
                .iter()
                .zip(dims)
                .map(|(&i, &n)| (2.0 * std::f64::consts::PI * p.periods * (i as f64 + 0.5) / n as f64).sin())
                .product();
            v.max(0.0)
        })?,
        SignalKind::FadingCross => DenseTensor::from_fn(dims.clone(), |idx| {
            let offsets: Vec<f64> = idx
                .iter()
                .zip(dims)
                .map(|(&i, &n)| (i as f64 + 0.5 - n as f64 / 2.0).abs())
                .collect();
            let on_slab = offsets.iter().any(|&o| o < p.width as f64 / 2.0);
            if !on_slab {
                return 0.0;
            }
            let dist = offsets
                .iter()
                .zip(dims)
                .map(|(&o, &n)| o / (n as f64 / 2.0))
                .fold(0.0, f64::max);
            1.0 - p.fade * dist
        })?,
    };
    let max = t.values().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        t.values_mut().iter_mut().for_each(|v| *v /= max);
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Realized signal-to-noise ratio in dB; `+∞` means no noise.
    pub snr_db: f64,
    pub seed: u64,
}

/// Draws `N` standard-normal covariate tensors and responses from the
/// coefficient tensor `b`. Linear: Gaussian noise rescaled so that
/// `10 log10(Σ s_i² / Σ e_i²)` equals `snr_db` exactly. Logistic: labels
/// `+1` with probability `sigmoid(s_i)`.
pub fn simulate_dataset(cfg: &SimConfig, b: &DenseTensor, loss: Loss) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(NsktrError::param("N", "must be positive"));
    }
    if cfg.snr_db.is_nan() {
        return Err(NsktrError::param("snr_db", "must not be NaN"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = b.dims().to_vec();
    let len = b.len();
    let mut samples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let values: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        samples.push(DenseTensor::new(dims.clone(), values)?);
    }
    let clean: Vec<f64> = samples
        .iter()
        .map(|x| inner_product(x, b))
        .collect::<Result<_>>()?;
    let responses = match loss {
        Loss::Linear => {
            let signal: f64 = clean.iter().map(|s| s * s).sum();
            if cfg.snr_db.is_infinite() && cfg.snr_db > 0.0 {
                clean
            } else {
                if signal == 0.0 {
                    return Err(NsktrError::ZeroSignal);
                }
                let noise: Vec<f64> = (0..cfg.n).map(|_| rng.sample(StandardNormal)).collect();
                let energy: f64 = noise.iter().map(|e| e * e).sum();
                let target = signal / 10f64.powf(cfg.snr_db / 10.0);
                let scale = (target / energy).sqrt();
                clean.iter().zip(&noise).map(|(s, e)| s + scale * e).collect()
            }
        }
        Loss::Logistic => clean
            .iter()
            .map(|&s| if rng.random::<f64>() < sigmoid(s) { 1.0 } else { -1.0 })
            .collect(),
    };
    Dataset::new(samples, responses, loss)
}

/// `‖b̂ − b‖_F / ‖b‖_F`
pub fn estimation_error(b_hat: &DenseTensor, b_true: &DenseTensor) -> Result<f64> {
    if b_hat.dims() != b_true.dims() {
        return Err(NsktrError::ShapeMismatch(format!(
            "estimate dims {:?} vs truth dims {:?}",
            b_hat.dims(),
            b_true.dims()
        )));
    }
    let norm = b_true.frobenius_norm();
    if norm == 0.0 {
        return Err(NsktrError::ZeroNormTruth);
    }
    let diff: f64 = b_hat
        .values()
        .iter()
        .zip(b_true.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / norm)
}

/// The five regularization configurations compared in the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    /// All λ zero, no sign constraint.
    LS,
    /// ℓ1 + ridge.
    EN,
    NEN,
    /// ℓ1 + total variation.
    FL,
    NFL,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [MethodKind::LS, MethodKind::EN, MethodKind::NEN, MethodKind::FL, MethodKind::NFL];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::LS => "LS",
            MethodKind::EN => "EN",
            MethodKind::NEN => "nEN",
            MethodKind::FL => "FL",
            MethodKind::NFL => "nFL",
        }
    }

    pub fn nonneg(self) -> bool {
        matches!(self, MethodKind::NEN | MethodKind::NFL)
    }

    /// λ coordinates the method may tune.
    pub fn mask(self) -> LambdaMask {
        match self {
            MethodKind::LS => [false; 3],
            MethodKind::EN | MethodKind::NEN => [true, false, true],
            MethodKind::FL | MethodKind::NFL => [true, true, false],
        }
    }
}

impl FromStr for MethodKind {
    type Err = NsktrError;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NsktrError::Usage(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub opts: FitOptions,
}

impl Method {
    /// `kind` with the same `lambdas` on every mode; the sign constraint and
    /// the zeroing of untunable coordinates follow the kind.
    pub fn uniform(kind: MethodKind, base: &FitOptions, lambdas: [f64; 3], ndims: usize) -> Result<Self> {
        let m = kind.mask();
        let cfg = ModeRegConfig::new(
            if m[0] { lambdas[0] } else { 0.0 },
            if m[1] { lambdas[1] } else { 0.0 },
            if m[2] { lambdas[2] } else { 0.0 },
            kind.nonneg(),
        )?;
        Ok(Self {
            name: kind.name().to_string(),
            opts: base.clone().with_uniform_modes(cfg, ndims),
        })
    }

    pub fn with_modes(kind: MethodKind, base: &FitOptions, per_mode: Vec<ModeRegConfig>) -> Self {
        Self {
            name: kind.name().to_string(),
            opts: FitOptions {
                per_mode,
                ..base.clone()
            },
        }
    }
}

/// One (replicate, method) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub signal: String,
    pub n: usize,
    pub rank: usize,
    pub snr_db: f64,
    pub method: String,
    pub rep: usize,
    pub seed: u64,
    /// `NaN` when the fit failed.
    pub ee: f64,
    pub iters: usize,
    pub seconds: f64,
    /// Whether the outer objective trace never rose beyond the slack
    /// `prev · 1e-6 + 1e-9`.
    pub monotone: bool,
    pub note: Option<String>,
}

pub use crate::model::{MONOTONE_ABS, MONOTONE_REL};

/// Runs every method on `reps` fresh simulations of `signal` (replicate `r`
/// uses seed `sim.seed + r` for both the data and the fit initialization).
/// A failed fit is recorded with `ee = NaN` and a note.
pub fn run_benchmark(
    signal: &SignalSpec,
    sim: &SimConfig,
    methods: &[Method],
    reps: usize,
) -> Result<Vec<BenchmarkRow>> {
    if reps == 0 {
        return Err(NsktrError::param("reps", "must be at least 1"));
    }
    let truth = generate_signal(signal)?;
    let per_rep: Vec<Result<Vec<BenchmarkRow>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = sim.seed.wrapping_add(rep as u64);
            let data = simulate_dataset(&SimConfig { seed, ..sim.clone() }, &truth, Loss::Linear)?;
            Ok(methods
                .iter()
                .map(|m| run_one(signal, sim, &truth, &data, m, rep, seed))
                .collect())
        })
        .collect();
    let mut rows = Vec::with_capacity(reps * methods.len());
    for r in per_rep {
        rows.extend(r?);
    }
    Ok(rows)
}

fn run_one(
    signal: &SignalSpec,
    sim: &SimConfig,
    truth: &DenseTensor,
    data: &Dataset,
    method: &Method,
    rep: usize,
    seed: u64,
) -> BenchmarkRow {
    let start = Instant::now();
    let opts = FitOptions {
        seed,
        ..method.opts.clone()
    };
    let mut row = BenchmarkRow {
        signal: signal.kind.name().to_string(),
        n: sim.n,
        rank: opts.rank,
        snr_db: sim.snr_db,
        method: method.name.clone(),
        rep,
        seed,
        ee: f64::NAN,
        iters: 0,
        seconds: 0.0,
        monotone: true,
        note: None,
    };
    let outcome = fit(data, &opts).and_then(|report| {
        let ee = estimation_error(&kruskal_reconstruct(&report.model), truth)?;
        Ok((report, ee))
    });
    match outcome {
        Ok((report, ee)) => {
            row.ee = ee;
            row.iters = report.iterations();
            row.monotone = report.is_monotone(MONOTONE_REL, MONOTONE_ABS);
        }
        Err(e) => {
            log::warn!("{} {} rep {rep} failed: {e}", row.signal, row.method);
            row.note = Some(e.to_string());
        }
    }
    row.seconds = start.elapsed().as_secs_f64();
    row
}

/// Mean and sample standard deviation of one (signal, N, rank, SNR,
/// method) cell over its replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub signal: String,
    pub n: usize,
    pub rank: usize,
    pub snr_db: f64,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub reps: usize,
    pub failures: usize,
    /// `mean(std)` with two decimals.
    pub formatted: String,
}

pub fn summarize(rows: &[BenchmarkRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, usize, usize, u64, String)> = Vec::new();
    for r in rows {
        let key = (r.signal.clone(), r.n, r.rank, r.snr_db.to_bits(), r.method.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(signal, n, rank, snr_bits, method)| {
            let cell: Vec<&BenchmarkRow> = rows
                .iter()
                .filter(|r| r.signal == signal && r.n == n && r.rank == rank && r.snr_db.to_bits() == snr_bits && r.method == method)
                .collect();
            let ok: Vec<f64> = cell.iter().map(|r| r.ee).filter(|e| e.is_finite()).collect();
            let (mean, std) = mean_std(&ok);
            CellSummary {
                formatted: format!("{mean:.2}({std:.2})"),
                signal,
                n,
                rank,
                snr_db: f64::from_bits(snr_bits),
                method,
                mean,
                std,
                reps: cell.len(),
                failures: cell.len() - ok.len(),
            }
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const CSV_HEADER: &str = "signal,N,rank,snr_db,method,rep,seed,ee,iters,seconds";

/// Results as CSV. The `seconds` column is left empty unless
/// `with_timing` is set, so that runs with equal seeds produce identical
/// bytes.
pub fn to_csv(rows: &[BenchmarkRow], with_timing: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let seconds = if with_timing { format!("{:.3}", r.seconds) } else { String::new() };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.signal, r.n, r.rank, r.snr_db, r.method, r.rep, r.seed, r.ee, r.iters, seconds
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchScale {
    /// The 2-D signals at 32 x 32, N = 400, 3 replicates.
    Desk,
    /// The 2-D signals at 128 x 128 and the cross at 32³, N = 1000,
    /// 5 replicates.
    Full,
}

impl FromStr for BenchScale {
    type Err = NsktrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(BenchScale::Desk),
            "full" => Ok(BenchScale::Full),
            other => Err(NsktrError::Usage(format!("unknown scale `{other}` (expected desk or full)"))),
        }
    }
}

/// One benchmark cell: a signal, a rank and a simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub signal: SignalSpec,
    pub rank: usize,
    pub n: usize,
    pub snr_db: f64,
    pub reps: usize,
}

impl SuiteCell {
    /// Ranks 2 for the 2-D signals except Floor (3), and 3 for the cross.
    pub fn standard(kind: SignalKind, scale: BenchScale) -> Self {
        let (signal, n, reps) = match scale {
            BenchScale::Desk => (SignalSpec::desk(kind), 400, 3),
            BenchScale::Full => (SignalSpec::full(kind), 1000, 5),
        };
        let rank = match kind {
            SignalKind::Floor | SignalKind::FadingCross => 3,
            _ => 2,
        };
        Self {
            signal,
            rank,
            n,
            snr_db: 20.0,
            reps,
        }
    }
}

/// λ tuned for one method of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedMethod {
    pub signal: String,
    pub method: String,
    pub per_mode: Vec<ModeRegConfig>,
    pub fits: usize,
    /// Tuning fits whose objective trace increased beyond the slack.
    pub non_monotone: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: SuiteCell,
    pub tuned: Vec<TunedMethod>,
    pub rows: Vec<BenchmarkRow>,
    pub summary: Vec<CellSummary>,
}

/// Seed offset of the tuning simulation, kept clear of replicate seeds.
pub const TUNING_SEED_OFFSET: u64 = 1_000_003;

/// Fit options shared by every benchmark method before λ tuning: defaults
/// with ρ scaled to the design's curvature.
pub fn benchmark_options() -> FitOptions {
    let mut opts = FitOptions::default();
    opts.admm.rho_rule = RhoRule::DesignScaled;
    opts
}

/// Tunes each method on its own simulation (seed `seed + TUNING_SEED_OFFSET`,
/// 80/20 train/validation split, grid `λ0 = N, ε = 1e-3, L = 5`) and then
/// runs the replicates.
pub fn run_cell(cell: &SuiteCell, methods: &[MethodKind], base: &FitOptions, seed: u64) -> Result<CellResult> {
    let truth = generate_signal(&cell.signal)?;
    let base = FitOptions {
        rank: cell.rank,
        ..base.clone()
    };
    let ndims = cell.signal.dims.len();
    let tuning_seed = seed.wrapping_add(TUNING_SEED_OFFSET);
    let needs_tuning = methods.iter().any(|m| m.mask().iter().any(|&b| b));
    let split = if needs_tuning {
        let sim = SimConfig {
            n: cell.n,
            snr_db: cell.snr_db,
            seed: tuning_seed,
        };
        Some(simulate_dataset(&sim, &truth, Loss::Linear)?.split(0.8, tuning_seed)?)
    } else {
        None
    };
    let grid = LambdaGrid::for_samples(cell.n);
    let mut tuned = Vec::new();
    let mut runs = Vec::new();
    for &kind in methods {
        let start = vec![ModeRegConfig::least_squares().with_nonneg(kind.nonneg()); ndims];
        let (per_mode, fits, non_monotone) = match (&split, kind.mask().iter().any(|&b| b)) {
            (Some((train, val)), true) => {
                let opts = FitOptions {
                    per_mode: start,
                    seed: tuning_seed,
                    ..base.clone()
                };
                let res = greedy_lambda_search(train, val, &opts, &grid, kind.mask())?;
                (res.configs, res.fits, res.non_monotone)
            }
            _ => (start, 0, 0),
        };
        tuned.push(TunedMethod {
            signal: cell.signal.kind.name().to_string(),
            method: kind.name().to_string(),
            per_mode: per_mode.clone(),
            fits,
            non_monotone,
        });
        runs.push(Method::with_modes(kind, &base, per_mode));
    }
    let sim = SimConfig {
        n: cell.n,
        snr_db: cell.snr_db,
        seed,
    };
    let rows = run_benchmark(&cell.signal, &sim, &runs, cell.reps)?;
    Ok(CellResult {
        summary: summarize(&rows),
        cell: cell.clone(),
        tuned,
        rows,
    })
}

/// Cells of the Table-I style suite at the given scale.
pub fn suite_cells(scale: BenchScale) -> Vec<SuiteCell> {
    let kinds: &[SignalKind] = match scale {
        BenchScale::Desk => &[SignalKind::Gradient, SignalKind::Floor, SignalKind::Wave],
        BenchScale::Full => &SignalKind::ALL,
    };
    kinds.iter().map(|&k| SuiteCell::standard(k, scale)).collect()
}

/// Runs every cell in order with the same base seed.
pub fn run_suite(cells: &[SuiteCell], methods: &[MethodKind], base: &FitOptions, seed: u64) -> Result<Vec<CellResult>> {
    cells.iter().map(|c| run_cell(c, methods, base, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{matricize, Matrix};
    use approx::assert_relative_eq;

    fn distinct(values: &[f64]) -> Vec<f64> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn numeric_rank(m: &Matrix) -> usize {
        let sv = m.clone().singular_values();
        let top = sv.max();
        sv.iter().filter(|&&s| s > 1e-10 * top).count()
    }

    #[test]
    fn gradient_small_example() {
        let t = generate_signal(&SignalSpec::new(SignalKind::Gradient, vec![4, 4])).unwrap();
        for j in 0..4 {
            assert_relative_eq!(t.get(&[1, j]), (1 + j) as f64 / 6.0, epsilon = 1e-15);
        }
        assert_eq!(t.get(&[0, 0]), 0.0);
        assert_eq!(t.get(&[3, 3]), 1.0);
    }

    #[test]
    fn floor_is_piecewise_constant_with_rank_three() {
        for spec in [SignalSpec::desk(SignalKind::Floor), SignalSpec::full(SignalKind::Floor)] {
            let t = generate_signal(&spec).unwrap();
            assert_eq!(distinct(t.values()), vec![0.25, 0.5, 0.75, 1.0]);
            assert_eq!(numeric_rank(&matricize(&t, 0).unwrap()), 3);
        }
    }

    #[test]
    fn wave_is_nonnegative_rank_two() {
        let t = generate_signal(&SignalSpec::full(SignalKind::Wave)).unwrap();
        assert!(t.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_relative_eq!(t.values().iter().copied().fold(0.0, f64::max), 1.0);
        assert_eq!(numeric_rank(&matricize(&t, 0).unwrap()), 2);
    }

    #[test]
    fn fading_cross_support_is_union_of_slabs() {
        let t = generate_signal(&SignalSpec::full(SignalKind::FadingCross)).unwrap();
        let mut idx = [0usize; 3];
        for (lin, &v) in t.values().iter().enumerate() {
            idx[0] = lin % 32;
            idx[1] = (lin / 32) % 32;
            idx[2] = lin / 1024;
            let on_slab = idx.iter().any(|&i| (12..20).contains(&i));
            assert_eq!(v > 0.0, on_slab, "{idx:?}");
        }
        assert_eq!(t.get(&[16, 16, 16]), 1.0);
        assert!(t.get(&[16, 16, 0]) < t.get(&[16, 16, 8]));
    }

    #[test]
    fn generators_are_pure_and_validated() {
        for kind in SignalKind::ALL {
            let spec = SignalSpec::desk(kind);
            assert_eq!(generate_signal(&spec).unwrap(), generate_signal(&spec).unwrap());
            assert_eq!(kind.name().parse::<SignalKind>().unwrap(), kind);
        }
        assert!(generate_signal(&SignalSpec::new(SignalKind::Wave, vec![4, 0])).is_err());
        let mut spec = SignalSpec::desk(SignalKind::FadingCross);
        spec.params.fade = 1.0;
        assert!(generate_signal(&spec).is_err());
        assert!("ramp".parse::<SignalKind>().is_err());
    }

    #[test]
    fn realized_snr_is_exact() {
        let b = generate_signal(&SignalSpec::new(SignalKind::Floor, vec![8, 8])).unwrap();
        for snr in [0.0, 7.5, 20.0] {
            let data = simulate_dataset(&SimConfig { n: 50, snr_db: snr, seed: 3 }, &b, Loss::Linear).unwrap();
            let (mut s2, mut e2) = (0.0, 0.0);
            for (x, &y) in data.samples().iter().zip(data.responses()) {
                let s = inner_product(x, &b).unwrap();
                s2 += s * s;
                e2 += (y - s) * (y - s);
            }
            assert!((10.0 * (s2 / e2).log10() - snr).abs() <= 1e-9);
            if snr == 20.0 {
                assert_relative_eq!(e2, s2 / 100.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic_and_checked() {
        let b = generate_signal(&SignalSpec::new(SignalKind::Gradient, vec![5, 4])).unwrap();
        let cfg = SimConfig { n: 20, snr_db: 10.0, seed: 11 };
        let a = simulate_dataset(&cfg, &b, Loss::Linear).unwrap();
        assert_eq!(a, simulate_dataset(&cfg, &b, Loss::Linear).unwrap());
        let other = simulate_dataset(&SimConfig { seed: 12, ..cfg.clone() }, &b, Loss::Linear).unwrap();
        assert_ne!(a, other);

        let clean = simulate_dataset(&SimConfig { snr_db: f64::INFINITY, ..cfg.clone() }, &b, Loss::Linear).unwrap();
        for (x, &y) in clean.samples().iter().zip(clean.responses()) {
            assert_eq!(y, inner_product(x, &b).unwrap());
        }
        let labels = simulate_dataset(&cfg, &b, Loss::Logistic).unwrap();
        assert!(labels.responses().iter().all(|&y| y == 1.0 || y == -1.0));

        let zero = DenseTensor::zeros(vec![5, 4]).unwrap();
        assert!(matches!(simulate_dataset(&cfg, &zero, Loss::Linear), Err(NsktrError::ZeroSignal)));
        assert!(simulate_dataset(&SimConfig { n: 0, ..cfg }, &b, Loss::Linear).is_err());
    }

    #[test]
    fn estimation_error_examples() {
        let b = generate_signal(&SignalSpec::new(SignalKind::Wave, vec![6, 6])).unwrap();
        let scaled = |c: f64| DenseTensor::new(vec![6, 6], b.values().iter().map(|v| c * v).collect()).unwrap();
        assert_eq!(estimation_error(&b, &b).unwrap(), 0.0);
        assert_relative_eq!(estimation_error(&scaled(2.0), &b).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(estimation_error(&scaled(0.0), &b).unwrap(), 1.0, epsilon = 1e-14);
        for c in [0.3, 1.7, 4.0] {
            assert_relative_eq!(estimation_error(&scaled(c), &b).unwrap(), (c - 1.0).abs(), epsilon = 1e-13);
        }
        let zero = DenseTensor::zeros(vec![6, 6]).unwrap();
        assert!(matches!(estimation_error(&b, &zero), Err(NsktrError::ZeroNormTruth)));
        assert!(estimation_error(&DenseTensor::zeros(vec![36]).unwrap(), &b).is_err());
    }

    #[test]
    fn method_presets() {
        let base = FitOptions::default().with_rank(2);
        let ls = Method::uniform(MethodKind::LS, &base, [5.0, 5.0, 5.0], 2).unwrap();
        assert_eq!(ls.opts.per_mode, vec![ModeRegConfig::new(0.0, 0.0, 0.0, false).unwrap(); 2]);
        let nfl = Method::uniform(MethodKind::NFL, &base, [1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(nfl.opts.per_mode[1], ModeRegConfig::new(1.0, 2.0, 0.0, true).unwrap());
        let en = Method::uniform(MethodKind::EN, &base, [1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(en.opts.per_mode[0], ModeRegConfig::new(1.0, 0.0, 3.0, false).unwrap());
        for kind in MethodKind::ALL {
            assert_eq!(kind.name().parse::<MethodKind>().unwrap(), kind);
        }
    }

    fn tiny_signal() -> SignalSpec {
        SignalSpec::new(SignalKind::Floor, vec![8, 8])
    }

    fn tiny_options() -> FitOptions {
        let mut opts = benchmark_options().with_rank(2);
        opts.outer_iters = 5;
        opts
    }

    #[test]
    fn least_squares_equals_all_zero_config() {
        let sim = SimConfig { n: 60, snr_db: 20.0, seed: 5 };
        let base = tiny_options();
        let ls = Method::uniform(MethodKind::LS, &base, [0.0; 3], 2).unwrap();
        let rows = run_benchmark(&tiny_signal(), &sim, &[ls], 1).unwrap();

        let truth = generate_signal(&tiny_signal()).unwrap();
        let data = simulate_dataset(&sim, &truth, Loss::Linear).unwrap();
        let manual = FitOptions {
            seed: 5,
            ..base.with_uniform_modes(ModeRegConfig::new(0.0, 0.0, 0.0, false).unwrap(), 2)
        };
        let report = fit(&data, &manual).unwrap();
        let ee = estimation_error(&kruskal_reconstruct(&report.model), &truth).unwrap();
        assert_eq!(rows[0].ee, ee);
        assert_eq!(rows[0].iters, report.iterations());
    }

    #[test]
    fn single_replicate_has_zero_std() {
        let sim = SimConfig { n: 60, snr_db: 20.0, seed: 1 };
        let m = Method::uniform(MethodKind::NFL, &tiny_options(), [1.0, 1.0, 0.0], 2).unwrap();
        let rows = run_benchmark(&tiny_signal(), &sim, &[m], 1).unwrap();
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].std, 0.0);
        assert_eq!(summary[0].reps, 1);
        assert_eq!(summary[0].formatted, format!("{:.2}(0.00)", rows[0].ee));
        assert!(run_benchmark(&tiny_signal(), &sim, &[], 0).is_err());
    }

    #[test]
    fn failed_fits_are_recorded_not_dropped() {
        let sim = SimConfig { n: 30, snr_db: 20.0, seed: 2 };
        let mut m = Method::uniform(MethodKind::LS, &tiny_options(), [0.0; 3], 2).unwrap();
        m.opts.outer_iters = 0;
        let rows = run_benchmark(&tiny_signal(), &sim, &[m], 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.ee.is_nan() && r.note.is_some()));
        let summary = summarize(&rows);
        assert_eq!(summary[0].failures, 2);
        assert!(summary[0].mean.is_nan());
    }

    #[test]
    fn summary_statistics() {
        let row = |method: &str, ee: f64| BenchmarkRow {
            signal: "floor".into(),
            n: 10,
            rank: 1,
            snr_db: 20.0,
            method: method.into(),
            rep: 0,
            seed: 0,
            ee,
            iters: 1,
            seconds: 0.0,
            monotone: true,
            note: None,
        };
        let rows = vec![row("LS", 1.0), row("FL", 0.5), row("LS", 3.0), row("LS", f64::NAN)];
        let s = summarize(&rows);
        assert_eq!(s.iter().map(|c| c.method.as_str()).collect::<Vec<_>>(), ["LS", "FL"]);
        assert_eq!((s[0].mean, s[0].reps, s[0].failures), (2.0, 3, 1));
        assert_relative_eq!(s[0].std, 2f64.sqrt());
        assert_eq!(s[0].formatted, "2.00(1.41)");
    }

    #[test]
    fn csv_is_reproducible_and_timing_optional() {
        let sim = SimConfig { n: 40, snr_db: 20.0, seed: 9 };
        let methods = [
            Method::uniform(MethodKind::LS, &tiny_options(), [0.0; 3], 2).unwrap(),
            Method::uniform(MethodKind::NEN, &tiny_options(), [2.0, 0.0, 1.0], 2).unwrap(),
        ];
        let a = run_benchmark(&tiny_signal(), &sim, &methods, 2).unwrap();
        let b = run_benchmark(&tiny_signal(), &sim, &methods, 2).unwrap();
        let csv = to_csv(&a, false);
        assert_eq!(csv, to_csv(&b, false));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), 4);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(',')));
        let timed = to_csv(&a, true);
        assert!(timed.lines().skip(1).all(|l| !l.ends_with(',')));
        assert_eq!(a.iter().map(|r| r.seed).collect::<Vec<_>>(), [9, 9, 10, 10]);
    }

    #[test]
    fn suite_layout() {
        let desk = suite_cells(BenchScale::Desk);
        assert_eq!(desk.len(), 3);
        assert!(desk.iter().all(|c| c.signal.dims == [32, 32] && c.n == 400 && c.reps == 3));
        let full = suite_cells(BenchScale::Full);
        assert_eq!(full.len(), 4);
        assert_eq!(full[3].signal.dims, [32, 32, 32]);
        assert!(full.iter().all(|c| c.n == 1000 && c.reps == 5 && c.snr_db == 20.0));
        let floor = SuiteCell::standard(SignalKind::Floor, BenchScale::Full);
        assert_eq!((floor.rank, floor.signal.dims.clone()), (3, vec![128, 128]));
        assert_eq!(SuiteCell::standard(SignalKind::Gradient, BenchScale::Full).rank, 2);
        assert!("huge".parse::<BenchScale>().is_err());
    }

    #[test]
    fn tuned_cell_runs_end_to_end() {
        let cell = SuiteCell {
            signal: tiny_signal(),
            rank: 2,
            n: 50,
            snr_db: 20.0,
            reps: 2,
        };
        let res = run_cell(&cell, &[MethodKind::LS, MethodKind::FL], &tiny_options(), 4).unwrap();
        assert_eq!(res.tuned[0].fits, 0);
        assert_eq!(res.tuned[1].fits, 2 * 2 * 7);
        assert!(res.tuned[1].per_mode.iter().all(|c| c.lambda3 == 0.0 && !c.nonneg));
        assert_eq!(res.rows.len(), 4);
        assert_eq!(res.summary.len(), 2);
        let again = run_cell(&cell, &[MethodKind::LS, MethodKind::FL], &tiny_options(), 4).unwrap();
        assert_eq!(to_csv(&res.rows, false), to_csv(&again.rows, false));
    }
}
