//! Alternating (block Gauss-Seidel) fitting of the Kruskal regression
//! model. Each sweep updates the factors in mode order; the design matrix
//! for mode `d` is built from the freshest factors, so modes `< d` already
//! carry this sweep's values.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{solve_subproblem, AdmmOptions, AdmmState, Subproblem};
use crate::error::{NsktrError, Result};
use crate::loss::{check_labels, sigmoid, Loss};
use crate::regularizer::{penalty_value, DifferenceOperator, ModeRegConfig};
use crate::tensor::{
    inner_product, kruskal_inner_product, kruskal_reconstruct, mttkrp_into, unvec,
    DenseTensor, KrpRows, KruskalModel, Matrix, Vector,
};

/// `N` covariate tensors with scalar responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<DenseTensor>,
    responses: Vec<f64>,
    loss: Loss,
}

impl Dataset {
    pub fn new(samples: Vec<DenseTensor>, responses: Vec<f64>, loss: Loss) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(NsktrError::InvalidDims("a dataset needs at least one sample".into()));
        };
        if samples.len() != responses.len() {
            return Err(NsktrError::LengthMismatch {
                expected: samples.len(),
                actual: responses.len(),
            });
        }
        let dims = first.dims();
        if let Some(i) = samples.iter().position(|s| s.dims() != dims) {
            return Err(NsktrError::ShapeMismatch(format!(
                "sample {i} has dims {:?}, expected {dims:?}",
                samples[i].dims()
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(NsktrError::NonFinite("covariates"));
        }
        check_labels(loss, &responses)?;
        Ok(Self {
            samples,
            responses,
            loss,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> &[usize] {
        self.samples[0].dims()
    }

    pub fn ndims(&self) -> usize {
        self.dims().len()
    }

    pub fn samples(&self) -> &[DenseTensor] {
        &self.samples
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn with_loss(self, loss: Loss) -> Result<Self> {
        Self::new(self.samples, self.responses, loss)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
            indices.iter().map(|&i| self.responses[i]).collect(),
            self.loss,
        )
    }

    /// Seeded random split into `(train, validation)` with
    /// `round(train_fraction · N)` training samples (at least one in each
    /// part when `N ≥ 2`).
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        let n = self.len();
        if n < 2 {
            return Err(NsktrError::param("train_fraction", "need at least two samples to split"));
        }
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(NsktrError::param("train_fraction", "must lie in (0, 1)"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let (train, val) = idx.split_at(n_train);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&val)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Every entry iid uniform on [0, 1).
    RandomUniformNonneg,
    /// Every entry iid standard normal.
    RandomGaussian,
    Warm(KruskalModel),
}

impl Init {
    pub fn name(&self) -> &'static str {
        match self {
            Init::RandomUniformNonneg => "random_uniform_nonneg",
            Init::RandomGaussian => "random_gaussian",
            Init::Warm(_) => "warm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub rank: usize,
    /// One entry per mode. Shorter lists are padded with the unpenalized
    /// configuration when the data's order is known.
    pub per_mode: Vec<ModeRegConfig>,
    pub outer_iters: usize,
    /// Stop once the relative objective change falls below this; `0`
    /// disables the test and runs all `outer_iters` sweeps.
    pub outer_tol: f64,
    pub admm: AdmmOptions,
    pub init: Init,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank: 1,
            per_mode: Vec::new(),
            outer_iters: 100,
            outer_tol: 1e-6,
            admm: AdmmOptions::default(),
            init: Init::RandomUniformNonneg,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn with_rank(self, rank: usize) -> Self {
        Self { rank, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Same penalty on every one of `ndims` modes.
    pub fn with_uniform_modes(self, cfg: ModeRegConfig, ndims: usize) -> Self {
        Self {
            per_mode: vec![cfg; ndims],
            ..self
        }
    }

    pub fn resolved_modes(&self, ndims: usize) -> Result<Vec<ModeRegConfig>> {
        if self.per_mode.len() > ndims {
            return Err(NsktrError::ShapeMismatch(format!(
                "{} mode configurations for {ndims}-way data",
                self.per_mode.len()
            )));
        }
        let mut modes = self.per_mode.clone();
        modes.resize(ndims, ModeRegConfig::default());
        for m in &modes {
            m.validate()?;
        }
        Ok(modes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(NsktrError::param("rank", "must be positive"));
        }
        if self.outer_iters == 0 {
            return Err(NsktrError::param("t_iter", "must be positive"));
        }
        if !(self.outer_tol >= 0.0) {
            return Err(NsktrError::param("outer_tol", "must be >= 0"));
        }
        self.admm.validate()
    }
}

/// Per-(sweep, mode) ADMM summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSummary {
    pub iteration: usize,
    pub mode: usize,
    pub iters: usize,
    pub primal_residuals: (f64, f64),
    pub dual_residuals: (f64, f64),
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative objective change dropped below `outer_tol`.
    Tolerance,
    /// Ran all `outer_iters` sweeps.
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: KruskalModel,
    pub modes: Vec<ModeRegConfig>,
    pub loss: Loss,
    /// Full objective `f + Σ h_d` after each sweep.
    pub objective_trace: Vec<f64>,
    pub subproblem_stats: Vec<SubproblemSummary>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub elapsed: f64,
}

impl FitReport {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one sweep runs")
    }

    /// Every consecutive pair satisfies `next ≤ prev·(1 + rel) + abs`.
    pub fn is_monotone(&self, rel: f64, abs: f64) -> bool {
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + rel) + abs)
    }
}

/// Slack of the outer-objective monotonicity check:
/// `obj[t] ≤ obj[t−1] · (1 + MONOTONE_REL) + MONOTONE_ABS`.
pub const MONOTONE_REL: f64 = 1e-6;
pub const MONOTONE_ABS: f64 = 1e-9;

/// Design matrix for mode `mode`: row `i` is `vec(X_i(d) B_(-d))ᵀ`, so
/// `A · vec(B_d)` reproduces `⟨X_i, ⟦B_1..B_D⟧⟩`.
pub fn assemble_design(data: &Dataset, model: &KruskalModel, mode: usize) -> Result<Matrix> {
    if model.dims() != data.dims() {
        return Err(NsktrError::ShapeMismatch(format!(
            "model dims {:?} vs data dims {:?}",
            model.dims(),
            data.dims()
        )));
    }
    let krp = KrpRows::new(model, mode)?;
    let width = data.dims()[mode] * model.rank();
    let rows: Vec<Vec<f64>> = data
        .samples
        .par_iter()
        .map(|x| {
            let mut row = vec![0.0; width];
            mttkrp_into(x, &krp, mode, &mut row);
            row
        })
        .collect();
    Ok(Matrix::from_fn(data.len(), width, |i, j| rows[i][j]))
}

/// `⟨X_i, B⟩` for every sample.
pub fn linear_predictors(data: &Dataset, model: &KruskalModel) -> Result<Vec<f64>> {
    if model.dims() != data.dims() {
        return Err(NsktrError::ShapeMismatch(format!(
            "model dims {:?} vs data dims {:?}",
            model.dims(),
            data.dims()
        )));
    }
    let b = kruskal_reconstruct(model);
    data.samples.iter().map(|x| inner_product(x, &b)).collect()
}

/// Data-fidelity term `f` for the dataset's loss.
pub fn loss_value(data: &Dataset, model: &KruskalModel) -> Result<f64> {
    Ok(loss_from_predictors(data, &linear_predictors(data, model)?))
}

fn loss_from_predictors(data: &Dataset, eta: &[f64]) -> f64 {
    eta.iter()
        .zip(&data.responses)
        .map(|(&e, &y)| data.loss.value(y, e))
        .sum()
}

fn penalty_total(model: &KruskalModel, modes: &[ModeRegConfig]) -> Result<f64> {
    let mut total = 0.0;
    for (d, cfg) in modes.iter().enumerate() {
        let f = model.factor(d);
        let diff = DifferenceOperator::new(f.nrows(), f.ncols())?;
        total += penalty_value(f.as_slice(), cfg, &diff)?;
    }
    Ok(total)
}

/// `f + Σ_d h_d(vec(B_d))`.
pub fn objective(data: &Dataset, model: &KruskalModel, modes: &[ModeRegConfig]) -> Result<f64> {
    if modes.len() != model.ndims() {
        return Err(NsktrError::ShapeMismatch(format!(
            "{} mode configs for a {}-mode model",
            modes.len(),
            model.ndims()
        )));
    }
    Ok(loss_value(data, model)? + penalty_total(model, modes)?)
}

/// Linear loss: `⟨x, B⟩`. Logistic loss: `Pr(y = 1) = 1 / (1 + exp(−⟨x, B⟩))`.
pub fn predict(model: &KruskalModel, x: &DenseTensor, loss: Loss) -> Result<f64> {
    let eta = kruskal_inner_product(x, model, 0)?;
    Ok(match loss {
        Loss::Linear => eta,
        Loss::Logistic => sigmoid(eta),
    })
}

pub fn initial_model(dims: &[usize], rank: usize, init: &Init, seed: u64) -> Result<KruskalModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match init {
        Init::RandomUniformNonneg => KruskalModel::new(
            dims.iter()
                .map(|&n| Matrix::from_fn(n, rank, |_, _| rng.random::<f64>()))
                .collect(),
        ),
        Init::RandomGaussian => KruskalModel::new(
            dims.iter()
                .map(|&n| Matrix::from_fn(n, rank, |_, _| rng.sample(StandardNormal)))
                .collect(),
        ),
        Init::Warm(m) => {
            if m.dims() != dims || m.rank() != rank {
                return Err(NsktrError::ShapeMismatch(format!(
                    "warm start is {:?} rank {}, expected {dims:?} rank {rank}",
                    m.dims(),
                    m.rank()
                )));
            }
            Ok(m.clone())
        }
    }
}

/// Fitting driver that can also be stepped one sweep at a time.
pub struct Fitter<'a> {
    data: &'a Dataset,
    opts: &'a FitOptions,
    modes: Vec<ModeRegConfig>,
    model: KruskalModel,
    warm: Vec<Option<AdmmState>>,
    sweeps: usize,
    eta: Option<Vec<f64>>,
}

impl<'a> Fitter<'a> {
    pub fn new(data: &'a Dataset, opts: &'a FitOptions) -> Result<Self> {
        opts.validate()?;
        let modes = opts.resolved_modes(data.ndims())?;
        let mut model = initial_model(data.dims(), opts.rank, &opts.init, opts.seed)?;
        // A random start may violate a mode's sign constraint.
        for (d, cfg) in modes.iter().enumerate() {
            if cfg.nonneg {
                let f = model.factor(d).map(|v| v.max(0.0));
                model.set_factor(d, f)?;
            }
        }
        Ok(Self {
            data,
            opts,
            modes,
            warm: vec![None; data.ndims()],
            model,
            sweeps: 0,
            eta: None,
        })
    }

    pub fn model(&self) -> &KruskalModel {
        &self.model
    }

    pub fn modes(&self) -> &[ModeRegConfig] {
        &self.modes
    }

    /// Solves the subproblem for one mode and writes the factor back.
    pub fn update_mode(&mut self, mode: usize) -> Result<SubproblemSummary> {
        let a = assemble_design(self.data, &self.model, mode)?;
        let factor = self.model.factor(mode);
        let (rows, rank) = factor.shape();
        let diff = DifferenceOperator::new(rows, rank)?;
        let sub = Subproblem::new(&a, &self.data.responses, self.data.loss, self.modes[mode], diff)?;
        let start = match self.warm[mode].take() {
            Some(s) => s,
            None => AdmmState::from_point(factor.as_slice().to_vec(), &diff)?,
        };
        let state = solve_subproblem(&sub, &self.opts.admm, Some(&start))?;
        self.model.set_factor(mode, unvec(&state.x, rows, rank)?)?;
        self.eta = Some((&a * Vector::from_column_slice(&state.x)).data.into());
        let summary = SubproblemSummary {
            iteration: self.sweeps,
            mode,
            iters: state.iters,
            primal_residuals: state.primal_residuals,
            dual_residuals: state.dual_residuals,
            converged: state.converged,
        };
        self.warm[mode] = Some(state);
        Ok(summary)
    }

    /// One pass over all modes; returns the objective afterwards.
    pub fn sweep(&mut self, stats: &mut Vec<SubproblemSummary>) -> Result<f64> {
        for mode in 0..self.data.ndims() {
            stats.push(self.update_mode(mode)?);
        }
        // The last design times the new factor gives the current predictors.
        let obj = match &self.eta {
            Some(eta) => loss_from_predictors(self.data, eta) + penalty_total(&self.model, &self.modes)?,
            None => objective(self.data, &self.model, &self.modes)?,
        };
        if !obj.is_finite() {
            return Err(NsktrError::NonFiniteObjective {
                iteration: self.sweeps,
                mode: self.data.ndims() - 1,
            });
        }
        self.sweeps += 1;
        Ok(obj)
    }

    pub fn into_model(self) -> KruskalModel {
        self.model
    }
}

pub fn fit(data: &Dataset, opts: &FitOptions) -> Result<FitReport> {
    let start = Instant::now();
    let mut fitter = Fitter::new(data, opts)?;
    let mut trace = Vec::new();
    let mut stats = Vec::new();
    let mut stop_reason = StopReason::IterationCap;
    for _ in 0..opts.outer_iters {
        let obj = fitter.sweep(&mut stats)?;
        let prev = trace.last().copied();
        trace.push(obj);
        if let Some(prev) = prev {
            let change = (prev - obj).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if opts.outer_tol > 0.0 && change < opts.outer_tol {
                stop_reason = StopReason::Tolerance;
                break;
            }
        }
    }
    let modes = fitter.modes().to_vec();
    Ok(FitReport {
        model: fitter.into_model(),
        modes,
        loss: data.loss,
        objective_trace: trace,
        subproblem_stats: stats,
        converged: stop_reason == StopReason::Tolerance,
        stop_reason,
        elapsed: start.elapsed().as_secs_f64(),
    })
}
