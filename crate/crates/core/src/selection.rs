//! Rank selection by BIC and greedy per-coordinate λ tuning.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NsktrError, Result};
use crate::loss::{log1p_exp, sigmoid, Loss};
use crate::model::{fit, linear_predictors, Dataset, FitOptions, MONOTONE_ABS, MONOTONE_REL};
use crate::regularizer::ModeRegConfig;
use crate::tensor::KruskalModel;

const PROB_CLAMP: f64 = 1e-12;

/// Maximized log-likelihood of the fitted model. Linear: Gaussian with the
/// plug-in variance `σ̂² = RSS/N`. Logistic: Bernoulli with labels mapped to
/// {0, 1}.
pub fn log_likelihood(data: &Dataset, model: &KruskalModel) -> Result<(f64, Option<f64>)> {
    let eta = linear_predictors(data, model)?;
    let n = data.len() as f64;
    match data.loss() {
        Loss::Linear => {
            let rss: f64 = eta.iter().zip(data.responses()).map(|(e, y)| (y - e).powi(2)).sum();
            let sigma2 = rss / n;
            if sigma2 < 1e-300 {
                return Err(NsktrError::DegenerateFit(sigma2));
            }
            let ll = -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - 0.5 * n;
            Ok((ll, Some(sigma2)))
        }
        Loss::Logistic => {
            let ll = eta
                .iter()
                .zip(data.responses())
                .map(|(&e, &y)| {
                    let p = sigmoid(e).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    let t = 0.5 * (y + 1.0);
                    t * p.ln() + (1.0 - t) * (1.0 - p).ln()
                })
                .sum();
            Ok((ll, None))
        }
    }
}

/// `R (Σ I_d − D + 1)`
pub fn effective_params(dims: &[usize], rank: usize) -> usize {
    rank * (dims.iter().sum::<usize>() + 1 - dims.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicResult {
    pub rank: usize,
    pub bic: f64,
    pub log_likelihood: f64,
    pub p_e: usize,
    pub sigma2_hat: Option<f64>,
}

/// `−2 L + ln(N) p_e`
pub fn bic(data: &Dataset, model: &KruskalModel) -> Result<BicResult> {
    let (ll, sigma2_hat) = log_likelihood(data, model)?;
    let p_e = effective_params(data.dims(), model.rank());
    Ok(BicResult {
        rank: model.rank(),
        bic: -2.0 * ll + (data.len() as f64).ln() * p_e as f64,
        log_likelihood: ll,
        p_e,
        sigma2_hat,
    })
}

/// Fits every candidate rank `replicates` times (seeds `base.seed + r`) and
/// returns the rank with the smallest mean BIC, ties going to the smaller
/// rank, plus the curve sorted by rank. A rank whose fit is degenerate
/// scores `+∞`.
pub fn select_rank(data: &Dataset, ranks: &[usize], base: &FitOptions, replicates: usize) -> Result<(usize, Vec<BicResult>)> {
    if ranks.is_empty() {
        return Err(NsktrError::param("ranks", "need at least one candidate"));
    }
    if replicates == 0 {
        return Err(NsktrError::param("replicates", "must be positive"));
    }
    let mut ranks = ranks.to_vec();
    ranks.sort_unstable();
    ranks.dedup();
    let jobs: Vec<(usize, u64)> = ranks
        .iter()
        .flat_map(|&r| (0..replicates as u64).map(move |k| (r, k)))
        .collect();
    let scores: Vec<Option<BicResult>> = jobs
        .par_iter()
        .map(|&(rank, k)| {
            let opts = FitOptions {
                rank,
                seed: base.seed.wrapping_add(k),
                ..base.clone()
            };
            let report = fit(data, &opts)?;
            match bic(data, &report.model) {
                Ok(b) => Ok(Some(b)),
                Err(NsktrError::DegenerateFit(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let n_log = (data.len() as f64).ln();
    let mut curve = Vec::with_capacity(ranks.len());
    for (i, &rank) in ranks.iter().enumerate() {
        let reps = &scores[i * replicates..(i + 1) * replicates];
        let mut ll_sum = 0.0;
        let mut s2_sum = 0.0;
        let mut degenerate = false;
        for s in reps {
            match s {
                None => degenerate = true,
                Some(b) => {
                    ll_sum += b.log_likelihood;
                    s2_sum += b.sigma2_hat.unwrap_or(0.0);
                }
            }
        }
        let p_e = effective_params(data.dims(), rank);
        let (bic, ll) = if degenerate {
            (f64::INFINITY, f64::NAN)
        } else {
            let ll = ll_sum / replicates as f64;
            (-2.0 * ll + n_log * p_e as f64, ll)
        };
        curve.push(BicResult {
            rank,
            bic,
            log_likelihood: ll,
            p_e,
            sigma2_hat: (data.loss() == Loss::Linear && !degenerate).then(|| s2_sum / replicates as f64),
        });
    }
    let best = curve
        .iter()
        .filter(|b| b.bic.is_finite())
        .min_by(|a, b| a.bic.total_cmp(&b.bic).then(a.rank.cmp(&b.rank)))
        .ok_or(NsktrError::DegenerateFit(0.0))?
        .rank;
    Ok((best, curve))
}

/// Descending λ values `ε^{j/L} λ0` for `j = 0..=L`, then `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub lambda0: f64,
    pub epsilon: f64,
    pub steps: usize,
}

impl LambdaGrid {
    /// `λ0 = N`, `ε = 1e-3`, `L = 5`.
    pub fn for_samples(n: usize) -> Self {
        lambda_grid(n as f64, 1e-3, 5).expect("defaults are in range")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn lambda_grid(lambda0: f64, epsilon: f64, steps: usize) -> Result<LambdaGrid> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(NsktrError::param("lambda0", "must be positive"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(NsktrError::param("epsilon", "must lie in (0, 1)"));
    }
    if steps == 0 {
        return Err(NsktrError::param("L", "must be at least 1"));
    }
    let mut values: Vec<f64> = (0..=steps)
        .map(|j| epsilon.powf(j as f64 / steps as f64) * lambda0)
        .collect();
    values.push(0.0);
    Ok(LambdaGrid {
        values,
        lambda0,
        epsilon,
        steps,
    })
}

/// Which of `(λ1, λ2, λ3)` a search tunes; the others stay at their
/// starting value (zero).
pub type LambdaMask = [bool; 3];

pub const ALL_LAMBDAS: LambdaMask = [true, true, true];

/// Held-out loss: mean squared error (linear) or mean deviance (logistic).
pub fn validation_loss(data: &Dataset, model: &KruskalModel) -> Result<f64> {
    let eta = linear_predictors(data, model)?;
    let total: f64 = eta
        .iter()
        .zip(data.responses())
        .map(|(&e, &y)| match data.loss() {
            Loss::Linear => (y - e).powi(2),
            Loss::Logistic => 2.0 * log1p_exp(-y * e),
        })
        .sum();
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub mode: usize,
    /// 0, 1, 2 for λ1, λ2, λ3.
    pub coordinate: usize,
    pub lambda: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedySearch {
    pub configs: Vec<ModeRegConfig>,
    pub steps: Vec<GreedyStep>,
    pub fits: usize,
    /// Fits whose objective trace increased beyond the monotonicity slack.
    pub non_monotone: usize,
}

/// Coordinate-wise search: for each mode in order and each unmasked λ in
/// the order λ1, λ2, λ3, every grid value is fit on `train` (the other
/// untuned λ at zero, tuned ones frozen) and the value with the lowest
/// validation loss is kept. Ties go to the smaller λ. Nonnegativity flags
/// come from `base.per_mode`.
pub fn greedy_lambda_search(
    train: &Dataset,
    validation: &Dataset,
    base: &FitOptions,
    grid: &LambdaGrid,
    mask: LambdaMask,
) -> Result<GreedySearch> {
    if grid.is_empty() {
        return Err(NsktrError::param("grid", "must not be empty"));
    }
    if train.dims() != validation.dims() {
        return Err(NsktrError::ShapeMismatch("train and validation dims differ".into()));
    }
    let ndims = train.ndims();
    let mut configs: Vec<ModeRegConfig> = base
        .resolved_modes(ndims)?
        .into_iter()
        .map(|c| ModeRegConfig::least_squares().with_nonneg(c.nonneg))
        .collect();
    let counter = AtomicUsize::new(0);
    let non_monotone = AtomicUsize::new(0);
    let mut steps = Vec::new();
    for mode in 0..ndims {
        for coordinate in (0..3).filter(|&k| mask[k]) {
            let scored: Vec<Result<(f64, f64)>> = grid
                .values
                .par_iter()
                .map(|&lambda| {
                    let mut modes = configs.clone();
                    set_lambda(&mut modes[mode], coordinate, lambda);
                    let opts = FitOptions {
                        per_mode: modes,
                        ..base.clone()
                    };
                    counter.fetch_add(1, Ordering::Relaxed);
                    let report = fit(train, &opts)?;
                    if !report.is_monotone(MONOTONE_REL, MONOTONE_ABS) {
                        non_monotone.fetch_add(1, Ordering::Relaxed);
                    }
                    Ok((lambda, validation_loss(validation, &report.model)?))
                })
                .collect();
            let mut best: Option<(f64, f64)> = None;
            for s in scored {
                match s {
                    Ok((lambda, loss)) if loss.is_finite() => {
                        let better = match best {
                            None => true,
                            Some((bl, bv)) => loss < bv || (loss == bv && lambda < bl),
                        };
                        if better {
                            best = Some((lambda, loss));
                        }
                    }
                    Ok(_) => {}
                    Err(e) => log::warn!("fit failed for mode {mode} λ{}: {e}", coordinate + 1),
                }
            }
            match best {
                Some((lambda, loss)) => {
                    set_lambda(&mut configs[mode], coordinate, lambda);
                    steps.push(GreedyStep {
                        mode,
                        coordinate,
                        lambda,
                        validation_loss: loss,
                    });
                }
                None => log::warn!("every grid value failed for mode {mode} λ{}; keeping 0", coordinate + 1),
            }
        }
    }
    Ok(GreedySearch {
        configs,
        steps,
        fits: counter.into_inner(),
        non_monotone: non_monotone.into_inner(),
    })
}

fn set_lambda(cfg: &mut ModeRegConfig, coordinate: usize, value: f64) {
    match coordinate {
        0 => cfg.lambda1 = value,
        1 => cfg.lambda2 = value,
        _ => cfg.lambda3 = value,
    }
}
