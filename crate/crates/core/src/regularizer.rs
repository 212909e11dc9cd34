//! Per-mode hybrid penalty
//! `λ1‖β‖₁ + λ2‖Dβ‖₁ + (λ3/2)‖β‖₂² + ι≥0(β)` and its building blocks.

use serde::{Deserialize, Serialize};

use crate::error::{NsktrError, Result};

/// Penalty weights for one mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeRegConfig {
    /// ℓ1 (sparsity) weight.
    pub lambda1: f64,
    /// Total-variation weight on first differences within each factor column.
    pub lambda2: f64,
    /// Ridge weight.
    pub lambda3: f64,
    /// Restrict the factor to the nonnegative orthant.
    pub nonneg: bool,
}

impl ModeRegConfig {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, nonneg: bool) -> Result<Self> {
        let cfg = Self {
            lambda1,
            lambda2,
            lambda3,
            nonneg,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NsktrError::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// No penalty at all.
    pub fn least_squares() -> Self {
        Self::default()
    }

    pub fn lasso(lambda1: f64) -> Self {
        Self {
            lambda1,
            ..Self::default()
        }
    }

    pub fn total_variation(lambda2: f64) -> Self {
        Self {
            lambda2,
            ..Self::default()
        }
    }

    pub fn fused_lasso(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..Self::default()
        }
    }

    pub fn elastic_net(lambda1: f64, lambda3: f64) -> Self {
        Self {
            lambda1,
            lambda3,
            ..Self::default()
        }
    }

    pub fn with_nonneg(self, nonneg: bool) -> Self {
        Self { nonneg, ..self }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0 && self.lambda3 == 0.0 && !self.nonneg
    }
}

/// First-order differences of an `I_d x R` factor, taken down each column
/// separately: the matrix `I_R ⊗ Δ` with `Δ` the `(I_d-1) x I_d` bidiagonal
/// `(-1, +1)` operator. Applied matrix-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferenceOperator {
    len: usize,
    rank: usize,
}

impl DifferenceOperator {
    pub fn new(len: usize, rank: usize) -> Result<Self> {
        if len == 0 || rank == 0 {
            return Err(NsktrError::InvalidDims(format!(
                "difference operator needs positive sizes, got {len}x{rank}"
            )));
        }
        Ok(Self { len, rank })
    }

    /// Length of the factor mode (`I_d`).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Number of columns, `I_d · R`.
    pub fn input_len(&self) -> usize {
        self.len * self.rank
    }

    /// Number of rows, `(I_d - 1) · R`.
    pub fn output_len(&self) -> usize {
        (self.len - 1) * self.rank
    }

    fn check(expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(NsktrError::LengthMismatch { expected, actual });
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Self::check(self.input_len(), v.len())?;
        let mut out = vec![0.0; self.output_len()];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    pub fn apply_transpose(&self, w: &[f64]) -> Result<Vec<f64>> {
        Self::check(self.output_len(), w.len())?;
        let mut out = vec![0.0; self.input_len()];
        self.apply_transpose_into(w, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        let m = self.len - 1;
        for r in 0..self.rank {
            let col = &v[r * self.len..(r + 1) * self.len];
            let dst = &mut out[r * m..(r + 1) * m];
            for (o, pair) in dst.iter_mut().zip(col.windows(2)) {
                *o = pair[1] - pair[0];
            }
        }
    }

    pub(crate) fn apply_transpose_into(&self, w: &[f64], out: &mut [f64]) {
        let m = self.len - 1;
        for r in 0..self.rank {
            let src = &w[r * m..(r + 1) * m];
            let dst = &mut out[r * self.len..(r + 1) * self.len];
            dst.iter_mut().for_each(|o| *o = 0.0);
            for (i, &wi) in src.iter().enumerate() {
                dst[i] -= wi;
                dst[i + 1] += wi;
            }
        }
    }

    /// Diagonal and sub-diagonal of one tridiagonal block of `DᵀD`; every
    /// block is identical.
    pub(crate) fn gram_block(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len;
        let mut diag = vec![2.0; n];
        if n == 1 {
            diag[0] = 0.0;
        } else {
            diag[0] = 1.0;
            diag[n - 1] = 1.0;
        }
        (diag, vec![-1.0; n - 1])
    }

    /// Adds `scale · DᵀD` to a dense `I_dR x I_dR` matrix.
    pub(crate) fn add_gram_to(&self, m: &mut nalgebra::DMatrix<f64>, scale: f64) {
        let (diag, off) = self.gram_block();
        for r in 0..self.rank {
            let o = r * self.len;
            for i in 0..self.len {
                m[(o + i, o + i)] += scale * diag[i];
            }
            for i in 0..self.len - 1 {
                m[(o + i + 1, o + i)] += scale * off[i];
                m[(o + i, o + i + 1)] += scale * off[i];
            }
        }
    }

    /// Explicit dense matrix; only intended for tests and small sizes.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.output_len(), self.input_len());
        let m = self.len - 1;
        for r in 0..self.rank {
            for i in 0..m {
                d[(r * m + i, r * self.len + i)] = -1.0;
                d[(r * m + i, r * self.len + i + 1)] = 1.0;
            }
        }
        d
    }
}

/// `sign(v) · max(|v| - beta, 0)`, the proximal map of `beta‖·‖₁`.
pub fn soft_threshold(v: &[f64], beta: f64) -> Vec<f64> {
    v.iter().map(|&x| soft_threshold_scalar(x, beta)).collect()
}

#[inline]
pub fn soft_threshold_scalar(x: f64, beta: f64) -> f64 {
    if x > beta {
        x - beta
    } else if x < -beta {
        x + beta
    } else {
        0.0
    }
}

pub fn project_nonneg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Value of the hybrid penalty at `beta = vec(B_d)`. Returns `+∞` when the
/// nonnegativity constraint is active and violated.
pub fn penalty_value(beta: &[f64], cfg: &ModeRegConfig, op: &DifferenceOperator) -> Result<f64> {
    DifferenceOperator::check(op.input_len(), beta.len())?;
    if cfg.nonneg && beta.iter().any(|&b| b < 0.0) {
        return Ok(f64::INFINITY);
    }
    let mut value = 0.0;
    if cfg.lambda1 != 0.0 {
        value += cfg.lambda1 * beta.iter().map(|b| b.abs()).sum::<f64>();
    }
    if cfg.lambda2 != 0.0 {
        let tv: f64 = op.apply(beta)?.iter().map(|b| b.abs()).sum();
        value += cfg.lambda2 * tv;
    }
    if cfg.lambda3 != 0.0 {
        value += 0.5 * cfg.lambda3 * beta.iter().map(|b| b * b).sum::<f64>();
    }
    Ok(value)
}
