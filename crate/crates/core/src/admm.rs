//! ADMM solver for the per-mode subproblem
//!
//! ```text
//! min_x  g(x) + λ1‖z1‖₁ + λ2‖z2‖₁ + (λ3/2)‖x‖²
//! s.t.   x ≥ 0 (optional),  x − z1 = 0,  D x − z2 = 0
//! ```
//!
//! where `g` is the least-squares or logistic loss of a design matrix `A`
//! (one row per sample). The linear x-update solves with a Cholesky factor of
//! `M = AᵀA + (ρ+λ3)I + ρDᵀD` computed once per call; the logistic x-update
//! runs Newton's method with backtracking, switching to a Woodbury solve of
//! the Hessian when there are fewer samples than unknowns.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{NsktrError, Result};
use crate::loss::{check_labels, log1p_exp, sigmoid, Loss};
use crate::regularizer::{penalty_value, soft_threshold_scalar, DifferenceOperator, ModeRegConfig};
use crate::tensor::{Matrix, Vector};

/// Backtracking line-search parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// Sufficient-decrease fraction, in (0, 0.5).
    pub alpha: f64,
    /// Step shrink factor, in (0, 1).
    pub shrink: f64,
    pub max_halvings: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            shrink: 0.5,
            max_halvings: 50,
        }
    }
}

/// Where the nonnegativity constraint enters the splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonnegHandling {
    /// `z1 = [soft(x + u1/ρ, λ1/ρ)]₊`, the exact prox of `λ1‖·‖₁ + ι≥0`;
    /// the x-update is unconstrained.
    #[default]
    Prox,
    /// Clamp the x-update, `x = [M⁻¹b]₊`, and keep the plain soft-threshold
    /// for z1. Cheaper but its fixed points need not be optimal.
    ProjectX,
}

/// How the ADMM penalty used in a solve is derived from `AdmmOptions::rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoRule {
    /// Use `rho` as given.
    #[default]
    Fixed,
    /// `rho · c` with `c = tr(AᵀA) / I_dR`, the mean curvature of the data
    /// term (a quarter of that for the logistic loss). This is ADMM with
    /// penalty `rho` on the objective divided by `c`, and the dual
    /// residuals are measured in that normalized problem, `s = rho Δz`.
    /// Fixed for the whole solve, so the factorization is still reused.
    DesignScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub rho: f64,
    pub rho_rule: RhoRule,
    pub max_iters: usize,
    pub tol: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub line_search: LineSearch,
    pub nonneg: NonnegHandling,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            rho_rule: RhoRule::Fixed,
            max_iters: 500,
            tol: 1e-5,
            newton_tol: 1e-5,
            newton_max_iters: 50,
            line_search: LineSearch::default(),
            nonneg: NonnegHandling::default(),
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(NsktrError::param("rho", format!("must be > 0, got {}", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(NsktrError::param("admm_tol", format!("must be > 0, got {}", self.tol)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(NsktrError::param("newton_tol", "must be > 0"));
        }
        if self.max_iters == 0 || self.newton_max_iters == 0 {
            return Err(NsktrError::param("max_iters", "must be positive"));
        }
        let ls = &self.line_search;
        if !(ls.alpha > 0.0 && ls.alpha < 0.5) {
            return Err(NsktrError::param("line_search.alpha", "must lie in (0, 0.5)"));
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(NsktrError::param("line_search.shrink", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Full ADMM iterate plus the residual norms of the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub iters: usize,
    /// `(‖x − z1‖₂, ‖Dx − z2‖₂)`
    pub primal_residuals: (f64, f64),
    /// `(‖ρ(z1 − z1_prev)‖₂, ‖ρ(z2 − z2_prev)‖₂)`
    pub dual_residuals: (f64, f64),
    pub converged: bool,
}

impl AdmmState {
    /// Starts at `x` with consistent splitting variables and zero duals.
    pub fn from_point(x: Vec<f64>, diff: &DifferenceOperator) -> Result<Self> {
        let z2 = diff.apply(&x)?;
        Ok(Self {
            z1: x.clone(),
            u1: vec![0.0; x.len()],
            u2: vec![0.0; z2.len()],
            x,
            z2,
            iters: 0,
            primal_residuals: (0.0, 0.0),
            dual_residuals: (0.0, 0.0),
            converged: false,
        })
    }

    pub fn zeros(diff: &DifferenceOperator) -> Self {
        Self::from_point(vec![0.0; diff.input_len()], diff).expect("lengths agree by construction")
    }

    pub fn max_residual(&self) -> f64 {
        let (r1, r2) = self.primal_residuals;
        let (s1, s2) = self.dual_residuals;
        r1.max(r2).max(s1).max(s2)
    }

    fn check_shape(&self, diff: &DifferenceOperator) -> Result<()> {
        let n = diff.input_len();
        let m = diff.output_len();
        for (got, want) in [
            (self.x.len(), n),
            (self.z1.len(), n),
            (self.u1.len(), n),
            (self.z2.len(), m),
            (self.u2.len(), m),
        ] {
            if got != want {
                return Err(NsktrError::LengthMismatch {
                    expected: want,
                    actual: got,
                });
            }
        }
        Ok(())
    }
}

/// One per-mode subproblem: design `A` (N x I_dR), responses, loss and
/// penalty.
#[derive(Debug, Clone, Copy)]
pub struct Subproblem<'a> {
    pub a: &'a Matrix,
    pub y: &'a [f64],
    pub loss: Loss,
    pub cfg: ModeRegConfig,
    pub diff: DifferenceOperator,
}

impl<'a> Subproblem<'a> {
    /// Penalty actually used when solving with `opts`.
    pub fn effective_rho(&self, opts: &AdmmOptions) -> f64 {
        match opts.rho_rule {
            RhoRule::Fixed => opts.rho,
            RhoRule::DesignScaled => {
                let n = self.a.ncols().max(1) as f64;
                let mean = self.a.iter().map(|v| v * v).sum::<f64>() / n;
                let curvature = match self.loss {
                    Loss::Linear => mean,
                    Loss::Logistic => 0.25 * mean,
                };
                // an all-zero design leaves only the penalty terms
                if curvature > 0.0 { opts.rho * curvature } else { opts.rho }
            }
        }
    }

    pub fn new(
        a: &'a Matrix,
        y: &'a [f64],
        loss: Loss,
        cfg: ModeRegConfig,
        diff: DifferenceOperator,
    ) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(NsktrError::ShapeMismatch(format!(
                "design has {} rows but {} responses",
                a.nrows(),
                y.len()
            )));
        }
        if a.ncols() != diff.input_len() {
            return Err(NsktrError::ShapeMismatch(format!(
                "design has {} columns, difference operator expects {}",
                a.ncols(),
                diff.input_len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(NsktrError::NonFinite("design matrix"));
        }
        check_labels(loss, y)?;
        cfg.validate()?;
        Ok(Self {
            a,
            y,
            loss,
            cfg,
            diff,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Data term `g(x)`.
    pub fn loss_value(&self, x: &[f64]) -> f64 {
        let ax = self.a * Vector::from_column_slice(x);
        ax.iter()
            .zip(self.y)
            .map(|(&eta, &y)| self.loss.value(y, eta))
            .sum()
    }

    /// `g(x) + h(x)`; `+∞` when the nonnegativity constraint is violated.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let pen = penalty_value(x, &self.cfg, &self.diff).expect("length checked at construction");
        self.loss_value(x) + pen
    }
}

/// Cached pieces of the linear x-update: `Aᵀy` and the Cholesky factor of
/// `M`, which does not change across ADMM iterations.
pub struct LinearXUpdate {
    aty: Vector,
    chol: Cholesky<f64, nalgebra::Dyn>,
    rho: f64,
    nonneg: bool,
    diff: DifferenceOperator,
}

/// `AᵀA` through an explicit transpose, which routes to the blocked matrix
/// product instead of column-by-column dot products.
fn gram(a: &Matrix) -> Matrix {
    a.transpose() * a
}

impl LinearXUpdate {
    /// `project` clamps every update to the nonnegative orthant.
    pub fn new(sub: &Subproblem<'_>, rho: f64, project: bool) -> Result<Self> {
        let mut m = gram(sub.a);
        for i in 0..m.nrows() {
            m[(i, i)] += rho + sub.cfg.lambda3;
        }
        sub.diff.add_gram_to(&mut m, rho);
        let chol = Cholesky::new(m).ok_or(NsktrError::Factorization(
            "M = AᵀA + (ρ+λ3)I + ρDᵀD is not positive definite",
        ))?;
        let aty = sub.a.tr_mul(&Vector::from_column_slice(sub.y));
        Ok(Self {
            aty,
            chol,
            rho,
            nonneg: project,
            diff: sub.diff,
        })
    }

    /// `x = M⁻¹ bᵏ`, clamped to `[·]₊` when projecting, with
    /// `bᵏ = Aᵀy + ρ(z1 − u1/ρ) + ρDᵀ(z2 − u2/ρ)`.
    pub fn update(&self, z1: &[f64], z2: &[f64], u1: &[f64], u2: &[f64]) -> Vec<f64> {
        let rho = self.rho;
        let c2: Vec<f64> = z2.iter().zip(u2).map(|(z, u)| rho * z - u).collect();
        let mut b = vec![0.0; self.aty.len()];
        self.diff.apply_transpose_into(&c2, &mut b);
        for i in 0..b.len() {
            b[i] += self.aty[i] + rho * z1[i] - u1[i];
        }
        let mut x = Vector::from_vec(b);
        self.chol.solve_mut(&mut x);
        let mut x: Vec<f64> = x.data.into();
        if self.nonneg {
            clamp_nonneg(&mut x);
        }
        x
    }
}

fn clamp_nonneg(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Symmetric tridiagonal matrix; `off[i]` couples entries `i` and `i+1`.
#[derive(Debug, Clone)]
struct Tridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiagonal {
    /// `P = (ρ+λ3)I + ρDᵀD`, block tridiagonal with zero coupling between
    /// factor columns.
    fn penalty_block(diff: &DifferenceOperator, rho: f64, lambda3: f64) -> Self {
        let (gd, go) = diff.gram_block();
        let n = diff.len();
        let mut diag = Vec::with_capacity(diff.input_len());
        let mut off = Vec::with_capacity(diff.input_len().saturating_sub(1));
        for r in 0..diff.rank() {
            diag.extend(gd.iter().map(|g| rho + lambda3 + rho * g));
            off.extend(go.iter().map(|g| rho * g));
            if r + 1 < diff.rank() {
                off.push(0.0);
            }
        }
        debug_assert_eq!(diag.len(), n * diff.rank());
        Self { diag, off }
    }

    /// The principal submatrix on `idx` (sorted).
    fn restrict(&self, idx: &[usize]) -> Self {
        let diag = idx.iter().map(|&i| self.diag[i]).collect();
        let off = idx
            .windows(2)
            .map(|w| if w[1] == w[0] + 1 { self.off[w[0]] } else { 0.0 })
            .collect();
        Self { diag, off }
    }

    #[cfg(test)]
    fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if i + 1 == j {
            self.off[i]
        } else if j + 1 == i {
            self.off[j]
        } else {
            0.0
        }
    }

    /// Thomas algorithm; `P` is strictly diagonally dominant so no pivoting
    /// is needed.
    fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.diag.len();
        if n == 0 {
            return;
        }
        let mut c = vec![0.0; n];
        let mut denom = self.diag[0];
        rhs[0] /= denom;
        for i in 1..n {
            c[i - 1] = self.off[i - 1] / denom;
            denom = self.diag[i] - self.off[i - 1] * c[i - 1];
            rhs[i] = (rhs[i] - self.off[i - 1] * rhs[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= c[i] * rhs[i + 1];
        }
    }
}

/// How a Newton system `H Δ = −∇` is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianSolve {
    /// Pick Woodbury when there are fewer samples than free unknowns.
    Auto,
    /// Form `H` and factor it.
    Direct,
    /// `H⁻¹ = P⁻¹ − P⁻¹AᵀS(I + S A P⁻¹ Aᵀ S)⁻¹ S A P⁻¹` with `S = W^{1/2}`.
    Woodbury,
}

/// Logistic x-update: minimizes
/// `L_x(x) = Σ log(1+exp(−y_i a_iᵀx)) + (λ3/2)‖x‖² + (ρ/2)‖x − z1 + u1/ρ‖²
///          + (ρ/2)‖Dx − z2 + u2/ρ‖²`
/// by Newton's method.
pub struct LogisticXUpdate<'a> {
    sub: Subproblem<'a>,
    rho: f64,
    opts: AdmmOptions,
    penalty: Tridiagonal,
    project: bool,
    pub solve_mode: HessianSolve,
}

/// `(z1 − u1/ρ, z2 − u2/ρ)`, the centers of the two augmented quadratics.
#[derive(Debug, Clone)]
pub struct Anchors {
    c1: Vec<f64>,
    c2: Vec<f64>,
}

impl Anchors {
    pub fn new(z1: &[f64], z2: &[f64], u1: &[f64], u2: &[f64], rho: f64) -> Self {
        Self {
            c1: z1.iter().zip(u1).map(|(z, u)| z - u / rho).collect(),
            c2: z2.iter().zip(u2).map(|(z, u)| z - u / rho).collect(),
        }
    }
}

impl<'a> LogisticXUpdate<'a> {
    /// Uses `opts.rho` as given; `solve_subproblem` passes options whose
    /// `rho` is already the effective value.
    pub fn new(sub: Subproblem<'a>, opts: &AdmmOptions) -> Self {
        Self {
            penalty: Tridiagonal::penalty_block(&sub.diff, opts.rho, sub.cfg.lambda3),
            project: sub.cfg.nonneg && opts.nonneg == NonnegHandling::ProjectX,
            sub,
            rho: opts.rho,
            opts: *opts,
            solve_mode: HessianSolve::Auto,
        }
    }

    fn margins(&self, x: &[f64]) -> Vector {
        let mut m = self.sub.a * Vector::from_column_slice(x);
        for (mi, &y) in m.iter_mut().zip(self.sub.y) {
            *mi *= y;
        }
        m
    }

    pub fn value(&self, x: &[f64], anchors: &Anchors) -> f64 {
        let data: f64 = self.margins(x).iter().map(|&m| log1p_exp(-m)).sum();
        let dx = self.sub.diff.apply(x).expect("length checked");
        let ridge: f64 = x.iter().map(|v| v * v).sum();
        let q1: f64 = x.iter().zip(&anchors.c1).map(|(a, c)| (a - c).powi(2)).sum();
        let q2: f64 = dx.iter().zip(&anchors.c2).map(|(a, c)| (a - c).powi(2)).sum();
        data + 0.5 * self.sub.cfg.lambda3 * ridge + 0.5 * self.rho * (q1 + q2)
    }

    /// `−Σ y_i a_i / (1 + exp(y_i a_iᵀx)) + ρ((1 + λ3/ρ)x − z1 + u1/ρ) + ρDᵀ(Dx − z2 + u2/ρ)`
    pub fn gradient(&self, x: &[f64], anchors: &Anchors) -> Vec<f64> {
        let m = self.margins(x);
        let coef = Vector::from_iterator(
            m.len(),
            m.iter().zip(self.sub.y).map(|(&mi, &y)| -y * sigmoid(-mi)),
        );
        let data = self.sub.a.tr_mul(&coef);
        let rho = self.rho;
        let dx = self.sub.diff.apply(x).expect("length checked");
        let r2: Vec<f64> = dx.iter().zip(&anchors.c2).map(|(a, c)| rho * (a - c)).collect();
        let mut g = self.sub.diff.apply_transpose(&r2).expect("length checked");
        for i in 0..g.len() {
            g[i] += data[i] + self.sub.cfg.lambda3 * x[i] + rho * (x[i] - anchors.c1[i]);
        }
        g
    }

    /// Logistic curvature weights `W_ii = e^{m_i} / (1 + e^{m_i})²`.
    fn weights(&self, x: &[f64]) -> Vec<f64> {
        self.margins(x)
            .iter()
            .map(|&m| sigmoid(m) * sigmoid(-m))
            .collect()
    }

    /// Dense Hessian `AᵀWA + (ρ+λ3)I + ρDᵀD`.
    pub fn hessian(&self, x: &[f64]) -> Matrix {
        self.hessian_with(&self.weights(x))
    }

    fn hessian_with(&self, w: &[f64]) -> Matrix {
        let mut sa = self.sub.a.clone();
        for (i, &wi) in w.iter().enumerate() {
            let s = wi.sqrt();
            sa.row_mut(i).scale_mut(s);
        }
        let mut h = gram(&sa);
        let n = h.nrows();
        for i in 0..n {
            h[(i, i)] += self.penalty.diag[i];
            if i + 1 < n {
                h[(i, i + 1)] += self.penalty.off[i];
                h[(i + 1, i)] += self.penalty.off[i];
            }
        }
        h
    }

    /// Solves `H_FF d = rhs` on the free index set `free` (sorted). Returns
    /// `d` in the compressed ordering.
    pub fn solve_hessian(&self, x: &[f64], free: &[usize], rhs: &[f64], mode: HessianSolve) -> Result<Vec<f64>> {
        let w = self.weights(x);
        let nfree = free.len();
        let n_samples = self.sub.a.nrows();
        let use_woodbury = match mode {
            HessianSolve::Auto => n_samples < nfree,
            HessianSolve::Direct => false,
            HessianSolve::Woodbury => true,
        };
        if nfree == 0 {
            return Ok(Vec::new());
        }
        let a_f = if nfree == self.sub.dim() {
            self.sub.a.clone()
        } else {
            self.sub.a.select_columns(free)
        };
        if use_woodbury {
            let p = self.penalty.restrict(free);
            // P⁻¹ A_Fᵀ, one column per sample
            let mut pinv_at = a_f.transpose();
            for mut col in pinv_at.column_iter_mut() {
                p.solve_in_place(col.as_mut_slice());
            }
            let s: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
            let mut k = &a_f * &pinv_at;
            for i in 0..n_samples {
                for j in 0..n_samples {
                    k[(i, j)] *= s[i] * s[j];
                }
                k[(i, i)] += 1.0;
            }
            let chol = Cholesky::new(k).ok_or(NsktrError::Factorization("Woodbury capacitance matrix"))?;
            let mut p_rhs = rhs.to_vec();
            p.solve_in_place(&mut p_rhs);
            let p_rhs = Vector::from_vec(p_rhs);
            let mut t = &a_f * &p_rhs;
            for (ti, si) in t.iter_mut().zip(&s) {
                *ti *= si;
            }
            chol.solve_mut(&mut t);
            for (ti, si) in t.iter_mut().zip(&s) {
                *ti *= si;
            }
            let corr = &pinv_at * t;
            Ok(p_rhs.iter().zip(corr.iter()).map(|(a, b)| a - b).collect())
        } else {
            let h_full = self.hessian_with(&w);
            let h = if nfree == self.sub.dim() {
                h_full
            } else {
                h_full.select_rows(free).select_columns(free)
            };
            let chol = Cholesky::new(h).ok_or(NsktrError::Factorization("logistic Hessian"))?;
            let d = chol.solve(&Vector::from_column_slice(rhs));
            Ok(d.data.into())
        }
    }

    /// Newton iterations from `x0`. The first step is always taken; the
    /// decrement test applies from the second on, since a warm start is
    /// already close enough to pass it without tracking the new anchors.
    /// When projecting, coordinates sitting at zero with a nonnegative
    /// gradient are held fixed, the Newton system is solved on the rest, and
    /// every trial point is projected, `x ← [x + tΔx]₊`.
    pub fn update(&self, x0: &[f64], anchors: &Anchors) -> Result<Vec<f64>> {
        let nonneg = self.project;
        let n = x0.len();
        let mut x = x0.to_vec();
        if nonneg {
            clamp_nonneg(&mut x);
        }
        let mut fx = self.value(&x, anchors);
        let all: Vec<usize> = (0..n).collect();
        let ls = self.opts.line_search;
        for it in 0..self.opts.newton_max_iters {
            let g = self.gradient(&x, anchors);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NsktrError::NonFinite("logistic gradient"));
            }
            let free: Vec<usize> = if nonneg {
                (0..n).filter(|&i| x[i] > 0.0 || g[i] < 0.0).collect()
            } else {
                all.clone()
            };
            let neg_g: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            let step = self.solve_hessian(&x, &free, &neg_g, self.solve_mode)?;
            let mut dx = vec![0.0; n];
            for (&i, &s) in free.iter().zip(&step) {
                dx[i] = s;
            }
            let eta: f64 = -g.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>();
            if eta.abs() <= self.opts.newton_tol && (it > 0 || eta.abs() <= f64::EPSILON * (1.0 + fx.abs())) {
                break;
            }
            let mut t = 1.0;
            let mut halvings = 0;
            let mut accepted = false;
            loop {
                let mut trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + t * d).collect();
                if nonneg {
                    clamp_nonneg(&mut trial);
                }
                let ft = self.value(&trial, anchors);
                // Armijo along the projected arc; reduces to f + αt∇ᵀΔx
                // without projection.
                let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
                if ft.is_finite() && ft <= fx + ls.alpha * decrease {
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
                halvings += 1;
                if halvings > ls.max_halvings {
                    break;
                }
                t *= ls.shrink;
            }
            if !accepted {
                // Below roundoff the sufficient-decrease test cannot be met;
                // that only signals failure when far from stationarity.
                if eta.abs() <= self.opts.newton_tol {
                    break;
                }
                return Err(NsktrError::LineSearch(ls.max_halvings));
            }
        }
        Ok(x)
    }
}

/// `z1 = soft(x + u1/ρ, λ1/ρ)`, `z2 = soft(Dx + u2/ρ, λ2/ρ)`. With
/// `nonneg_prox` the z1 result is also clamped at zero.
pub fn z_updates(
    x: &[f64],
    diff: &DifferenceOperator,
    u1: &[f64],
    u2: &[f64],
    cfg: &ModeRegConfig,
    rho: f64,
    nonneg_prox: bool,
) -> (Vec<f64>, Vec<f64>) {
    let t1 = cfg.lambda1 / rho;
    let t2 = cfg.lambda2 / rho;
    let z1 = x
        .iter()
        .zip(u1)
        .map(|(&xi, &ui)| {
            let z = soft_threshold_scalar(xi + ui / rho, t1);
            if nonneg_prox { z.max(0.0) } else { z }
        })
        .collect();
    let mut dx = vec![0.0; diff.output_len()];
    diff.apply_into(x, &mut dx);
    let z2 = dx
        .iter()
        .zip(u2)
        .map(|(&di, &ui)| soft_threshold_scalar(di + ui / rho, t2))
        .collect();
    (z1, z2)
}

/// `u1 += ρ(x − z1)`, `u2 += ρ(Dx − z2)`.
pub fn dual_updates(
    x: &[f64],
    z1: &[f64],
    z2: &[f64],
    u1: &mut [f64],
    u2: &mut [f64],
    diff: &DifferenceOperator,
    rho: f64,
) {
    for i in 0..u1.len() {
        u1[i] += rho * (x[i] - z1[i]);
    }
    let mut dx = vec![0.0; diff.output_len()];
    diff.apply_into(x, &mut dx);
    for i in 0..u2.len() {
        u2[i] += rho * (dx[i] - z2[i]);
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Records `r1 = x − z1`, `r2 = Dx − z2`, `s1 = ρ(z1 − z1_prev)`,
/// `s2 = ρ(z2 − z2_prev)` on `state` and reports whether all four norms are
/// at most `tol`.
pub fn convergence_check(
    state: &mut AdmmState,
    prev_z1: &[f64],
    prev_z2: &[f64],
    diff: &DifferenceOperator,
    rho: f64,
    tol: f64,
) -> bool {
    let mut dx = vec![0.0; diff.output_len()];
    diff.apply_into(&state.x, &mut dx);
    state.primal_residuals = (dist(&state.x, &state.z1), dist(&dx, &state.z2));
    state.dual_residuals = (rho * dist(&state.z1, prev_z1), rho * dist(&state.z2, prev_z2));
    state.converged = state.max_residual() <= tol;
    state.converged
}

/// Runs ADMM on `sub`. A warm state's `(x, z1, z2, u1, u2)` seeds the
/// iteration; otherwise everything starts at zero.
///
/// Unless the x-update itself projects ([`NonnegHandling::ProjectX`]), the
/// returned `x` is the final `z1`: it agrees with the last x-update to
/// within the primal residual but carries the exact zeros of the ℓ1 prox and
/// is always feasible.
pub fn solve_subproblem(sub: &Subproblem<'_>, opts: &AdmmOptions, warm: Option<&AdmmState>) -> Result<AdmmState> {
    opts.validate()?;
    let diff = sub.diff;
    let mut state = match warm {
        Some(w) => {
            w.check_shape(&diff)?;
            let mut s = w.clone();
            s.iters = 0;
            s.converged = false;
            s
        }
        None => AdmmState::zeros(&diff),
    };
    if sub.cfg.nonneg {
        clamp_nonneg(&mut state.x);
    }
    let rho = sub.effective_rho(opts);
    let residual_rho = opts.rho;
    let opts = &AdmmOptions {
        rho,
        rho_rule: RhoRule::Fixed,
        ..*opts
    };
    let nonneg_prox = sub.cfg.nonneg && opts.nonneg == NonnegHandling::Prox;
    let project = sub.cfg.nonneg && opts.nonneg == NonnegHandling::ProjectX;

    let linear = match sub.loss {
        Loss::Linear => Some(LinearXUpdate::new(sub, rho, project)?),
        Loss::Logistic => None,
    };
    let logistic = match sub.loss {
        Loss::Logistic => Some(LogisticXUpdate::new(*sub, opts)),
        Loss::Linear => None,
    };

    for k in 0..opts.max_iters {
        state.x = match (&linear, &logistic) {
            (Some(lin), _) => lin.update(&state.z1, &state.z2, &state.u1, &state.u2),
            (_, Some(log)) => {
                let anchors = Anchors::new(&state.z1, &state.z2, &state.u1, &state.u2, rho);
                log.update(&state.x, &anchors)?
            }
            _ => unreachable!(),
        };
        if state.x.iter().any(|v| !v.is_finite()) {
            return Err(NsktrError::NonFinite("ADMM primal iterate"));
        }
        let (z1, z2) = z_updates(&state.x, &diff, &state.u1, &state.u2, &sub.cfg, rho, nonneg_prox);
        let prev_z1 = std::mem::replace(&mut state.z1, z1);
        let prev_z2 = std::mem::replace(&mut state.z2, z2);
        dual_updates(&state.x, &state.z1, &state.z2, &mut state.u1, &mut state.u2, &diff, rho);
        state.iters = k + 1;
        if convergence_check(&mut state, &prev_z1, &prev_z2, &diff, residual_rho, opts.tol) {
            break;
        }
    }
    if !project {
        state.x.clone_from(&state.z1);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::test_util::rng;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn labels(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
    }

    fn tight() -> AdmmOptions {
        AdmmOptions {
            tol: 1e-10,
            max_iters: 20_000,
            ..AdmmOptions::default()
        }
    }

    #[test]
    fn identity_lasso_is_soft_threshold() {
        let a = Matrix::identity(4, 4);
        let y = [5.0, -5.0, 2.0, 0.0];
        let diff = DifferenceOperator::new(4, 1).unwrap();
        let sub = Subproblem::new(&a, &y, Loss::Linear, ModeRegConfig::lasso(1.0), diff).unwrap();
        let st = solve_subproblem(&sub, &tight(), None).unwrap();
        assert!(st.converged);
        for (got, want) in st.x.iter().zip([4.0, -4.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{:?}", st.x);
        }

        let cfg = ModeRegConfig::lasso(1.0).with_nonneg(true);
        let sub = Subproblem::new(&a, &y, Loss::Linear, cfg, diff).unwrap();
        let st = solve_subproblem(&sub, &tight(), None).unwrap();
        for (got, want) in st.x.iter().zip([4.0, 0.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{:?}", st.x);
        }
    }

    #[test]
    fn unregularized_matches_normal_equations() {
        let mut rng = rng(1);
        let a = gaussian(&mut rng, 30, 6);
        let y: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let diff = DifferenceOperator::new(3, 2).unwrap();
        let sub = Subproblem::new(&a, &y, Loss::Linear, ModeRegConfig::least_squares(), diff).unwrap();
        let st = solve_subproblem(&sub, &tight(), None).unwrap();
        let direct = a
            .tr_mul(&a)
            .cholesky()
            .unwrap()
            .solve(&a.tr_mul(&Vector::from_column_slice(&y)));
        for (got, want) in st.x.iter().zip(direct.iter()) {
            assert!((got - want).abs() <= 1e-6 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn linear_x_update_examples() {
        let a = Matrix::zeros(3, 2);
        let y = [0.0; 3];
        let diff = DifferenceOperator::new(2, 1).unwrap();
        let sub = Subproblem::new(&a, &y, Loss::Linear, ModeRegConfig::least_squares(), diff).unwrap();
        let upd = LinearXUpdate::new(&sub, 1.0, false).unwrap();
        assert_eq!(upd.update(&[0.0; 2], &[0.0], &[0.0; 2], &[0.0]), vec![0.0, 0.0]);

        // M = [[3, −1], [−1, 3]], b = (1, 1)
        let a = Matrix::identity(2, 2);
        let y = [1.0, 1.0];
        let sub = Subproblem::new(&a, &y, Loss::Linear, ModeRegConfig::least_squares(), diff).unwrap();
        let upd = LinearXUpdate::new(&sub, 1.0, false).unwrap();
        let x = upd.update(&[0.0; 2], &[0.0], &[0.0; 2], &[0.0]);
        assert_relative_eq!(x[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(x[1], 0.5, epsilon = 1e-14);

        let y = [-4.0, 1.0];
        let sub = Subproblem::new(&a, &y, Loss::Linear, ModeRegConfig::least_squares(), diff).unwrap();
        let free = LinearXUpdate::new(&sub, 1.0, false).unwrap().update(&[0.0; 2], &[0.0], &[0.0; 2], &[0.0]);
        assert!(free[0] < 0.0);
        let clamped = LinearXUpdate::new(&sub, 1.0, true).unwrap().update(&[0.0; 2], &[0.0], &[0.0; 2], &[0.0]);
        // M⁻¹b = (−11/8, −1/8)
        assert_relative_eq!(free[0], -11.0 / 8.0, epsilon = 1e-14);
        assert_relative_eq!(free[1], -1.0 / 8.0, epsilon = 1e-14);
        assert_eq!(clamped, vec![0.0, 0.0]);
    }

    fn logistic_fixture(seed: u64, n: usize, len: usize, rank: usize) -> (Matrix, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = rng(seed);
        let a = gaussian(&mut rng, n, len * rank);
        let y = labels(&mut rng, n);
        let m = (len - 1) * rank;
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
        let (z1, u1, z2, u2) = (draw(len * rank), draw(len * rank), draw(m), draw(m));
        (a, y, z1, u1, z2, u2)
    }

    #[test]
    fn logistic_gradient_and_hessian_match_finite_differences() {
        for seed in 0..5 {
            let (a, y, z1, u1, z2, u2) = logistic_fixture(seed, 20, 3, 2);
            let cfg = ModeRegConfig::new(0.3, 0.7, 0.4, false).unwrap();
            let diff = DifferenceOperator::new(3, 2).unwrap();
            let sub = Subproblem::new(&a, &y, Loss::Logistic, cfg, diff).unwrap();
            let opts = AdmmOptions {
                rho: 1.7,
                ..AdmmOptions::default()
            };
            let upd = LogisticXUpdate::new(sub, &opts);
            let anchors = Anchors::new(&z1, &z2, &u1, &u2, opts.rho);
            let mut rng = rng(100 + seed);
            for _ in 0..10 {
                let x: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
                let g = upd.gradient(&x, &anchors);
                let h = upd.hessian(&x);
                let eps = 1e-5;
                for i in 0..6 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += eps;
                    xm[i] -= eps;
                    let fd = (upd.value(&xp, &anchors) - upd.value(&xm, &anchors)) / (2.0 * eps);
                    assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "grad {i}: {fd} vs {}", g[i]);
                    let gp = upd.gradient(&xp, &anchors);
                    let gm = upd.gradient(&xm, &anchors);
                    for j in 0..6 {
                        let fd = (gp[j] - gm[j]) / (2.0 * eps);
                        assert!((fd - h[(j, i)]).abs() <= 1e-5 * (1.0 + h[(j, i)].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_without_data_is_penalty_only() {
        let a = Matrix::zeros(4, 4);
        let y = [1.0, -1.0, 1.0, 1.0];
        let diff = DifferenceOperator::new(2, 2).unwrap();
        let cfg = ModeRegConfig::new(0.0, 0.0, 0.5, false).unwrap();
        let sub = Subproblem::new(&a, &y, Loss::Logistic, cfg, diff).unwrap();
        let opts = AdmmOptions::default();
        let upd = LogisticXUpdate::new(sub, &opts);
        let (z1, u1, z2, u2) = ([1.0, 2.0, 0.0, -1.0], [0.5, 0.0, 0.0, 1.0], [0.3, -0.2], [0.0, 1.0]);
        let anchors = Anchors::new(&z1, &z2, &u1, &u2, 1.0);
        let x = [0.2, -0.4, 1.0, 0.0];
        let g = upd.gradient(&x, &anchors);
        let dx = diff.apply(&x).unwrap();
        let r2: Vec<f64> = (0..2).map(|i| dx[i] - z2[i] + u2[i]).collect();
        let dt = diff.apply_transpose(&r2).unwrap();
        for i in 0..4 {
            let want = 0.5 * x[i] + (x[i] - z1[i] + u1[i]) + dt[i];
            assert_relative_eq!(g[i], want, epsilon = 1e-14);
        }
    }

    #[test]
    fn woodbury_matches_direct_solve() {
        for seed in 0..5 {
            let (a, y, ..) = logistic_fixture(seed, 5, 10, 3);
            let cfg = ModeRegConfig::new(0.0, 0.0, 0.3, false).unwrap();
            let diff = DifferenceOperator::new(10, 3).unwrap();
            let sub = Subproblem::new(&a, &y, Loss::Logistic, cfg, diff).unwrap();
            let upd = LogisticXUpdate::new(sub, &AdmmOptions::default());
            let mut rng = rng(7 + seed);
            let x: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
            let rhs: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
            let all: Vec<usize> = (0..30).collect();
            let d1 = upd.solve_hessian(&x, &all, &rhs, HessianSolve::Direct).unwrap();
            let d2 = upd.solve_hessian(&x, &all, &rhs, HessianSolve::Woodbury).unwrap();
            for (p, q) in d1.iter().zip(&d2) {
                assert!((p - q).abs() <= 1e-8 * (1.0 + p.abs()));
            }
            // restricted to a free set with gaps
            let free: Vec<usize> = (0..30).filter(|i| i % 4 != 1).collect();
            let r: Vec<f64> = free.iter().map(|&i| rhs[i]).collect();
            let d1 = upd.solve_hessian(&x, &free, &r, HessianSolve::Direct).unwrap();
            let d2 = upd.solve_hessian(&x, &free, &r, HessianSolve::Woodbury).unwrap();
            for (p, q) in d1.iter().zip(&d2) {
                assert!((p - q).abs() <= 1e-8 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn tridiagonal_restriction_and_solve() {
        let diff = DifferenceOperator::new(4, 2).unwrap();
        let t = Tridiagonal::penalty_block(&diff, 2.0, 0.5);
        let mut dense = diff.to_dense().tr_mul(&diff.to_dense()) * 2.0;
        for i in 0..8 {
            dense[(i, i)] += 2.5;
        }
        for i in 0..8 {
            for j in 0..8 {
                assert_relative_eq!(t.get(i, j), dense[(i, j)], epsilon = 1e-14);
            }
        }
        let idx = [0, 1, 3, 4, 6];
        let sub = t.restrict(&idx);
        let mut rhs = vec![1.0, -2.0, 0.5, 3.0, 1.5];
        let want = dense.select_rows(&idx).select_columns(&idx).cholesky().unwrap().solve(&Vector::from_column_slice(&rhs));
        sub.solve_in_place(&mut rhs);
        for (p, q) in rhs.iter().zip(want.iter()) {
            assert_relative_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn z_update_examples() {
        let diff = DifferenceOperator::new(3, 2).unwrap();
        let x = [1.0, 1.0, 1.0, -2.0, -2.0, -2.0];
        let u1 = [0.5, -0.5, 0.0, 1.0, 2.0, -3.0];
        let cfg = ModeRegConfig::total_variation(0.7);
        let (z1, z2) = z_updates(&x, &diff, &u1, &[0.0; 4], &cfg, 2.0, false);
        for i in 0..6 {
            assert_eq!(z1[i], x[i] + u1[i] / 2.0);
        }
        assert!(z2.iter().all(|&v| v == 0.0));

        let cfg = ModeRegConfig::lasso(1.0).with_nonneg(true);
        let (z1, _) = z_updates(&[-3.0, 0.5, 4.0], &DifferenceOperator::new(3, 1).unwrap(), &[0.0; 3], &[0.0; 2], &cfg, 1.0, true);
        assert_eq!(z1, vec![0.0, 0.0, 3.0]);
    }

    #[test]
    fn z1_minimizes_coordinate_objective() {
        let mut rng = rng(5);
        let diff = DifferenceOperator::new(5, 1).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let u1: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let rho = rng.random_range(0.5..3.0);
            let lambda1 = rng.random_range(0.0..4.0);
            let cfg = ModeRegConfig::lasso(lambda1);
            let (z1, _) = z_updates(&x, &diff, &u1, &[0.0; 4], &cfg, rho, false);
            for i in 0..5 {
                let f = |z: f64| lambda1 * z.abs() + 0.5 * rho * (x[i] - z + u1[i] / rho).powi(2);
                let best = f(z1[i]);
                let mut t = -8.0;
                while t <= 8.0 {
                    assert!(best <= f(t) + 1e-12);
                    t += 1e-3;
                }
            }
        }
    }

    #[test]
    fn dual_update_examples() {
        let diff = DifferenceOperator::new(2, 1).unwrap();
        let (mut u1, mut u2) = (vec![0.0, 0.0], vec![0.0]);
        dual_updates(&[1.0, -1.0], &[0.0, 0.0], &[-2.0], &mut u1, &mut u2, &diff, 1.0);
        assert_eq!(u1, vec![1.0, -1.0]);
        assert_eq!(u2, vec![0.0]);

        let (mut u1, mut u2) = (vec![0.5, 0.5], vec![1.0]);
        for _ in 0..4 {
            dual_updates(&[1.0, 3.0], &[0.0, 1.0], &[1.0], &mut u1, &mut u2, &diff, 0.5);
        }
        assert_eq!(u1, vec![0.5 + 4.0 * 0.5, 0.5 + 4.0 * 0.5 * 2.0]);
        assert_eq!(u2, vec![1.0 + 4.0 * 0.5 * 1.0]);
    }

    #[test]
    fn convergence_check_examples() {
        let diff = DifferenceOperator::new(2, 1).unwrap();
        let mut st = AdmmState::from_point(vec![1.0, 2.0], &diff).unwrap();
        let (z1, z2) = (st.z1.clone(), st.z2.clone());
        assert!(convergence_check(&mut st, &z1, &z2, &diff, 1.0, 1e-5));

        st.z1[0] += 2e-5;
        let z1 = st.z1.clone();
        assert!(!convergence_check(&mut st, &z1, &z2, &diff, 1.0, 1e-5));
        assert_eq!(st.dual_residuals, (0.0, 0.0));
        assert_relative_eq!(st.primal_residuals.0, 2e-5, epsilon = 1e-15);
    }

    #[test]
    fn converged_state_satisfies_residual_bounds() {
        let mut rng = rng(9);
        let a = gaussian(&mut rng, 40, 8);
        let y: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let diff = DifferenceOperator::new(4, 2).unwrap();
        let cfg = ModeRegConfig::fused_lasso(1.0, 2.0).with_nonneg(true);
        let sub = Subproblem::new(&a, &y, Loss::Linear, cfg, diff).unwrap();
        let st = solve_subproblem(&sub, &AdmmOptions::default(), None).unwrap();
        assert!(st.converged);
        assert!(st.max_residual() <= 1e-5);
        assert!(st.x.iter().all(|&v| v >= 0.0));

        let warm = solve_subproblem(&sub, &AdmmOptions::default(), Some(&st)).unwrap();
        assert!(warm.iters < st.iters);
    }

    #[test]
    fn projected_variant_keeps_iterates_feasible() {
        let mut rng = rng(13);
        let a = gaussian(&mut rng, 40, 6);
        let y = labels(&mut rng, 40);
        let diff = DifferenceOperator::new(3, 2).unwrap();
        let cfg = ModeRegConfig::fused_lasso(0.5, 0.5).with_nonneg(true);
        let opts = AdmmOptions {
            nonneg: NonnegHandling::ProjectX,
            ..AdmmOptions::default()
        };
        for loss in [Loss::Linear, Loss::Logistic] {
            let yy: Vec<f64> = if loss == Loss::Linear { y.iter().map(|v| 2.0 * v).collect() } else { y.clone() };
            let sub = Subproblem::new(&a, &yy, loss, cfg, diff).unwrap();
            let st = solve_subproblem(&sub, &opts, None).unwrap();
            assert!(st.x.iter().all(|&v| v >= 0.0));
            assert!(sub.objective(&st.x).is_finite());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Matrix::identity(2, 2);
        let diff = DifferenceOperator::new(2, 1).unwrap();
        let cfg = ModeRegConfig::least_squares();
        assert!(matches!(
            Subproblem::new(&a, &[1.0, 0.5], Loss::Logistic, cfg, diff),
            Err(NsktrError::InvalidLabel { index: 1, .. })
        ));
        assert!(Subproblem::new(&a, &[1.0], Loss::Linear, cfg, diff).is_err());
        let bad = Matrix::from_element(2, 2, f64::NAN);
        assert!(matches!(
            Subproblem::new(&bad, &[1.0, 1.0], Loss::Linear, cfg, diff),
            Err(NsktrError::NonFinite(_))
        ));
        let opts = AdmmOptions {
            rho: 0.0,
            ..AdmmOptions::default()
        };
        let sub = Subproblem::new(&a, &[1.0, 1.0], Loss::Linear, cfg, diff).unwrap();
        assert!(solve_subproblem(&sub, &opts, None).is_err());
    }
}
