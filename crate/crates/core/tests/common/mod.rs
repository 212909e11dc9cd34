//! Test-only oracles, independent of the library's solver paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nsktr::loss::{log1p_exp, sigmoid};
use nsktr::{DenseTensor, KruskalModel, Loss, Matrix, ModeRegConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, dims: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(dims.to_vec(), |_| rng.sample(StandardNormal)).unwrap()
}

pub fn random_model(rng: &mut impl Rng, dims: &[usize], rank: usize) -> KruskalModel {
    KruskalModel::new(
        dims.iter()
            .map(|&n| Matrix::from_fn(n, rank, |_, _| rng.sample(StandardNormal)))
            .collect(),
    )
    .unwrap()
}

/// Entry-by-entry evaluation of the CP sum.
pub fn naive_reconstruct(model: &KruskalModel) -> DenseTensor {
    DenseTensor::from_fn(model.dims(), |idx| {
        (0..model.rank())
            .map(|r| {
                idx.iter()
                    .enumerate()
                    .map(|(d, &i)| model.factor(d)[(i, r)])
                    .product::<f64>()
            })
            .sum()
    })
    .unwrap()
}

pub fn dense_inner(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// Column-block first differences written out by hand.
pub fn diff_matrix(len: usize, rank: usize) -> DMatrix<f64> {
    let m = len - 1;
    let mut d = DMatrix::zeros(m * rank, len * rank);
    for r in 0..rank {
        for i in 0..m {
            d[(r * m + i, r * len + i)] = -1.0;
            d[(r * m + i, r * len + i + 1)] = 1.0;
        }
    }
    d
}

/// Composite objective `g(x) + λ1‖x‖₁ + λ2‖Dx‖₁ + (λ3/2)‖x‖² + ι≥0(x)`.
pub fn composite_objective(a: &DMatrix<f64>, y: &[f64], loss: Loss, cfg: &ModeRegConfig, d: &DMatrix<f64>, x: &[f64]) -> f64 {
    if cfg.nonneg && x.iter().any(|&v| v < 0.0) {
        return f64::INFINITY;
    }
    let xv = DVector::from_column_slice(x);
    let ax = a * &xv;
    let g: f64 = match loss {
        Loss::Linear => ax.iter().zip(y).map(|(e, y)| 0.5 * (y - e).powi(2)).sum(),
        Loss::Logistic => ax.iter().zip(y).map(|(e, y)| log1p_exp(-y * e)).sum(),
    };
    let dx = d * &xv;
    g + cfg.lambda1 * xv.abs().sum() + cfg.lambda2 * dx.abs().sum() + 0.5 * cfg.lambda3 * xv.norm_squared()
}

fn smooth_grad(a: &DMatrix<f64>, y: &[f64], loss: Loss, lambda3: f64, x: &DVector<f64>) -> DVector<f64> {
    let ax = a * x;
    let r = match loss {
        Loss::Linear => DVector::from_iterator(y.len(), ax.iter().zip(y).map(|(e, y)| e - y)),
        Loss::Logistic => DVector::from_iterator(y.len(), ax.iter().zip(y).map(|(e, y)| -y * sigmoid(-y * e))),
    };
    a.tr_mul(&r) + x * lambda3
}

/// `argmin_z ½‖z − v‖² + t1‖z‖₁ + t2‖Dz‖₁ + ι≥0(z)` by accelerated projected
/// gradient ascent on the box-constrained dual of the difference term.
fn fused_prox(v: &DVector<f64>, t1: f64, t2: f64, nonneg: bool, d: &DMatrix<f64>, w: &mut DVector<f64>) -> DVector<f64> {
    let sep = |u: &DVector<f64>| {
        u.map(|x| {
            let s = if x > t1 { x - t1 } else if x < -t1 { x + t1 } else { 0.0 };
            if nonneg { s.max(0.0) } else { s }
        })
    };
    if d.nrows() == 0 || t2 == 0.0 {
        return sep(v);
    }
    let step = 0.25;
    let mut wk = w.clone();
    let mut yk = w.clone();
    let mut tk = 1.0f64;
    for _ in 0..200_000 {
        let z = sep(&(v - d.tr_mul(&yk)));
        let next = (&yk + (d * &z) * step).map(|x| x.clamp(-t2, t2));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let change = (&next - &wk).norm();
        yk = &next + (&next - &wk) * ((tk - 1.0) / t_next);
        wk = next;
        tk = t_next;
        if change <= 1e-14 {
            break;
        }
    }
    *w = wk.clone();
    sep(&(v - d.tr_mul(&wk)))
}

/// Proximal-gradient (FISTA with adaptive restart) oracle; returns the best
/// objective value found and its minimizer.
pub fn proximal_gradient_oracle(
    a: &DMatrix<f64>,
    y: &[f64],
    loss: Loss,
    cfg: &ModeRegConfig,
    len: usize,
    rank: usize,
    tol: f64,
) -> (f64, Vec<f64>) {
    let d = diff_matrix(len, rank);
    let n = a.ncols();
    let ata = a.tr_mul(a);
    let lmax = ata.symmetric_eigenvalues().max();
    let lip = match loss {
        Loss::Linear => lmax,
        Loss::Logistic => 0.25 * lmax,
    } + cfg.lambda3;
    let step = 1.0 / lip;
    let mut x = DVector::zeros(n);
    let mut yk = x.clone();
    let mut tk = 1.0f64;
    let mut w = DVector::zeros(d.nrows());
    let obj = |x: &DVector<f64>| composite_objective(a, y, loss, cfg, &d, x.as_slice());
    let mut best = (obj(&x), x.clone());
    let mut fx = best.0;
    for _ in 0..200_000 {
        let g = smooth_grad(a, y, loss, cfg.lambda3, &yk);
        let next = fused_prox(&(&yk - g * step), step * cfg.lambda1, step * cfg.lambda2, cfg.nonneg, &d, &mut w);
        let f_next = obj(&next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let change = (&next - &x).norm();
        if f_next > fx {
            // restart momentum
            yk = x.clone();
            tk = 1.0;
            continue;
        }
        yk = &next + (&next - &x) * ((tk - 1.0) / t_next);
        x = next;
        fx = f_next;
        tk = t_next;
        if fx < best.0 {
            best = (fx, x.clone());
        }
        if change <= tol {
            break;
        }
    }
    (best.0, best.1.as_slice().to_vec())
}
