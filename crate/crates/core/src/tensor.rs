//! Dense tensors and the multilinear kernels used by the regression.
//!
//! Tensors are stored in generalized column-major order: the first index
//! varies fastest, so entry `(i_1, ..., i_D)` (zero-based) lives at
//! `i_1 + I_1 * (i_2 + I_2 * (i_3 + ...))`. Mode-`d` matricization,
//! `vec`/`unvec` and the on-disk formats all follow this convention.
//!
//! Modes are zero-based throughout the library API.

use nalgebra::{DMatrix, DVector};

use crate::error::{NsktrError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(NsktrError::InvalidDims("a tensor needs at least one mode".into()));
    }
    if let Some(pos) = dims.iter().position(|&n| n == 0) {
        return Err(NsktrError::InvalidDims(format!("mode {pos} has zero length")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| NsktrError::InvalidDims(format!("{dims:?} overflows usize")))
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if values.len() != len {
            return Err(NsktrError::LengthMismatch {
                expected: len,
                actual: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self {
            dims,
            values: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every zero-based multi-index, in
    /// linearization order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = checked_len(&dims)?;
        let mut values = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            values.push(f(&idx));
            advance(&mut idx, &dims);
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.linear_index(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.dims.len() {
            return Err(NsktrError::ModeOutOfRange {
                mode,
                ndims: self.dims.len(),
            });
        }
        Ok(())
    }

    /// (stride below `mode`, length of `mode`, product of dims above `mode`)
    fn mode_split(&self, mode: usize) -> (usize, usize, usize) {
        let below: usize = self.dims[..mode].iter().product();
        let above: usize = self.dims[mode + 1..].iter().product();
        (below, self.dims[mode], above)
    }
}

/// Increments a column-major multi-index in place.
pub(crate) fn advance(idx: &mut [usize], dims: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

/// Mode-`mode` unfolding: rows index `mode`, columns enumerate the remaining
/// modes with the lowest mode varying fastest.
pub fn matricize(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    let (below, n, above) = t.mode_split(mode);
    let mut m = Matrix::zeros(n, below * above);
    for c in 0..above {
        for i in 0..n {
            let src = &t.values[below * (i + n * c)..below * (i + n * c + 1)];
            for (a, &v) in src.iter().enumerate() {
                m[(i, a + below * c)] = v;
            }
        }
    }
    Ok(m)
}

/// Inverse of [`matricize`].
pub fn dematricize(m: &Matrix, dims: &[usize], mode: usize) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(dims.to_vec())?;
    t.check_mode(mode)?;
    let (below, n, above) = t.mode_split(mode);
    if m.nrows() != n || m.ncols() != below * above {
        return Err(NsktrError::ShapeMismatch(format!(
            "{}x{} matrix cannot fold into {dims:?} along mode {mode}",
            m.nrows(),
            m.ncols()
        )));
    }
    for c in 0..above {
        for i in 0..n {
            for a in 0..below {
                t.values[a + below * (i + n * c)] = m[(i, a + below * c)];
            }
        }
    }
    Ok(t)
}

/// Stacks the columns of `m` top to bottom.
pub fn vectorize(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(NsktrError::LengthMismatch {
            expected: rows * cols,
            actual: v.len(),
        });
    }
    Ok(Matrix::from_column_slice(rows, cols, v))
}

/// Columnwise Kronecker product: column `k` of the result is
/// `kron(a[:, k], b[:, k])`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(NsktrError::ShapeMismatch(format!(
            "khatri-rao needs equal column counts ({} vs {})",
            a.ncols(),
            b.ncols()
        )));
    }
    let (m, p) = (a.nrows(), b.nrows());
    let mut out = Matrix::zeros(m * p, a.ncols());
    for k in 0..a.ncols() {
        for i in 0..m {
            let aik = a[(i, k)];
            for j in 0..p {
                out[(i * p + j, k)] = aik * b[(j, k)];
            }
        }
    }
    Ok(out)
}

/// A rank-`R` CP (Kruskal) model: one `I_d x R` factor per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    factors: Vec<Matrix>,
}

impl KruskalModel {
    pub fn new(factors: Vec<Matrix>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(NsktrError::InvalidDims("a Kruskal model needs at least one factor".into()));
        };
        let rank = first.ncols();
        if rank == 0 {
            return Err(NsktrError::InvalidDims("rank must be positive".into()));
        }
        for (d, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(NsktrError::ShapeMismatch(format!(
                    "factor {d} has {} columns, expected {rank}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(NsktrError::InvalidDims(format!("factor {d} has no rows")));
            }
        }
        Ok(Self { factors })
    }

    pub fn zeros(dims: &[usize], rank: usize) -> Result<Self> {
        Self::new(dims.iter().map(|&n| Matrix::zeros(n, rank)).collect())
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode]
    }

    /// Replaces one factor, keeping its shape.
    pub fn set_factor(&mut self, mode: usize, factor: Matrix) -> Result<()> {
        self.check_mode(mode)?;
        let old = &self.factors[mode];
        if old.shape() != factor.shape() {
            return Err(NsktrError::ShapeMismatch(format!(
                "factor {mode} must stay {:?}, got {:?}",
                old.shape(),
                factor.shape()
            )));
        }
        self.factors[mode] = factor;
        Ok(())
    }

    pub fn into_factors(self) -> Vec<Matrix> {
        self.factors
    }

    pub fn is_finite(&self) -> bool {
        self.factors.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.factors.len() {
            return Err(NsktrError::ModeOutOfRange {
                mode,
                ndims: self.factors.len(),
            });
        }
        Ok(())
    }

    fn check_dims(&self, dims: &[usize]) -> Result<()> {
        if self.dims() != dims {
            return Err(NsktrError::ShapeMismatch(format!(
                "tensor dims {dims:?} do not match model dims {:?}",
                self.dims()
            )));
        }
        Ok(())
    }
}

/// `B_(-d) = B_D ⊙ ... ⊙ B_{d+1} ⊙ B_{d-1} ⊙ ... ⊙ B_1`, so the row index
/// enumerates the other modes with the lowest one varying fastest (the same
/// order as the columns of [`matricize`]). For a single-mode model this is a
/// `1 x R` row of ones.
pub fn khatri_rao_excluding(model: &KruskalModel, mode: usize) -> Result<Matrix> {
    model.check_mode(mode)?;
    let mut acc = Matrix::from_element(1, model.rank(), 1.0);
    for (d, f) in model.factors.iter().enumerate() {
        if d != mode {
            acc = khatri_rao(f, &acc)?;
        }
    }
    Ok(acc)
}

/// `X_(d) · B_(-d)`, accumulated directly from the tensor's linear layout
/// without forming the unfolding.
pub fn mttkrp(t: &DenseTensor, model: &KruskalModel, mode: usize) -> Result<Matrix> {
    model.check_dims(&t.dims)?;
    Ok(mttkrp_with(t, &KrpRows::new(model, mode)?, mode))
}

/// The two halves of `B_(-d)`: `left` covers the modes below `d` and `right`
/// the modes above it, so that `B_(-d) = right ⊙ left`. Keeping them apart
/// lets MTTKRP run as dense matrix products on the raw value buffer.
#[derive(Debug, Clone)]
pub struct KrpRows {
    rank: usize,
    left: Matrix,
    right: Matrix,
}

impl KrpRows {
    pub fn new(model: &KruskalModel, mode: usize) -> Result<Self> {
        model.check_mode(mode)?;
        let rank = model.rank();
        let mut left = Matrix::from_element(1, rank, 1.0);
        let mut right = Matrix::from_element(1, rank, 1.0);
        for (d, f) in model.factors.iter().enumerate() {
            if d < mode {
                left = khatri_rao(f, &left)?;
            } else if d > mode {
                right = khatri_rao(f, &right)?;
            }
        }
        Ok(Self { rank, left, right })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// MTTKRP against a precomputed `B_(-d)`, written into an `I_d x R`
/// column-major buffer.
pub(crate) fn mttkrp_into(t: &DenseTensor, krp: &KrpRows, mode: usize, out: &mut [f64]) {
    let (below, n, above) = t.mode_split(mode);
    let rank = krp.rank;
    debug_assert_eq!(out.len(), n * rank);
    debug_assert_eq!(krp.left.nrows(), below);
    debug_assert_eq!(krp.right.nrows(), above);
    let mut dest = nalgebra::DMatrixViewMut::from_slice(out, n, rank);
    if above == 1 {
        // The buffer is the transposed unfolding.
        let x = nalgebra::DMatrixView::from_slice(&t.values, below, n);
        dest.gemm_tr(1.0, &x, &krp.left, 0.0);
        for r in 0..rank {
            dest.column_mut(r).scale_mut(krp.right[(0, r)]);
        }
        return;
    }
    let x = nalgebra::DMatrixView::from_slice(&t.values, below * n, above);
    let y = x * &krp.right;
    if below == 1 {
        dest.copy_from(&y);
        for r in 0..rank {
            dest.column_mut(r).scale_mut(krp.left[(0, r)]);
        }
        return;
    }
    for r in 0..rank {
        let yr = nalgebra::DMatrixView::from_slice(&y.as_slice()[r * below * n..(r + 1) * below * n], below, n);
        let mut col = dest.column_mut(r);
        col.gemv_tr(1.0, &yr, &krp.left.column(r), 0.0);
    }
}

pub(crate) fn mttkrp_with(t: &DenseTensor, krp: &KrpRows, mode: usize) -> Matrix {
    let n = t.dims[mode];
    let mut out = vec![0.0; n * krp.rank];
    mttkrp_into(t, krp, mode, &mut out);
    Matrix::from_vec(n, krp.rank, out)
}

/// Dense tensor `Σ_r B_1(:,r) ∘ ... ∘ B_D(:,r)`.
pub fn kruskal_reconstruct(model: &KruskalModel) -> DenseTensor {
    // The mode-0 unfolding of a column-major tensor is its value buffer.
    let krp = khatri_rao_excluding(model, 0).expect("mode 0 always exists");
    let m = model.factor(0) * krp.transpose();
    DenseTensor {
        dims: model.dims(),
        values: m.as_slice().to_vec(),
    }
}

pub fn inner_product(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.dims != b.dims {
        return Err(NsktrError::ShapeMismatch(format!(
            "inner product of {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}

/// `⟨X, ⟦B_1..B_D⟧⟩` evaluated as `vec(X_(d) B_(-d))ᵀ vec(B_d)` without
/// densifying the model.
pub fn kruskal_inner_product(x: &DenseTensor, model: &KruskalModel, mode: usize) -> Result<f64> {
    let m = mttkrp(x, model, mode)?;
    Ok(m.dot(model.factor(mode)))
}

#[cfg(test)]
pub(crate) mod test_util {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

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

    /// Kronecker product of two column vectors.
    pub fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
    }
}
