//! Symmetric matrices, Stiefel points and problem instances, plus the
//! metrics shared by every other module (commuting distance, instance
//! distance, rank-one error).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical thresholds used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bound on `‖UᵀU − I‖_F` for a valid Stiefel point.
    pub orth_tol: f64,
    /// Rank-one error at or below which a set of blocks counts as rank one.
    pub rop_threshold: f64,
    /// Tolerance for mutual orthogonality of top eigenvectors and for the
    /// projector spectrum of the block sum.
    pub orthogonality_tol: f64,
    /// Leading eigengap below which a block's top eigenvector is ambiguous.
    pub tie_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orth_tol: 1e-10,
            rop_threshold: 1e-5,
            orthogonality_tol: 1e-6,
            tie_gap: 1e-8,
        }
    }
}

/// Dense real symmetric matrix. Symmetrized as `(A + Aᵀ)/2` on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(DMatrix<f64>);

impl SymMat {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput(
                "matrix dimension must be at least 1".into(),
            ));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes a square matrix. Panics if `m` is not square.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "SymMat requires a square matrix");
        let t = m.transpose();
        SymMat((m + t) * 0.5)
    }

    /// Builds from row-major rows, rejecting asymmetry above `asym_tol`.
    pub fn from_rows(rows: &[Vec<f64>], asym_tol: f64) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} in a {n}x{n} matrix",
                r.len()
            )));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let asym = max_asymmetry(&m);
        if asym > asym_tol {
            return Err(Error::NotSymmetric(asym));
        }
        Self::new(m)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMat(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(d: usize) -> Self {
        SymMat(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymMat(DMatrix::zeros(d, d))
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        SymMat::symmetrized(v * v.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMat(&self.0 * s)
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 - &other.0)
    }

    /// `self + s·I`.
    pub fn shifted(&self, s: f64) -> SymMat {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += s;
        }
        SymMat(m)
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &SymMat) -> f64 {
        self.0.dot(&other.0)
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> DVector<f64> {
        sorted_eigen(&self.0).0
    }

    /// Eigenvalues (descending) with matching eigenvector columns.
    pub fn eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        sorted_eigen(&self.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let e = self.eigenvalues();
        e[e.len() - 1]
    }

    /// Spectral norm via the full eigendecomposition.
    pub fn spectral_norm(&self) -> f64 {
        let e = self.eigenvalues();
        e[0].abs().max(e[e.len() - 1].abs())
    }

    /// Number of eigenvalues above `rel_tol · ‖A‖₂`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let e = self.eigenvalues();
        let scale = e[0].abs().max(e[e.len() - 1].abs());
        if scale == 0.0 {
            return 0;
        }
        e.iter().filter(|&&v| v > rel_tol * scale).count()
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// A `d×k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    pub fn new(cols: DMatrix<f64>, orth_tol: f64) -> Result<Self> {
        if cols.ncols() > cols.nrows() || cols.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "Stiefel point needs 1 <= k <= d, got {}x{}",
                cols.nrows(),
                cols.ncols()
            )));
        }
        let err = orthonormality_error(&cols);
        if err > orth_tol {
            return Err(Error::InvalidInput(format!(
                "columns are not orthonormal: ‖UᵀU − I‖_F = {err:e}"
            )));
        }
        Ok(StiefelPoint(cols))
    }

    /// First `k` columns of the identity.
    pub fn standard(d: usize, k: usize) -> Self {
        StiefelPoint(DMatrix::identity(d, k))
    }

    pub fn d(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.0.column(i).into_owned()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.d())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }
}

/// `‖UᵀU − I‖_F`.
pub fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let k = u.ncols();
    (u.transpose() * u - DMatrix::<f64>::identity(k, k)).norm()
}

/// The k-tuple `(M₁, …, M_k)` of `d×d` symmetric matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub d: usize,
    pub k: usize,
    pub mats: Vec<SymMat>,
    /// Uniform shift `s` applied as `Mᵢ + s·I` to make every matrix PSD.
    pub psd_shift: f64,
    /// Positive factor applied by normalization (1 when never normalized).
    pub scale: f64,
}

impl ProblemInstance {
    pub fn new(mats: Vec<SymMat>) -> Result<Self> {
        let k = mats.len();
        if k == 0 {
            return Err(Error::InvalidInput(
                "instance needs at least one matrix".into(),
            ));
        }
        let d = mats[0].dim();
        if let Some(m) = mats.iter().find(|m| m.dim() != d) {
            return Err(Error::DimensionMismatch(format!(
                "matrices of dimension {d} and {}",
                m.dim()
            )));
        }
        if k > d {
            return Err(Error::DimensionMismatch(format!("k = {k} exceeds d = {d}")));
        }
        Ok(Self {
            d,
            k,
            mats,
            psd_shift: 0.0,
            scale: 1.0,
        })
    }

    pub fn from_diagonals(diags: &[Vec<f64>]) -> Result<Self> {
        Self::new(diags.iter().map(|d| SymMat::from_diagonal(d)).collect())
    }

    pub fn spectral_norms(&self) -> Vec<f64> {
        self.mats.iter().map(SymMat::spectral_norm).collect()
    }

    pub fn max_spectral_norm(&self) -> f64 {
        self.spectral_norms().into_iter().fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.mats
            .iter()
            .map(SymMat::min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }

    /// Shifts every matrix by the same multiple of the identity when some
    /// matrix has an eigenvalue below `-tol`. The maximizers of the
    /// quadratic objective are unchanged since `Σ uᵢᵀuᵢ = k` on the manifold.
    pub fn enforce_psd(&self, tol: f64) -> ProblemInstance {
        let lo = self.min_eigenvalue();
        if lo >= -tol {
            return self.clone();
        }
        let shift = -lo;
        ProblemInstance {
            mats: self.mats.iter().map(|m| m.shifted(shift)).collect(),
            psd_shift: self.psd_shift + shift / self.scale,
            ..self.clone()
        }
    }

    /// Objective offset between this instance and the raw one it was derived
    /// from: `raw_value = value / scale − k·psd_shift`.
    pub fn to_raw_objective(&self, value: f64) -> f64 {
        value / self.scale - self.k as f64 * self.psd_shift
    }
}

/// Commuting distance and related diagnostics of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub max_commuting_distance: f64,
    pub pairwise_commutators: Vec<Vec<f64>>,
    pub spectral_norms: Vec<f64>,
}

/// Spectral norm of the commutator `AB − BA`.
pub fn commuting_distance(a: &SymMat, b: &SymMat) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "commutator of {}x{} and {}x{}",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    let ab = a.as_matrix() * b.as_matrix();
    let c = &ab - ab.transpose();
    Ok(spectral_norm_general(&c))
}

/// Largest singular value of an arbitrary matrix.
pub fn spectral_norm_general(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn instance_metrics(c: &ProblemInstance) -> InstanceMetrics {
    let k = c.k;
    let mut pairwise = vec![vec![0.0; k]; k];
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in (i + 1)..k {
            let v = commuting_distance(&c.mats[i], &c.mats[j]).expect("instance dims agree");
            pairwise[i][j] = v;
            pairwise[j][i] = v;
            worst = worst.max(v);
        }
    }
    InstanceMetrics {
        max_commuting_distance: worst,
        pairwise_commutators: pairwise,
        spectral_norms: c.spectral_norms(),
    }
}

pub fn max_commuting_distance(c: &ProblemInstance) -> f64 {
    instance_metrics(c).max_commuting_distance
}

/// `maxᵢ ‖Mᵢ − M̄ᵢ‖₂`.
pub fn instance_distance(c: &ProblemInstance, cbar: &ProblemInstance) -> Result<f64> {
    if c.d != cbar.d || c.k != cbar.k {
        return Err(Error::DimensionMismatch(format!(
            "instances of shape (d={}, k={}) and (d={}, k={})",
            c.d, c.k, cbar.d, cbar.k
        )));
    }
    Ok(c.mats
        .iter()
        .zip(&cbar.mats)
        .map(|(a, b)| a.sub(b).spectral_norm())
        .fold(0.0, f64::max))
}

/// Rescales so that `maxᵢ ‖Mᵢ‖₂ = 1`.
pub fn normalize_instance(c: &ProblemInstance) -> Result<ProblemInstance> {
    let top = c.max_spectral_norm();
    if top == 0.0 || !top.is_finite() {
        return Err(Error::ZeroInstance);
    }
    let s = 1.0 / top;
    Ok(ProblemInstance {
        mats: c.mats.iter().map(|m| m.scaled(s)).collect(),
        scale: c.scale * s,
        ..c.clone()
    })
}

/// Polar factor of `m` (nearest Stiefel point in Frobenius norm).
pub fn procrustes_project(m: &DMatrix<f64>) -> Result<StiefelPoint> {
    let (d, k) = m.shape();
    if k == 0 || k > d {
        return Err(Error::DimensionMismatch(format!(
            "cannot project a {d}x{k} matrix onto St(k, d)"
        )));
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin.is_nan() || smin <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient(smin));
    }
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    Ok(StiefelPoint(u * vt))
}

/// Eigenvalues of each block, descending.
fn block_spectra(blocks: &[SymMat]) -> Vec<DVector<f64>> {
    blocks.iter().map(SymMat::eigenvalues).collect()
}

/// Mean over blocks of `‖λ↓(Xᵢ) − e₁‖₂²`.
pub fn rop_error(blocks: &[SymMat]) -> Result<f64> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("no blocks".into()));
    }
    let d = blocks[0].dim();
    if blocks.iter().any(|b| b.dim() != d) {
        return Err(Error::DimensionMismatch("blocks of different sizes".into()));
    }
    let total: f64 = block_spectra(blocks)
        .iter()
        .map(|e| {
            e.iter()
                .enumerate()
                .map(|(j, &v)| {
                    let t = if j == 0 { 1.0 } else { 0.0 };
                    (v - t).powi(2)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / blocks.len() as f64)
}

/// Top eigenvector of each block plus a flag for an ambiguous (tied) one.
pub fn top_eigenvectors(blocks: &[SymMat], tie_gap: f64) -> (Vec<DVector<f64>>, Vec<bool>) {
    blocks
        .iter()
        .map(|b| {
            let (vals, vecs) = b.eigen();
            let tied = vals.len() > 1 && (vals[0] - vals[1]) < tie_gap;
            (vecs.column(0).into_owned(), tied)
        })
        .unzip()
}

/// For blocks with the rank-one property, checks that their top
/// eigenvectors are mutually orthogonal and that `Σ Xᵢ` is a projector.
pub fn check_rop_orthogonality(blocks: &[SymMat], tol: &Tolerances) -> Result<bool> {
    let err = rop_error(blocks)?;
    if err > tol.rop_threshold {
        return Err(Error::RopPrecondition(err));
    }
    let (vecs, ties) = top_eigenvectors(blocks, tol.tie_gap);
    if ties.iter().any(|&t| t) {
        return Ok(false);
    }
    for i in 0..vecs.len() {
        for j in (i + 1)..vecs.len() {
            if vecs[i].dot(&vecs[j]).abs() > tol.orthogonality_tol {
                return Ok(false);
            }
        }
    }
    let d = blocks[0].dim();
    let sum = blocks.iter().fold(SymMat::zeros(d), |acc, b| acc.add(b));
    Ok(sum
        .eigenvalues()
        .iter()
        .all(|&v| v.abs() <= tol.orthogonality_tol || (v - 1.0).abs() <= tol.orthogonality_tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> SymMat {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        SymMat::from_rows(&v, 1e-12).unwrap()
    }

    #[test]
    fn symmetrizes_on_construction() {
        let a = SymMat::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 1.0])).unwrap();
        assert_eq!(a.as_matrix()[(0, 1)], 3.0);
        assert_eq!(a.as_matrix()[(1, 0)], 3.0);
        assert!(SymMat::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn asymmetric_rows_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![2.0 + 1e-9, 1.0]];
        assert!(matches!(
            SymMat::from_rows(&rows, 1e-12),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn commuting_distance_examples() {
        let a = SymMat::from_diagonal(&[1.0, 2.0]);
        let b = SymMat::from_diagonal(&[3.0, 4.0]);
        assert_eq!(commuting_distance(&a, &b).unwrap(), 0.0);
        let x = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(commuting_distance(&x, &x).unwrap(), 0.0);
        let p = SymMat::from_diagonal(&[1.0, 0.0]);
        assert_abs_diff_eq!(commuting_distance(&x, &p).unwrap(), 1.0, epsilon = 1e-14);
        assert!(commuting_distance(&x, &SymMat::identity(3)).is_err());
    }

    #[test]
    fn instance_distance_examples() {
        let z = ProblemInstance::new(vec![SymMat::zeros(2)]).unwrap();
        let i = ProblemInstance::new(vec![SymMat::identity(2)]).unwrap();
        assert_eq!(instance_distance(&z, &z).unwrap(), 0.0);
        assert_abs_diff_eq!(instance_distance(&z, &i).unwrap(), 1.0, epsilon = 1e-15);
        let big = ProblemInstance::new(vec![SymMat::identity(3)]).unwrap();
        assert!(instance_distance(&z, &big).is_err());
    }

    #[test]
    fn normalize_examples() {
        let c = ProblemInstance::new(vec![SymMat::identity(3).scaled(2.0)]).unwrap();
        let n = normalize_instance(&c).unwrap();
        assert_abs_diff_eq!(
            n.mats[0].as_matrix(),
            &DMatrix::identity(3, 3),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(n.scale, 0.5);
        let again = normalize_instance(&n).unwrap();
        assert_abs_diff_eq!(
            again.mats[0].as_matrix(),
            n.mats[0].as_matrix(),
            epsilon = 1e-12
        );
        let zero = ProblemInstance::new(vec![SymMat::zeros(2)]).unwrap();
        assert!(matches!(
            normalize_instance(&zero),
            Err(Error::ZeroInstance)
        ));
    }

    #[test]
    fn procrustes_examples() {
        let u = StiefelPoint::standard(4, 2);
        let p = procrustes_project(u.as_matrix()).unwrap();
        assert_abs_diff_eq!(p.as_matrix(), u.as_matrix(), epsilon = 1e-14);

        let m = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let p = procrustes_project(&m).unwrap();
        assert_abs_diff_eq!(p.as_matrix(), &DMatrix::identity(3, 2), epsilon = 1e-14);

        let deficient = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            procrustes_project(&deficient),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn rop_error_examples() {
        let u = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        assert_abs_diff_eq!(
            rop_error(&[SymMat::outer(&u)]).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        for d in 1..6usize {
            let df = d as f64;
            let x = SymMat::identity(d).scaled(1.0 / df);
            let expected = (1.0 - 1.0 / df).powi(2) + (df - 1.0) / (df * df);
            assert_abs_diff_eq!(rop_error(&[x]).unwrap(), expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn rop_orthogonality_examples() {
        let tol = Tolerances::default();
        let e = |i: usize| {
            let mut v = DVector::zeros(3);
            v[i] = 1.0;
            SymMat::outer(&v)
        };
        assert!(check_rop_orthogonality(&[e(0), e(1)], &tol).unwrap());
        assert!(!check_rop_orthogonality(&[e(0), e(0)], &tol).unwrap());
        let spread = SymMat::identity(3).scaled(1.0 / 3.0);
        assert!(matches!(
            check_rop_orthogonality(&[spread.clone(), spread], &tol),
            Err(Error::RopPrecondition(_))
        ));
    }

    #[test]
    fn enforce_psd_records_shift() {
        let c = ProblemInstance::from_diagonals(&[vec![1.0, -0.5], vec![0.0, 2.0]]).unwrap();
        let s = c.enforce_psd(1e-10);
        assert_abs_diff_eq!(s.psd_shift, 0.5);
        assert!(s.min_eigenvalue() >= -1e-15);
        assert_abs_diff_eq!(s.to_raw_objective(3.0), 2.0);
    }
}
