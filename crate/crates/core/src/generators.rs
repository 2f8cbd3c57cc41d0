//! Synthetic instance families.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{gaussian_matrix, stream_rng};
use crate::stiefel::random_point;
use crate::symmat::{normalize_instance, ProblemInstance, StiefelPoint, SymMat};

/// `Mᵢ = AᵢAᵢᵀ` with independent standard Gaussian `Aᵢ ∈ ℝ^{d×rank}`,
/// normalized to unit largest spectral norm.
pub fn gen_random_psd(d: usize, k: usize, rank: usize, seed: u64) -> Result<ProblemInstance> {
    if k == 0 || k > d {
        return Err(Error::DimensionMismatch(format!(
            "need 1 ≤ k ≤ d, got k = {k}, d = {d}"
        )));
    }
    if rank == 0 {
        return Err(Error::InvalidInput("rank must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let mats = (0..k)
        .map(|_| {
            let a = gaussian_matrix(d, rank, &mut rng);
            SymMat::symmetrized(&a * a.transpose())
        })
        .collect();
    normalize_instance(&ProblemInstance::new(mats)?)
}

/// Which way the nested sum in [`gen_cjd`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CjdOrdering {
    /// `M_k = D_k + N_k` and `Mᵢ = Mᵢ₊₁ + Dᵢ + Nᵢ` for `i < k`, so
    /// `M₁ ⪰ M₂ ⪰ … ⪰ M_k`.
    #[default]
    Descending,
    /// `M₁ = D₁ + N₁` and `Mᵢ = Mᵢ₋₁ + Dᵢ + Nᵢ` for `i > 1`.
    Ascending,
}

/// Nested, nearly jointly diagonalizable instances.
///
/// Each `Dᵢ` is diagonal with `r` leading entries uniform on `[0, 1]` and the
/// rest zero. Each `Nᵢ = SSᵀ/(10d)` for `S ∈ ℝ^{d×10d}` with i.i.d.
/// `N(0, sigma)` entries, `sigma` being the variance, so the commuting
/// distance grows with `sigma`. The result is normalized.
pub fn gen_cjd(
    d: usize,
    k: usize,
    r: usize,
    sigma: f64,
    seed: u64,
    ordering: CjdOrdering,
) -> Result<ProblemInstance> {
    if k == 0 || k > d {
        return Err(Error::DimensionMismatch(format!(
            "need 1 ≤ k ≤ d, got k = {k}, d = {d}"
        )));
    }
    if r == 0 || r > d {
        return Err(Error::InvalidInput(format!("need 1 ≤ r ≤ d, got r = {r}")));
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidInput(format!(
            "sigma must be finite and nonnegative, got {sigma}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let m_cols = 10 * d;
    let noise = Normal::new(0.0, sigma.sqrt()).expect("valid standard deviation");
    let mut increments: Vec<DMatrix<f64>> = (0..k)
        .map(|_| {
            let mut inc = DMatrix::zeros(d, d);
            for j in 0..r {
                inc[(j, j)] = rng.random::<f64>();
            }
            let s = DMatrix::from_fn(d, m_cols, |_, _| noise.sample(&mut rng));
            inc + (&s * s.transpose()) / m_cols as f64
        })
        .collect();
    if ordering == CjdOrdering::Descending {
        for i in (0..k - 1).rev() {
            let next = increments[i + 1].clone();
            increments[i] += next;
        }
    } else {
        for i in 1..k {
            let prev = increments[i - 1].clone();
            increments[i] += prev;
        }
    }
    let mats = increments.into_iter().map(SymMat::symmetrized).collect();
    normalize_instance(&ProblemInstance::new(mats)?)
}

/// Coefficients of the vectors `vⱼ` in an orthonormal frame `q₁…q_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoeffSpec {
    /// Upper-triangular `k×k` matrix `R` (row-major rows), `vⱼ = Σ_{a≤j} R[a][j] q_a`.
    Explicit(Vec<Vec<f64>>),
    /// Diagonal entries uniform on `[1, 2]`, strictly upper entries Gaussian
    /// with the given standard deviation.
    Random { off_diag_scale: f64 },
}

/// Nested instance with a closed-form optimum.
#[derive(Debug, Clone)]
pub struct NestedInstance {
    pub instance: ProblemInstance,
    /// A maximizer: the frame `Q`.
    pub optimum: StiefelPoint,
    /// `tr M₁ = Σ ‖vⱼ‖²`, the optimal value.
    pub optimal_value: f64,
}

/// `Mᵢ = Σ_{j ≥ i} vⱼvⱼᵀ` where `span{v₁…vᵢ} = span{q₁…qᵢ}` for a random
/// orthonormal frame `Q`. The frame is a global maximizer with value `tr M₁`
/// no matter how far the matrices are from commuting. Not normalized.
pub fn gen_nested(d: usize, k: usize, coeff: &CoeffSpec, seed: u64) -> Result<NestedInstance> {
    if k == 0 || k > d {
        return Err(Error::DimensionMismatch(format!(
            "need 1 ≤ k ≤ d, got k = {k}, d = {d}"
        )));
    }
    let r = match coeff {
        CoeffSpec::Explicit(rows) => {
            if rows.len() != k || rows.iter().any(|row| row.len() != k) {
                return Err(Error::DimensionMismatch(
                    "coefficient matrix must be k×k".into(),
                ));
            }
            DMatrix::from_fn(k, k, |a, j| rows[a][j])
        }
        CoeffSpec::Random { off_diag_scale } => {
            let mut rng = stream_rng(seed, 1);
            let normal = Normal::new(0.0, off_diag_scale.abs()).expect("valid scale");
            DMatrix::from_fn(k, k, |a, j| {
                if a == j {
                    rng.random_range(1.0..2.0)
                } else if a < j {
                    normal.sample(&mut rng)
                } else {
                    0.0
                }
            })
        }
    };
    for a in 0..k {
        for j in 0..a {
            if r[(a, j)] != 0.0 {
                return Err(Error::InvalidInput(
                    "coefficient matrix must be upper triangular".into(),
                ));
            }
        }
        if r[(a, a)].abs() <= 1e-12 {
            return Err(Error::RankDeficient(r[(a, a)].abs()));
        }
    }
    let q = random_point(d, k, seed);
    let v = q.as_matrix() * &r;
    let mut mats = Vec::with_capacity(k);
    for i in 0..k {
        let tail = v.columns(i, k - i);
        mats.push(SymMat::symmetrized(tail * tail.transpose()));
    }
    let instance = ProblemInstance::new(mats)?;
    let optimal_value = instance.mats[0].trace();
    Ok(NestedInstance {
        instance,
        optimum: q,
        optimal_value,
    })
}

/// The two rank-two primal blocks `X₁, X₂` (with `d = 4`) used to exhibit a
/// relaxation optimum whose blocks are not rank one.
pub fn high_rank_fixture() -> (SymMat, SymMat) {
    let x1 = SymMat::from_diagonal(&[0.5, 0.5, 0.0, 0.0]);
    let rows = [
        [3.0, 1.0, 3.0, 1.0],
        [1.0, 3.0, 1.0, 3.0],
        [3.0, 1.0, 3.0, 1.0],
        [1.0, 3.0, 1.0, 3.0],
    ];
    let x2 = SymMat::new(DMatrix::from_fn(4, 4, |i, j| rows[i][j] / 12.0)).expect("symmetric");
    (x1, x2)
}
