//! Heteroscedastic probabilistic PCA instances.
//!
//! Samples follow `y = UΘz + η` with `Θ = diag(√λ)`, `z ~ N(0, I_k)` and
//! group-dependent noise `η ~ N(0, vₗI)`. With known `λ` and `v`, the
//! subspace update is the weighted problem with `Aₗ = YₗYₗᵀ/vₗ`,
//! `wₗᵢ = λᵢ/(λᵢ + vₗ)` and `Mᵢ = Σₗ wₗᵢAₗ`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::stiefel::random_point;
use crate::symmat::{ProblemInstance, StiefelPoint, SymMat};

#[derive(Debug, Clone, PartialEq)]
pub struct HppcaModel {
    pub d: usize,
    pub k: usize,
    pub u_true: StiefelPoint,
    pub lambdas: Vec<f64>,
    pub variances: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub seed: u64,
}

/// JSON model file. `u_true` is row-major `d·k`; when absent a uniformly
/// random subspace is drawn from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HppcaModelFile {
    pub d: usize,
    pub k: usize,
    pub lambdas: Vec<f64>,
    pub variances: Vec<f64>,
    pub group_sizes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_true: Option<Vec<f64>>,
}

/// `n` evenly spaced points on `[a, b]`, endpoints included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl HppcaModel {
    pub fn new(
        u_true: StiefelPoint,
        lambdas: Vec<f64>,
        variances: Vec<f64>,
        group_sizes: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let (d, k) = (u_true.d(), u_true.k());
        if lambdas.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} lambdas for k = {k}",
                lambdas.len()
            )));
        }
        if variances.is_empty() || variances.len() != group_sizes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} variances and {} group sizes",
                variances.len(),
                group_sizes.len()
            )));
        }
        if lambdas
            .iter()
            .chain(&variances)
            .any(|x| !x.is_finite() || *x <= 0.0)
        {
            return Err(Error::InvalidInput(
                "lambdas and variances must be positive".into(),
            ));
        }
        if group_sizes.contains(&0) {
            return Err(Error::InvalidInput(
                "every group needs at least one sample".into(),
            ));
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if lambdas[i] == lambdas[j] {
                    return Err(Error::InvalidInput(format!("lambdas {i} and {j} coincide")));
                }
            }
        }
        Ok(Self {
            d,
            k,
            u_true,
            lambdas,
            variances,
            group_sizes,
            seed,
        })
    }

    /// Random planted subspace and `λ = linspace(1, 4, k)`.
    pub fn with_lambda_grid(
        d: usize,
        k: usize,
        variances: Vec<f64>,
        group_sizes: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::DimensionMismatch(format!(
                "need 1 ≤ k ≤ d, got k = {k}, d = {d}"
            )));
        }
        let u = random_point(d, k, seed ^ 0x9e37_79b9_7f4a_7c15);
        Self::new(u, linspace(1.0, 4.0, k), variances, group_sizes, seed)
    }

    pub fn n(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn num_groups(&self) -> usize {
        self.variances.len()
    }

    /// `wₗᵢ = λᵢ/(λᵢ + vₗ)`.
    pub fn weight(&self, group: usize, i: usize) -> f64 {
        weight(self.lambdas[i], self.variances[group])
    }

    pub fn from_file(f: &HppcaModelFile) -> Result<Self> {
        let u = match &f.u_true {
            Some(flat) => {
                if flat.len() != f.d * f.k {
                    return Err(Error::DimensionMismatch(
                        "u_true must have d·k entries".into(),
                    ));
                }
                StiefelPoint::new(DMatrix::from_row_slice(f.d, f.k, flat), 1e-10)?
            }
            None => {
                if f.k == 0 || f.k > f.d {
                    return Err(Error::DimensionMismatch(format!(
                        "need 1 ≤ k ≤ d, got k = {}, d = {}",
                        f.k, f.d
                    )));
                }
                random_point(f.d, f.k, f.seed ^ 0x9e37_79b9_7f4a_7c15)
            }
        };
        if (u.d(), u.k()) != (f.d, f.k) {
            return Err(Error::DimensionMismatch("u_true shape".into()));
        }
        Self::new(
            u,
            f.lambdas.clone(),
            f.variances.clone(),
            f.group_sizes.clone(),
            f.seed,
        )
    }

    pub fn to_file(&self) -> HppcaModelFile {
        let m = self.u_true.as_matrix();
        HppcaModelFile {
            d: self.d,
            k: self.k,
            lambdas: self.lambdas.clone(),
            variances: self.variances.clone(),
            group_sizes: self.group_sizes.clone(),
            seed: self.seed,
            u_true: Some(
                (0..self.d)
                    .flat_map(|i| (0..self.k).map(move |j| m[(i, j)]))
                    .collect(),
            ),
        }
    }
}

pub fn weight(lambda: f64, variance: f64) -> f64 {
    lambda / (lambda + variance)
}

/// Samples per group, stored as the columns of `d×nₗ` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct HppcaSample {
    pub groups: Vec<DMatrix<f64>>,
}

/// Group `ℓ` draws from its own ChaCha stream `ℓ + 1` of `model.seed`, so a
/// group's samples do not depend on the other groups' sizes.
pub fn sample(model: &HppcaModel) -> HppcaSample {
    let scale_u = model.u_true.as_matrix()
        * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            model.k,
            model.lambdas.iter().map(|l| l.sqrt()),
        ));
    let groups = model
        .group_sizes
        .iter()
        .zip(&model.variances)
        .enumerate()
        .map(|(l, (&n, &v))| {
            let mut rng = stream_rng(model.seed, l as u64 + 1);
            let sd = v.sqrt();
            let mut y = DMatrix::zeros(model.d, n);
            for s in 0..n {
                let z: Vec<f64> = (0..model.k)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let mut col = &scale_u * nalgebra::DVector::from_vec(z);
                for r in 0..model.d {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    col[r] += sd * e;
                }
                y.set_column(s, &col);
            }
            y
        })
        .collect();
    HppcaSample { groups }
}

/// `Aₗ = YₗYₗᵀ/vₗ`.
pub fn group_matrices(model: &HppcaModel, s: &HppcaSample) -> Vec<SymMat> {
    s.groups
        .iter()
        .zip(&model.variances)
        .map(|(y, &v)| SymMat::symmetrized(y * y.transpose() / v))
        .collect()
}

/// `Mᵢ = Σₗ wₗᵢAₗ`, not normalized.
pub fn build_instance(model: &HppcaModel, s: &HppcaSample) -> Result<ProblemInstance> {
    if s.groups.len() != model.num_groups() || s.groups.iter().any(|g| g.nrows() != model.d) {
        return Err(Error::DimensionMismatch(
            "sample does not match model".into(),
        ));
    }
    let a = group_matrices(model, s);
    let mats = (0..model.k)
        .map(|i| {
            let mut m = DMatrix::zeros(model.d, model.d);
            for (l, al) in a.iter().enumerate() {
                m += al.as_matrix() * model.weight(l, i);
            }
            SymMat::symmetrized(m)
        })
        .collect();
    ProblemInstance::new(mats)
}

/// `M̄ᵢ = Σₗ wₗᵢ(nₗ/n)(UΘ²Uᵀ/vₗ + I)`, the expectation of `Mᵢ/n`.
pub fn expected_instance(model: &HppcaModel) -> ProblemInstance {
    let u = model.u_true.as_matrix();
    let theta2 = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&model.lambdas));
    let signal = u * theta2 * u.transpose();
    let eye = DMatrix::<f64>::identity(model.d, model.d);
    let n = model.n() as f64;
    let mats = (0..model.k)
        .map(|i| {
            let mut m = DMatrix::zeros(model.d, model.d);
            for (l, (&nl, &v)) in model.group_sizes.iter().zip(&model.variances).enumerate() {
                m += (&signal / v + &eye) * (model.weight(l, i) * nl as f64 / n);
            }
            SymMat::symmetrized(m)
        })
        .collect();
    ProblemInstance::new(mats).expect("model dimensions are valid")
}

/// The sampled instance scaled by `1/n`, comparable to [`expected_instance`].
pub fn scaled_instance(model: &HppcaModel, c: &ProblemInstance) -> ProblemInstance {
    let s = 1.0 / model.n() as f64;
    ProblemInstance {
        mats: c.mats.iter().map(|m| m.scaled(s)).collect(),
        ..c.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HppcaStats {
    pub sigma_bar: Vec<f64>,
    pub xi_bar: Vec<f64>,
    /// `Σₗ 1/(λᵢ/vₗ + 1)`.
    pub snr_bounds: Vec<f64>,
    pub concentration_bounds: Vec<f64>,
    /// Elementwise minimum of the two bounds.
    pub bounds: Vec<f64>,
}

/// Spectral and trace scales of the expected instance and the two
/// perturbation bounds on `‖Mᵢ/n − M̄ᵢ‖/‖M̄_max‖`. `c_const` is the unknown
/// universal constant of the concentration bound and `t` its confidence
/// parameter (probability at least `1 − e^{−t}`).
pub fn hppca_stats(model: &HppcaModel, c_const: f64, t: f64) -> Result<HppcaStats> {
    if c_const.is_nan() || t.is_nan() || c_const <= 0.0 || t <= 0.0 {
        return Err(Error::InvalidInput("c_const and t must be positive".into()));
    }
    let n = model.n() as f64;
    let lam_max = model
        .lambdas
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lam_sum: f64 = model.lambdas.iter().sum();
    let d = model.d as f64;
    let mut sigma_bar = Vec::with_capacity(model.k);
    let mut xi_bar = Vec::with_capacity(model.k);
    let mut snr = Vec::with_capacity(model.k);
    for &li in &model.lambdas {
        let (mut s, mut x, mut b) = (0.0, 0.0, 0.0);
        for (&nl, &v) in model.group_sizes.iter().zip(&model.variances) {
            let r = li / v;
            let w = r / (r + 1.0);
            let frac = nl as f64 / n;
            s += w * frac * (lam_max / v + 1.0);
            x += w * frac * (lam_sum / v + d);
            b += 1.0 / (r + 1.0);
        }
        sigma_bar.push(s);
        xi_bar.push(x);
        snr.push(b);
    }
    let sigma_top = sigma_bar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let conc: Vec<f64> = sigma_bar
        .iter()
        .zip(&xi_bar)
        .map(|(&s, &x)| {
            let r_eff = x / s;
            let q = (r_eff * d.ln() + t) / n;
            c_const * (s / sigma_top) * q.sqrt().max(q * n.ln())
        })
        .collect();
    let bounds = snr.iter().zip(&conc).map(|(a, b)| a.min(*b)).collect();
    Ok(HppcaStats {
        sigma_bar,
        xi_bar,
        snr_bounds: snr,
        concentration_bounds: conc,
        bounds,
    })
}

/// `‖Mᵢ/n − M̄‖₂/‖M̄‖₂` per block, with `M̄ = (1/n)ΣₗAₗ` the unweighted
/// sample matrix. Never exceeds the matching entry of `snr_bounds`.
pub fn snr_deviation(model: &HppcaModel, s: &HppcaSample) -> Result<Vec<f64>> {
    let c = build_instance(model, s)?;
    let n = model.n() as f64;
    let mut mbar = DMatrix::zeros(model.d, model.d);
    for a in group_matrices(model, s) {
        mbar += a.as_matrix() / n;
    }
    let mbar = SymMat::symmetrized(mbar);
    let denom = mbar.spectral_norm();
    Ok(c.mats
        .iter()
        .map(|m| m.scaled(1.0 / n).sub(&mbar).spectral_norm() / denom)
        .collect())
}
