//! Global optimality certificate for a stationary point `Ū`.
//!
//! With `Λ̄ = Σ ŪᵀMᵢŪEᵢ`, the point is a global maximizer (and the relaxation
//! is tight at it) if some `ν ≥ 0` satisfies
//!
//! ```text
//! Ū(Λ̄ − D_ν)Ūᵀ + νᵢI − Mᵢ ⪰ 0   for every i
//! Λ̄ − D_ν ⪰ 0
//! ```
//!
//! Feasibility is decided by maximizing the common slack `t` of these LMIs
//! over `ν ≥ 0`; the point is certified when `t* ≥ −tol`. Failure to certify
//! is never a proof of suboptimality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{self, DenseSdp, IpmSettings, IpmStatus};
use crate::sdp::{check_kkt, KktResiduals, SdpDualSolution, SdpPrimalSolution, SolveReport};
use crate::stiefel::{lambda_matrix, objective, riemannian_gradient};
use crate::symmat::{ProblemInstance, StiefelPoint, SymMat};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyConfig {
    /// Smallest acceptable LMI slack is `−tol`.
    pub tol: f64,
    /// Bounds on `‖Λ̄ − Λ̄ᵀ‖_F` and the Riemannian gradient norm below which
    /// the point counts as stationary.
    pub stationarity_tol: f64,
    /// `Λ̄` with an eigenvalue below `−psd_gate` cannot be certified.
    pub psd_gate: f64,
    pub ipm: IpmSettings,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            stationarity_tol: 1e-6,
            psd_gate: 1e-6,
            ipm: IpmSettings {
                tol: 1e-10,
                max_iter: 100,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateStatus {
    CertifiedGlobal,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    /// The relaxation has no rank-one solution; the point may or may not be optimal.
    SdpNotTight,
    /// The relaxation is tight and its value exceeds the point's objective.
    SuboptimalStationary,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct CertificateResult {
    pub status: CertificateStatus,
    /// `ν̄` witnessing global optimality.
    pub nu_witness: Option<Vec<f64>>,
    pub classification: Option<Classification>,
    /// Smallest eigenvalue of each of the `k + 1` LMIs at the best `ν` found
    /// (the `k` blocks of size `d`, then `Λ̄ − D_ν`).
    pub min_eig_slacks: Vec<f64>,
    /// `min(min_eig_slacks)`, or `NAN` if no LMI solve was attempted.
    pub margin: f64,
    /// The point was not numerically stationary.
    pub precondition_weak: bool,
    pub symmetry_residual: f64,
    pub grad_norm: f64,
    /// Residuals of the primal-dual pair built from the witness.
    pub kkt: Option<KktResiduals>,
}

impl CertificateResult {
    pub fn is_certified(&self) -> bool {
        self.status == CertificateStatus::CertifiedGlobal
    }
}

/// Value of each LMI at `nu`, as symmetric matrices.
pub fn lmi_matrices(
    c: &ProblemInstance,
    u: &StiefelPoint,
    lam_sym: &DMatrix<f64>,
    nu: &[f64],
) -> Vec<SymMat> {
    let um = u.as_matrix();
    let reduced = lam_sym - DMatrix::from_diagonal(&DVector::from_column_slice(nu));
    let y = um * &reduced * um.transpose();
    let mut out: Vec<SymMat> = c
        .mats
        .iter()
        .zip(nu)
        .map(|(m, &v)| SymMat::symmetrized(&y - m.as_matrix()).shifted(v))
        .collect();
    out.push(SymMat::symmetrized(reduced));
    out
}

/// Dual variables built from a witness: `Y = Ū(Λ̄ − D_ν)Ūᵀ`,
/// `Zᵢ = Y + νᵢI − Mᵢ`, together with the primal `Xᵢ = ūᵢūᵢᵀ`.
pub fn witness_pair(
    c: &ProblemInstance,
    u: &StiefelPoint,
    lam_sym: &DMatrix<f64>,
    nu: &[f64],
) -> (SdpPrimalSolution, SdpDualSolution) {
    let um = u.as_matrix();
    let reduced = lam_sym - DMatrix::from_diagonal(&DVector::from_column_slice(nu));
    let y = SymMat::symmetrized(um * reduced * um.transpose());
    let dual = SdpDualSolution::from_y_nu(c, y, nu.to_vec());
    let x_blocks: Vec<SymMat> = (0..c.k).map(|i| SymMat::outer(&u.column(i))).collect();
    let objective = -objective(c, u);
    (
        SdpPrimalSolution {
            x_blocks,
            objective,
        },
        dual,
    )
}

/// Builds the slack-maximization SDP in the variables `y = (ν₁…ν_k, t)`:
/// maximize `t` subject to `Cⱼ − A*(y) ⪰ 0` for the `k` LMIs of size `d`,
/// the `k×k` LMI and the `k` scalar constraints `νᵢ ≥ 0`.
fn slack_problem(c: &ProblemInstance, u: &StiefelPoint, lam_sym: &DMatrix<f64>) -> DenseSdp {
    let (d, k) = (c.d, c.k);
    let um = u.as_matrix();
    let eye_d = DMatrix::<f64>::identity(d, d);
    let eye_k = DMatrix::<f64>::identity(k, k);
    let base = um * lam_sym * um.transpose();

    let mut cost: Vec<DMatrix<f64>> = c.mats.iter().map(|m| &base - m.as_matrix()).collect();
    cost.push(lam_sym.clone());
    cost.extend((0..k).map(|_| DMatrix::zeros(1, 1)));

    let mut a = Vec::with_capacity(k + 1);
    for j in 0..k {
        let uj = um.column(j);
        let outer = uj * uj.transpose();
        let mut blocks: Vec<DMatrix<f64>> = (0..k)
            .map(|i| {
                if i == j {
                    &outer - &eye_d
                } else {
                    outer.clone()
                }
            })
            .collect();
        let mut ej = DMatrix::zeros(k, k);
        ej[(j, j)] = 1.0;
        blocks.push(ej);
        blocks.extend((0..k).map(|i| DMatrix::from_element(1, 1, if i == j { -1.0 } else { 0.0 })));
        a.push(blocks);
    }
    let mut t_blocks: Vec<DMatrix<f64>> = (0..k).map(|_| eye_d.clone()).collect();
    t_blocks.push(eye_k);
    t_blocks.extend((0..k).map(|_| DMatrix::zeros(1, 1)));
    a.push(t_blocks);

    let mut b = DVector::zeros(k + 1);
    b[k] = 1.0;
    DenseSdp::new(cost, a, b)
}

pub fn certify(
    c: &ProblemInstance,
    u: &StiefelPoint,
    cfg: &CertifyConfig,
) -> Result<CertificateResult> {
    if (c.d, c.k) != (u.d(), u.k()) {
        return Err(Error::DimensionMismatch(format!(
            "instance (d={}, k={}) vs point {}x{}",
            c.d,
            c.k,
            u.d(),
            u.k()
        )));
    }
    let lam = lambda_matrix(c, u);
    let lam_sym = lam.symmetric_part();
    let grad_norm = riemannian_gradient(c, u).norm();
    let precondition_weak =
        lam.symmetry_residual > cfg.stationarity_tol || grad_norm > cfg.stationarity_tol;

    let mut result = CertificateResult {
        status: CertificateStatus::Inconclusive,
        nu_witness: None,
        classification: None,
        min_eig_slacks: Vec::new(),
        margin: f64::NAN,
        precondition_weak,
        symmetry_residual: lam.symmetry_residual,
        grad_norm,
        kkt: None,
    };

    // Λ̄ ⪰ D_ν ⪰ 0 is impossible when Λ̄ has a clearly negative eigenvalue
    let lam_min = SymMat::symmetrized(lam_sym.clone()).min_eigenvalue();
    if lam_min < -cfg.psd_gate {
        let nu = vec![0.0; c.k];
        result.min_eig_slacks = lmi_matrices(c, u, &lam_sym, &nu)
            .iter()
            .map(SymMat::min_eigenvalue)
            .collect();
        result.margin = result
            .min_eig_slacks
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        return Ok(result);
    }

    let problem = slack_problem(c, u, &lam_sym);
    let sol = ipm::solve(&problem, &cfg.ipm);
    if sol.status == IpmStatus::Stalled && !sol.y.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure(
            "certificate LMI solve diverged".into(),
        ));
    }
    if sol.status != IpmStatus::Converged {
        log::debug!(
            "certificate LMI stopped with {:?} (pres {:.1e}, dres {:.1e}, gap {:.1e})",
            sol.status,
            sol.primal_res,
            sol.dual_res,
            sol.rel_gap
        );
    }
    // the slacks are recomputed exactly at the (clamped) multipliers, so the
    // verdict does not rely on the solver's own accuracy
    let nu: Vec<f64> = sol.y.iter().take(c.k).map(|v| v.max(0.0)).collect();
    let slacks: Vec<f64> = lmi_matrices(c, u, &lam_sym, &nu)
        .iter()
        .map(SymMat::min_eigenvalue)
        .collect();
    let margin = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    result.min_eig_slacks = slacks;
    result.margin = margin;
    if margin >= -cfg.tol {
        let (primal, dual) = witness_pair(c, u, &lam_sym, &nu);
        result.kkt = Some(check_kkt(c, &primal, &dual)?);
        result.status = CertificateStatus::CertifiedGlobal;
        result.nu_witness = Some(nu);
    }
    Ok(result)
}

/// Explains an inconclusive certificate using a relaxation solve of the same
/// instance, when one is available.
pub fn classify_inconclusive(
    u: &StiefelPoint,
    sdp_report: Option<&SolveReport>,
    rop_threshold: f64,
    value_tol: f64,
) -> Classification {
    let Some(report) = sdp_report else {
        return Classification::Unknown;
    };
    if report.rop_error > rop_threshold {
        return Classification::SdpNotTight;
    }
    // compare on the instance the relaxation actually solved
    if objective(&report.instance, u) < report.relaxation_value() - value_tol {
        Classification::SuboptimalStationary
    } else {
        Classification::Unknown
    }
}

/// Certifies and, when inconclusive, classifies with the optional relaxation report.
pub fn certify_and_classify(
    c: &ProblemInstance,
    u: &StiefelPoint,
    sdp_report: Option<&SolveReport>,
    cfg: &CertifyConfig,
) -> Result<CertificateResult> {
    let mut r = certify(c, u, cfg)?;
    if !r.is_certified() {
        r.classification = Some(classify_inconclusive(u, sdp_report, 1e-5, 1e-5));
    }
    Ok(r)
}

/// Model flop counts `(certificate, full dual SDP, ratio)` with the shared
/// `(kd)^{1/2}` iteration-count factor: `k²d³` against `kd⁶`.
pub fn certificate_flops_estimate(d: usize, k: usize) -> (f64, f64, f64) {
    let (df, kf) = (d as f64, k as f64);
    let iters = (kf * df).sqrt();
    let cert = iters * kf * kf * df.powi(3);
    let full = iters * kf * df.powi(6);
    (cert, full, full / cert)
}
