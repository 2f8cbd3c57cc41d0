//! The SDP relaxation
//!
//! ```text
//! p* = min −Σ⟨Mᵢ, Xᵢ⟩  s.t.  Σ Xᵢ ⪯ I,  tr Xᵢ = 1,  Xᵢ ⪰ 0
//! ```
//!
//! and its dual `min tr Y + Σ νᵢ` over `Y = Mᵢ + Zᵢ − νᵢI`, `Y, Zᵢ ⪰ 0`.
//! Dual objectives are reported with the primal's sign, `d* = −(tr Y + Σνᵢ)`,
//! so that strong duality reads `p* = d*`.
//!
//! The reference backend is the interior-point method in [`crate::ipm`]
//! applied to the standard form with blocks `(X₁, …, X_k, S)` and equality
//! constraints `tr Xᵢ = 1`, `Σ Xᵢ + S = I`.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{self, BlockSdp, Blocks, IpmSettings, IpmStatus};
use crate::symmat::{
    normalize_instance, procrustes_project, rop_error, top_eigenvectors, ProblemInstance,
    StiefelPoint, SymMat, Tolerances,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpPrimalSolution {
    pub x_blocks: Vec<SymMat>,
    /// `p* = −Σ⟨Mᵢ, Xᵢ⟩`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpDualSolution {
    pub y: SymMat,
    pub z_blocks: Vec<SymMat>,
    pub nu: Vec<f64>,
    /// `−(tr Y + Σ νᵢ)`.
    pub objective: f64,
}

impl SdpDualSolution {
    /// Builds `Zᵢ = Y − Mᵢ + νᵢI` so the dual equality holds exactly.
    pub fn from_y_nu(c: &ProblemInstance, y: SymMat, nu: Vec<f64>) -> Self {
        let z_blocks = c
            .mats
            .iter()
            .zip(&nu)
            .map(|(m, &v)| y.sub(m).shifted(v))
            .collect();
        let objective = -(y.trace() + nu.iter().sum::<f64>());
        Self {
            y,
            z_blocks,
            nu,
            objective,
        }
    }
}

/// Residuals of the five KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// (a) `Xᵢ ⪰ 0`, `Σ Xᵢ ⪯ I`, `tr Xᵢ = 1`.
    pub primal_feasibility: f64,
    /// (b) `Y = Mᵢ + Zᵢ − νᵢI`, `Y ⪰ 0`.
    pub dual_equality: f64,
    /// (c) `⟨I − Σ Xᵢ, Y⟩`.
    pub sum_complementarity: f64,
    /// (d) `⟨Zᵢ, Xᵢ⟩`.
    pub block_complementarity: f64,
    /// (e) `Zᵢ ⪰ 0`.
    pub dual_psd: f64,
}

impl KktResiduals {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.primal_feasibility,
            self.dual_equality,
            self.sum_complementarity,
            self.block_complementarity,
            self.dual_psd,
        ]
    }

    pub fn max(&self) -> f64 {
        self.as_array().into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpConfig {
    pub gap_tol: f64,
    pub kkt_tol: f64,
    pub rank_tol: f64,
    /// Eigenvalues of the input below `−psd_tol` trigger a uniform shift.
    pub psd_tol: f64,
    pub ipm: IpmSettings,
    pub tolerances: Tolerances,
}

impl Default for SdpConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-7,
            kkt_tol: 1e-6,
            rank_tol: 1e-7,
            psd_tol: 1e-10,
            ipm: IpmSettings {
                tol: 1e-9,
                max_iter: 120,
            },
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// The instance actually solved: PSD-shifted and normalized.
    pub instance: ProblemInstance,
    pub primal: SdpPrimalSolution,
    pub dual: SdpDualSolution,
    pub gap: f64,
    pub kkt: KktResiduals,
    pub rop_error: f64,
    pub iterations: usize,
    pub wall_time_secs: f64,
}

impl SolveReport {
    /// Relaxation value `−p*` on the solved instance.
    pub fn relaxation_value(&self) -> f64 {
        -self.primal.objective
    }

    /// Relaxation value mapped back to the caller's unshifted, unscaled data.
    pub fn raw_relaxation_value(&self) -> f64 {
        self.instance.to_raw_objective(self.relaxation_value())
    }

    /// Optimal with rank-one error at or below `rop_threshold`.
    pub fn is_tight(&self, rop_threshold: f64) -> bool {
        self.status == SolveStatus::Optimal && self.rop_error <= rop_threshold
    }
}

/// Any solver able to produce primal and dual blocks for the relaxation.
pub trait SdpBackend {
    fn solve(
        &self,
        c: &ProblemInstance,
        cfg: &SdpConfig,
    ) -> Result<(SdpPrimalSolution, SdpDualSolution, usize)>;
}

/// The built-in interior-point backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinBackend;

/// Shifts to PSD and normalizes, skipping normalization when already exact.
pub fn prepare_instance(c: &ProblemInstance, psd_tol: f64) -> Result<ProblemInstance> {
    let shifted = c.enforce_psd(psd_tol);
    let top = shifted.max_spectral_norm();
    if (top - 1.0).abs() <= 1e-12 {
        return Ok(shifted);
    }
    normalize_instance(&shifted)
}

pub fn solve_sdp(c: &ProblemInstance, cfg: &SdpConfig) -> Result<SolveReport> {
    solve_sdp_with(&BuiltinBackend, c, cfg)
}

pub fn solve_sdp_with<B: SdpBackend + ?Sized>(
    backend: &B,
    c: &ProblemInstance,
    cfg: &SdpConfig,
) -> Result<SolveReport> {
    let inst = prepare_instance(c, cfg.psd_tol)?;
    let start = Instant::now();
    let outcome = backend.solve(&inst, cfg);
    let wall_time_secs = start.elapsed().as_secs_f64();
    let (primal, dual, iterations, converged) = match outcome {
        Ok((p, d, it)) => (p, d, it, true),
        Err(Error::NumericalFailure(msg)) => {
            log::warn!("relaxation solve failed: {msg}");
            return Err(Error::NumericalFailure(msg));
        }
        Err(e) => return Err(e),
    };
    let kkt = check_kkt(&inst, &primal, &dual)?;
    let gap = (primal.objective - dual.objective).abs();
    let rop = rop_error(&primal.x_blocks)?;
    let status = if converged && gap <= cfg.gap_tol && kkt.max() <= cfg.kkt_tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::NumericalFailure
    };
    Ok(SolveReport {
        status,
        instance: inst,
        primal,
        dual,
        gap,
        kkt,
        rop_error: rop,
        iterations,
        wall_time_secs,
    })
}

impl SdpBackend for BuiltinBackend {
    fn solve(
        &self,
        c: &ProblemInstance,
        cfg: &SdpConfig,
    ) -> Result<(SdpPrimalSolution, SdpDualSolution, usize)> {
        let problem = RelaxationProblem::new(c);
        let res = ipm::solve(&problem, &cfg.ipm);
        // an unconverged iterate that already meets the verification
        // tolerances is passed on; the KKT check decides its status
        let acceptable = cfg.gap_tol.min(cfg.kkt_tol);
        let residual = res.primal_res.max(res.dual_res).max(res.rel_gap);
        if res.status != IpmStatus::Converged && (residual.is_nan() || residual > acceptable) {
            return Err(Error::NumericalFailure(format!(
                "interior point {:?} after {} iterations (pres {:.2e}, dres {:.2e}, gap {:.2e})",
                res.status, res.iterations, res.primal_res, res.dual_res, res.rel_gap
            )));
        }
        let (primal, dual) = problem.unpack(&res.x, &res.y);
        Ok((primal, dual, res.iterations))
    }
}

/// Index pairs `(a, b)`, `a ≤ b`, of the orthonormal basis of symmetric
/// matrices used for the constraint `Σ Xᵢ + S = I`.
pub(crate) fn svec_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for a in 0..d {
        for b in a..d {
            out.push((a, b));
        }
    }
    out
}

pub(crate) fn svec(m: &DMatrix<f64>, pairs: &[(usize, usize)]) -> DVector<f64> {
    DVector::from_iterator(
        pairs.len(),
        pairs.iter().map(|&(a, b)| {
            if a == b {
                m[(a, a)]
            } else {
                SQRT_2 * 0.5 * (m[(a, b)] + m[(b, a)])
            }
        }),
    )
}

pub(crate) fn smat(v: &[f64], d: usize, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    for (&(a, b), &x) in pairs.iter().zip(v) {
        if a == b {
            m[(a, a)] = x;
        } else {
            m[(a, b)] = x * FRAC_1_SQRT_2;
            m[(b, a)] = x * FRAC_1_SQRT_2;
        }
    }
    m
}

/// `tr(E_p X E_q G)` for orthonormal symmetric basis elements `E_p = E_(a,b)`
/// and `E_q = E_(c,e)`.
#[inline]
fn skron_entry(
    x: &DMatrix<f64>,
    g: &DMatrix<f64>,
    (a, b): (usize, usize),
    (c, e): (usize, usize),
) -> f64 {
    match (a == b, c == e) {
        (true, true) => x[(a, c)] * g[(c, a)],
        (true, false) => (x[(a, c)] * g[(e, a)] + x[(a, e)] * g[(c, a)]) * FRAC_1_SQRT_2,
        (false, true) => (x[(b, c)] * g[(c, a)] + x[(a, c)] * g[(c, b)]) * FRAC_1_SQRT_2,
        (false, false) => {
            0.5 * (x[(b, c)] * g[(e, a)]
                + x[(b, e)] * g[(c, a)]
                + x[(a, c)] * g[(e, b)]
                + x[(a, e)] * g[(c, b)])
        }
    }
}

/// Standard-form encoding of the relaxation for the interior-point engine.
pub(crate) struct RelaxationProblem {
    d: usize,
    k: usize,
    pairs: Vec<(usize, usize)>,
    c: Blocks,
    b: DVector<f64>,
}

impl RelaxationProblem {
    pub(crate) fn new(inst: &ProblemInstance) -> Self {
        let (d, k) = (inst.d, inst.k);
        let pairs = svec_pairs(d);
        let mut c: Blocks = inst.mats.iter().map(|m| -m.as_matrix().clone()).collect();
        c.push(DMatrix::zeros(d, d));
        let mut b = DVector::zeros(k + pairs.len());
        for i in 0..k {
            b[i] = 1.0;
        }
        for (p, &(a, bb)) in pairs.iter().enumerate() {
            if a == bb {
                b[k + p] = 1.0;
            }
        }
        Self { d, k, pairs, c, b }
    }

    fn unpack(&self, x: &[DMatrix<f64>], y: &DVector<f64>) -> (SdpPrimalSolution, SdpDualSolution) {
        let x_blocks: Vec<SymMat> = x[..self.k]
            .iter()
            .map(|m| SymMat::symmetrized(m.clone()))
            .collect();
        let objective: f64 = self.c[..self.k].iter().zip(x).map(|(c, x)| c.dot(x)).sum();
        let nu: Vec<f64> = (0..self.k).map(|i| -y[i]).collect();
        let w = smat(&y.as_slice()[self.k..], self.d, &self.pairs);
        let ymat = SymMat::symmetrized(-w);
        let mats: Vec<SymMat> = self.c[..self.k]
            .iter()
            .map(|m| SymMat::symmetrized(-m))
            .collect();
        let inst = ProblemInstance::new(mats).expect("relaxation built from a valid instance");
        let dual = SdpDualSolution::from_y_nu(&inst, ymat, nu);
        (
            SdpPrimalSolution {
                x_blocks,
                objective,
            },
            dual,
        )
    }
}

impl BlockSdp for RelaxationProblem {
    fn block_sizes(&self) -> Vec<usize> {
        vec![self.d; self.k + 1]
    }

    fn num_constraints(&self) -> usize {
        self.k + self.pairs.len()
    }

    fn cost(&self) -> &[DMatrix<f64>] {
        &self.c
    }

    fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_constraints());
        let mut total = x[self.k].clone();
        for i in 0..self.k {
            out[i] = x[i].trace();
            total += &x[i];
        }
        out.rows_mut(self.k, self.pairs.len())
            .copy_from(&svec(&total, &self.pairs));
        out
    }

    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let w = smat(&y.as_slice()[self.k..], self.d, &self.pairs);
        let mut out: Blocks = (0..self.k)
            .map(|i| {
                let mut m = w.clone();
                for j in 0..self.d {
                    m[(j, j)] += y[i];
                }
                m
            })
            .collect();
        out.push(w);
        out
    }

    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let (k, np) = (self.k, self.pairs.len());
        let m = k + np;
        let mut s = DMatrix::zeros(m, m);
        for i in 0..k {
            s[(i, i)] = x[i].dot(&zinv[i].transpose());
            let gx = &zinv[i] * &x[i];
            let cross = svec(&gx, &self.pairs);
            for p in 0..np {
                s[(i, k + p)] = cross[p];
                s[(k + p, i)] = cross[p];
            }
        }
        for p in 0..np {
            let pp = self.pairs[p];
            for q in p..np {
                let qq = self.pairs[q];
                let mut v = 0.0;
                for (xb, gb) in x.iter().zip(zinv) {
                    v += skron_entry(xb, gb, pp, qq);
                }
                s[(k + p, k + q)] = v;
                s[(k + q, k + p)] = v;
            }
        }
        s
    }

    fn initial_point(&self) -> (Blocks, DVector<f64>, Blocks) {
        let (d, k) = (self.d, self.k);
        let df = d as f64;
        let eye = DMatrix::<f64>::identity(d, d);
        let mut x: Blocks = (0..k).map(|_| &eye / df).collect();
        let slack = if k < d { 1.0 - k as f64 / df } else { 1.0 / df };
        x.push(&eye * slack);
        // ν = 1, Y = I: Zᵢ = 2I − Mᵢ, Z_S = I
        let mut y = DVector::zeros(self.num_constraints());
        for i in 0..k {
            y[i] = -1.0;
        }
        let ysvec = svec(&(-&eye), &self.pairs);
        y.rows_mut(k, self.pairs.len()).copy_from(&ysvec);
        let mut z: Blocks = self.c[..k].iter().map(|c| &eye * 2.0 + c).collect();
        z.push(eye.clone());
        (x, y, z)
    }
}

fn neg_part(v: f64) -> f64 {
    (-v).max(0.0)
}

/// Residuals of the five KKT conditions for a primal-dual pair.
pub fn check_kkt(
    c: &ProblemInstance,
    primal: &SdpPrimalSolution,
    dual: &SdpDualSolution,
) -> Result<KktResiduals> {
    let (d, k) = (c.d, c.k);
    if primal.x_blocks.len() != k || dual.z_blocks.len() != k || dual.nu.len() != k {
        return Err(Error::DimensionMismatch(
            "block counts disagree with k".into(),
        ));
    }
    if primal
        .x_blocks
        .iter()
        .chain(&dual.z_blocks)
        .any(|m| m.dim() != d)
        || dual.y.dim() != d
    {
        return Err(Error::DimensionMismatch(
            "block sizes disagree with d".into(),
        ));
    }
    let sum = primal
        .x_blocks
        .iter()
        .fold(SymMat::zeros(d), |acc, x| acc.add(x));
    let mut a = (sum.max_eigenvalue() - 1.0).max(0.0);
    for x in &primal.x_blocks {
        a = a
            .max(neg_part(x.min_eigenvalue()))
            .max((x.trace() - 1.0).abs());
    }
    let mut b = neg_part(dual.y.min_eigenvalue());
    for ((m, z), &nu) in c.mats.iter().zip(&dual.z_blocks).zip(&dual.nu) {
        let r = dual.y.sub(&m.add(z).shifted(-nu));
        b = b.max(r.as_matrix().norm());
    }
    let cc = SymMat::identity(d).sub(&sum).dot(&dual.y).abs();
    let dd = primal
        .x_blocks
        .iter()
        .zip(&dual.z_blocks)
        .map(|(x, z)| x.dot(z).abs())
        .fold(0.0, f64::max);
    let e = dual
        .z_blocks
        .iter()
        .map(|z| neg_part(z.min_eigenvalue()))
        .fold(0.0, f64::max);
    Ok(KktResiduals {
        primal_feasibility: a,
        dual_equality: b,
        sum_complementarity: cc,
        block_complementarity: dd,
        dual_psd: e,
    })
}

/// Stiefel candidate extracted from primal blocks.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub u: StiefelPoint,
    /// Top eigenvectors before projection, one per column.
    pub raw_columns: DMatrix<f64>,
    pub rop_error: f64,
    pub tie_flags: Vec<bool>,
}

impl Candidate {
    pub fn has_ties(&self) -> bool {
        self.tie_flags.iter().any(|&t| t)
    }
}

/// Top eigenvector of each block, projected onto the Stiefel manifold.
pub fn extract_candidate(primal: &SdpPrimalSolution, tol: &Tolerances) -> Result<Candidate> {
    let rop = rop_error(&primal.x_blocks)?;
    let (vecs, tie_flags) = top_eigenvectors(&primal.x_blocks, tol.tie_gap);
    if tie_flags.iter().any(|&t| t) {
        log::debug!("tied leading eigenvalues in blocks {tie_flags:?}");
    }
    let raw = DMatrix::from_columns(&vecs);
    let u = procrustes_project(&raw)?;
    Ok(Candidate {
        u,
        raw_columns: raw,
        rop_error: rop,
        tie_flags,
    })
}

/// Numerical rank of each dual block `Zᵢ`.
pub fn dual_rank_profile(dual: &SdpDualSolution, rank_tol: f64) -> Vec<usize> {
    dual.z_blocks
        .iter()
        .map(|z| z.numerical_rank(rank_tol))
        .collect()
}

/// Instance augmented with linear terms, `Σ uᵢᵀMᵢuᵢ + cᵢᵀuᵢ`, lifted to
/// `(d+1)×(d+1)` matrices `[[Mᵢ, cᵢ/2], [cᵢᵀ/2, 0]]` so that
/// `⟨M̃ᵢ, [[uuᵀ, u], [uᵀ, 1]]⟩` reproduces each term.
#[derive(Debug, Clone)]
pub struct LiftedInstance {
    pub base: ProblemInstance,
    pub linear: Vec<DVector<f64>>,
    pub lifted_mats: Vec<SymMat>,
}

pub fn build_lifted(c: &ProblemInstance, linear: &[DVector<f64>]) -> Result<LiftedInstance> {
    if linear.len() != c.k {
        return Err(Error::DimensionMismatch(format!(
            "{} linear terms for k = {}",
            linear.len(),
            c.k
        )));
    }
    if let Some(v) = linear.iter().find(|v| v.len() != c.d) {
        return Err(Error::DimensionMismatch(format!(
            "linear term of length {} for d = {}",
            v.len(),
            c.d
        )));
    }
    let d = c.d;
    let lifted_mats = c
        .mats
        .iter()
        .zip(linear)
        .map(|(m, v)| {
            let mut t = DMatrix::zeros(d + 1, d + 1);
            t.view_mut((0, 0), (d, d)).copy_from(m.as_matrix());
            for j in 0..d {
                t[(j, d)] = 0.5 * v[j];
                t[(d, j)] = 0.5 * v[j];
            }
            SymMat::symmetrized(t)
        })
        .collect();
    Ok(LiftedInstance {
        base: c.clone(),
        linear: linear.to_vec(),
        lifted_mats,
    })
}

/// `Σ uᵢᵀMᵢuᵢ + cᵢᵀuᵢ`.
pub fn lifted_objective(l: &LiftedInstance, u: &StiefelPoint) -> f64 {
    l.base
        .mats
        .iter()
        .zip(&l.linear)
        .enumerate()
        .map(|(i, (m, c))| {
            let ui = u.column(i);
            (m.as_matrix() * &ui).dot(&ui) + c.dot(&ui)
        })
        .sum()
}

/// Standard form of the lifted relaxation: blocks `(X̃₁, …, X̃_k, S)` with
/// constraints `tr(top-left X̃ᵢ) = 1`, `(X̃ᵢ)_{d+1,d+1} = 1` and
/// `Σ top-left(X̃ᵢ) + S = I`.
struct LiftedProblem {
    d: usize,
    k: usize,
    pairs: Vec<(usize, usize)>,
    c: Blocks,
    b: DVector<f64>,
}

impl LiftedProblem {
    fn new(l: &LiftedInstance) -> Self {
        let (d, k) = (l.base.d, l.base.k);
        let pairs = svec_pairs(d);
        let mut c: Blocks = l
            .lifted_mats
            .iter()
            .map(|m| -m.as_matrix().clone())
            .collect();
        c.push(DMatrix::zeros(d, d));
        let mut b = DVector::zeros(2 * k + pairs.len());
        for i in 0..2 * k {
            b[i] = 1.0;
        }
        for (p, &(a, bb)) in pairs.iter().enumerate() {
            if a == bb {
                b[2 * k + p] = 1.0;
            }
        }
        Self { d, k, pairs, c, b }
    }
}

impl BlockSdp for LiftedProblem {
    fn block_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.d + 1; self.k];
        v.push(self.d);
        v
    }

    fn num_constraints(&self) -> usize {
        2 * self.k + self.pairs.len()
    }

    fn cost(&self) -> &[DMatrix<f64>] {
        &self.c
    }

    fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let (d, k) = (self.d, self.k);
        let mut out = DVector::zeros(self.num_constraints());
        let mut total = x[k].clone();
        for i in 0..k {
            let tl = x[i].view((0, 0), (d, d));
            out[i] = tl.trace();
            out[k + i] = x[i][(d, d)];
            total += tl;
        }
        out.rows_mut(2 * k, self.pairs.len())
            .copy_from(&svec(&total, &self.pairs));
        out
    }

    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let (d, k) = (self.d, self.k);
        let w = smat(&y.as_slice()[2 * k..], d, &self.pairs);
        let mut out: Blocks = (0..k)
            .map(|i| {
                let mut m = DMatrix::zeros(d + 1, d + 1);
                m.view_mut((0, 0), (d, d)).copy_from(&w);
                for j in 0..d {
                    m[(j, j)] += y[i];
                }
                m[(d, d)] = y[k + i];
                m
            })
            .collect();
        out.push(w);
        out
    }

    fn initial_point(&self) -> (Blocks, DVector<f64>, Blocks) {
        let (d, k) = (self.d, self.k);
        let df = d as f64;
        let mut x: Blocks = (0..k)
            .map(|_| {
                let mut m = DMatrix::identity(d + 1, d + 1) / df;
                m[(d, d)] = 1.0;
                m
            })
            .collect();
        let slack = if k < d { 1.0 - k as f64 / df } else { 1.0 / df };
        x.push(DMatrix::identity(d, d) * slack);
        let cnorm = self.c.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let eta = 1.0 + cnorm;
        let z = self
            .block_sizes()
            .iter()
            .map(|&s| DMatrix::identity(s, s) * eta)
            .collect();
        (x, DVector::zeros(self.num_constraints()), z)
    }
}

/// Residuals of the lifted KKT system.
#[derive(Debug, Clone)]
pub struct LiftedReport {
    pub status: SolveStatus,
    pub x_tilde: Vec<SymMat>,
    pub z_tilde: Vec<SymMat>,
    pub y: SymMat,
    pub nu: Vec<f64>,
    /// Multipliers of the corner constraints `(X̃ᵢ)_{d+1,d+1} = 1`.
    pub xi: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub kkt: KktResiduals,
    /// Top-left blocks and `AᵀZ̃ᵢA`, i.e. the data of the unlifted system.
    pub mapped_primal: SdpPrimalSolution,
    pub mapped_dual: SdpDualSolution,
    /// Last column (top `d` entries) of each `X̃ᵢ`, projected to the manifold.
    pub candidate: Option<StiefelPoint>,
    pub iterations: usize,
    pub wall_time_secs: f64,
}

impl LiftedReport {
    /// `−p*`, the relaxation's value of `Σ uᵢᵀMᵢuᵢ + cᵢᵀuᵢ`.
    pub fn relaxation_value(&self) -> f64 {
        -self.primal_objective
    }
}

/// Solves the lifted relaxation with linear terms. The base instance is used
/// as given (no shift or normalization, since it may be zero).
pub fn solve_lifted(l: &LiftedInstance, cfg: &SdpConfig) -> Result<LiftedReport> {
    let (d, k) = (l.base.d, l.base.k);
    let problem = LiftedProblem::new(l);
    let start = Instant::now();
    let res = ipm::solve(&problem, &cfg.ipm);
    let wall_time_secs = start.elapsed().as_secs_f64();
    if res.status != IpmStatus::Converged {
        return Err(Error::NumericalFailure(format!(
            "lifted interior point {:?} after {} iterations",
            res.status, res.iterations
        )));
    }
    let x_tilde: Vec<SymMat> = res.x[..k]
        .iter()
        .map(|m| SymMat::symmetrized(m.clone()))
        .collect();
    let nu: Vec<f64> = (0..k).map(|i| -res.y[i]).collect();
    let xi: Vec<f64> = (0..k).map(|i| -res.y[k + i]).collect();
    let y = SymMat::symmetrized(-smat(&res.y.as_slice()[2 * k..], d, &problem.pairs));
    // Z̃ᵢ = A Y Aᵀ − M̃ᵢ + νᵢAAᵀ + ξᵢ e eᵀ, exact in the dual equality
    let z_tilde: Vec<SymMat> = l
        .lifted_mats
        .iter()
        .enumerate()
        .map(|(i, mt)| {
            let mut m = DMatrix::zeros(d + 1, d + 1);
            m.view_mut((0, 0), (d, d)).copy_from(y.as_matrix());
            for j in 0..d {
                m[(j, j)] += nu[i];
            }
            m[(d, d)] += xi[i];
            SymMat::symmetrized(m - mt.as_matrix())
        })
        .collect();
    let primal_objective: f64 = l
        .lifted_mats
        .iter()
        .zip(&x_tilde)
        .map(|(m, x)| -m.dot(x))
        .sum();
    let dual_objective = -(y.trace() + nu.iter().sum::<f64>() + xi.iter().sum::<f64>());

    let top_left =
        |m: &SymMat| SymMat::symmetrized(m.as_matrix().view((0, 0), (d, d)).into_owned());
    let mapped_primal = SdpPrimalSolution {
        x_blocks: x_tilde.iter().map(top_left).collect(),
        objective: primal_objective,
    };
    let mapped_dual = SdpDualSolution {
        y: y.clone(),
        z_blocks: z_tilde.iter().map(top_left).collect(),
        nu: nu.clone(),
        objective: dual_objective,
    };

    // lifted KKT residuals
    let mut a: f64 = 0.0;
    let sum = mapped_primal
        .x_blocks
        .iter()
        .fold(SymMat::zeros(d), |acc, x| acc.add(x));
    a = a.max((sum.max_eigenvalue() - 1.0).max(0.0));
    for xt in &x_tilde {
        let tl = top_left(xt);
        a = a
            .max(neg_part(xt.min_eigenvalue()))
            .max((tl.trace() - 1.0).abs())
            .max((xt.as_matrix()[(d, d)] - 1.0).abs());
    }
    let b = neg_part(y.min_eigenvalue());
    let cc = SymMat::identity(d).sub(&sum).dot(&y).abs();
    let dd = x_tilde
        .iter()
        .zip(&z_tilde)
        .map(|(x, z)| x.dot(z).abs())
        .fold(0.0, f64::max);
    let e = z_tilde
        .iter()
        .map(|z| neg_part(z.min_eigenvalue()))
        .fold(0.0, f64::max);
    let kkt = KktResiduals {
        primal_feasibility: a,
        dual_equality: b,
        sum_complementarity: cc,
        block_complementarity: dd,
        dual_psd: e,
    };
    let gap = (primal_objective - dual_objective).abs();
    let status = if gap <= cfg.gap_tol && kkt.max() <= cfg.kkt_tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::NumericalFailure
    };
    let cols: Vec<DVector<f64>> = x_tilde
        .iter()
        .map(|x| x.as_matrix().view((0, d), (d, 1)).column(0).into_owned())
        .collect();
    let candidate = procrustes_project(&DMatrix::from_columns(&cols)).ok();
    Ok(LiftedReport {
        status,
        x_tilde,
        z_tilde,
        y,
        nu,
        xi,
        primal_objective,
        dual_objective,
        gap,
        kkt,
        mapped_primal,
        mapped_dual,
        candidate,
        iterations: res.iterations,
        wall_time_secs,
    })
}

/// Relaxation blocks `Xᵢ = (1/d)·I`, strictly feasible whenever `k < d`.
pub fn slater_point(d: usize, k: usize) -> SdpPrimalSolution {
    SdpPrimalSolution {
        x_blocks: vec![SymMat::identity(d).scaled(1.0 / d as f64); k],
        objective: f64::NAN,
    }
}

/// Eigenvalue margins of a primal point: `(min λ_min(Xᵢ), 1 − λ_max(Σ Xᵢ), max |tr Xᵢ − 1|)`.
pub fn primal_margins(x_blocks: &[SymMat]) -> (f64, f64, f64) {
    let d = x_blocks[0].dim();
    let sum = x_blocks.iter().fold(SymMat::zeros(d), |acc, x| acc.add(x));
    let min_eig = x_blocks
        .iter()
        .map(SymMat::min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let trace_err = x_blocks
        .iter()
        .map(|x| (x.trace() - 1.0).abs())
        .fold(0.0, f64::max);
    (min_eig, 1.0 - sum.max_eigenvalue(), trace_err)
}
