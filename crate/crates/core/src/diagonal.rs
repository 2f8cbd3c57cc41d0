//! Jointly diagonalizable instances.
//!
//! When `Mᵢ = Q diag(mᵢ) Qᵀ` for one orthogonal `Q`, the problem reduces to a
//! linear assignment of the `k` blocks to distinct eigen-directions, and the
//! relaxation is always tight. A unique optimal assignment additionally gives
//! a strictly complementary dual with `rank Zᵢ = d − 1`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_trials, ExecMode};
use crate::rng::{derive_seed, stream_rng};
use crate::sdp::{solve_sdp, SdpConfig, SdpDualSolution, SolveStatus};
use crate::symmat::{max_commuting_distance, ProblemInstance, StiefelPoint, SymMat};

/// Internal seed for the random combination used to find a common eigenbasis.
const JD_SEED: u64 = 0x5eed_1dea;

#[derive(Debug, Clone)]
pub struct JointDiagonalization {
    /// Orthogonal `d×d` basis `Q`.
    pub basis: StiefelPoint,
    /// `diag_values[i][j] = (QᵀMᵢQ)_jj`.
    pub diag_values: Vec<Vec<f64>>,
    /// Largest off-diagonal entry of any `QᵀMᵢQ`.
    pub off_diag_residual: f64,
}

impl JointDiagonalization {
    /// The instance expressed in the common eigenbasis.
    pub fn diagonal_instance(&self) -> Result<ProblemInstance> {
        ProblemInstance::from_diagonals(&self.diag_values)
    }

    /// Maps a point expressed in the eigenbasis back: `Q·U`.
    pub fn to_original(&self, u: &StiefelPoint) -> StiefelPoint {
        let m = self.basis.as_matrix() * u.as_matrix();
        StiefelPoint::new(m, 1e-8).expect("product of orthonormal factors")
    }

    /// Conjugates `Q·A·Qᵀ`.
    pub fn rotate(&self, a: &SymMat) -> SymMat {
        let q = self.basis.as_matrix();
        SymMat::symmetrized(q * a.as_matrix() * q.transpose())
    }
}

#[derive(Debug, Clone)]
pub enum JdOutcome {
    Diagonalized(JointDiagonalization),
    NotJointlyDiagonalizable { max_commuting_distance: f64 },
}

/// Finds a common eigenbasis from the eigenvectors of a random positive
/// combination of the matrices. Fails when the matrices do not commute to
/// within `tol` or the basis leaves off-diagonal mass above `10·tol`.
pub fn joint_diagonalize(c: &ProblemInstance, tol: f64) -> JdOutcome {
    let delta = max_commuting_distance(c);
    if delta > tol {
        return JdOutcome::NotJointlyDiagonalizable {
            max_commuting_distance: delta,
        };
    }
    let mut rng = stream_rng(JD_SEED, 0);
    let mut best: Option<JointDiagonalization> = None;
    for _attempt in 0..8 {
        let mut combo = DMatrix::zeros(c.d, c.d);
        for m in &c.mats {
            let a: f64 = rng.random_range(0.5..1.5);
            combo += m.as_matrix() * a;
        }
        let (vals, vecs) = crate::symmat::sorted_eigen(&combo);
        let min_gap = (1..vals.len())
            .map(|j| vals[j - 1] - vals[j])
            .fold(f64::INFINITY, f64::min);
        let jd = diagonalize_with(c, vecs);
        let better = best
            .as_ref()
            .is_none_or(|b| jd.off_diag_residual < b.off_diag_residual);
        if better {
            best = Some(jd);
        }
        // a clear spectral gap makes the basis unique up to signs
        if min_gap >= 1e-10 {
            break;
        }
    }
    let jd = best.expect("at least one attempt");
    if jd.off_diag_residual > 10.0 * tol.max(1e-12) {
        return JdOutcome::NotJointlyDiagonalizable {
            max_commuting_distance: delta,
        };
    }
    JdOutcome::Diagonalized(jd)
}

fn diagonalize_with(c: &ProblemInstance, q: DMatrix<f64>) -> JointDiagonalization {
    let mut off = 0.0f64;
    let mut diag_values = Vec::with_capacity(c.k);
    for m in &c.mats {
        let r = q.transpose() * m.as_matrix() * &q;
        for a in 0..c.d {
            for b in 0..c.d {
                if a != b {
                    off = off.max(r[(a, b)].abs());
                }
            }
        }
        diag_values.push((0..c.d).map(|j| r[(j, j)]).collect());
    }
    JointDiagonalization {
        basis: StiefelPoint::new(q, 1e-8).expect("eigenvectors are orthonormal"),
        diag_values,
        off_diag_residual: off,
    }
}

/// Optimal assignment of blocks to coordinates with its LP dual.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSolution {
    /// `assignment[i]` is the coordinate given to block `i`.
    pub assignment: Vec<usize>,
    pub value: f64,
    /// Column prices `y_j ≥ 0` and row prices `νᵢ` with
    /// `y_j + νᵢ ≥ m_ij`, tight on assigned pairs.
    pub y: Vec<f64>,
    pub nu: Vec<f64>,
    /// Another assignment attains the same value within `1e-9`.
    pub tied: bool,
}

impl AssignmentSolution {
    /// The maximizer `U = [e_{j₁} … e_{j_k}]` in the eigenbasis.
    pub fn point(&self, d: usize) -> StiefelPoint {
        let mut m = DMatrix::zeros(d, self.assignment.len());
        for (i, &j) in self.assignment.iter().enumerate() {
            m[(j, i)] = 1.0;
        }
        StiefelPoint::new(m, 0.0).expect("distinct coordinates")
    }
}

fn check_values(values: &[Vec<f64>]) -> Result<(usize, usize)> {
    let k = values.len();
    if k == 0 {
        return Err(Error::InvalidInput("no rows in assignment matrix".into()));
    }
    let d = values[0].len();
    if values.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("ragged assignment matrix".into()));
    }
    if k > d {
        return Err(Error::DimensionMismatch(format!("k = {k} exceeds d = {d}")));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite assignment value".into()));
    }
    Ok((k, d))
}

/// Hungarian algorithm on a `k×d` cost matrix with `k ≤ d`, minimizing.
/// Returns `(row → column, row potentials u, column potentials v)` with
/// `u_i + v_j ≤ cost_ij`, equality on assigned pairs, and `v_j = 0` on
/// unassigned columns.
fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    let m = cost[0].len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

fn assignment_value(values: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| values[i][j])
        .sum()
}

/// Maximizes `Σᵢ values[i][assignment[i]]` over injective assignments.
pub fn solve_assignment(values: &[Vec<f64>]) -> Result<AssignmentSolution> {
    let (k, d) = check_values(values)?;
    let cost: Vec<Vec<f64>> = values
        .iter()
        .map(|r| r.iter().map(|v| -v).collect())
        .collect();
    let (assignment, u, v) = hungarian(&cost);
    let value = assignment_value(values, &assignment);
    // minimizing −m with potentials u, v gives the maximization dual
    // y_j = −v_j ≥ 0 (free columns keep v_j = 0) and νᵢ = −uᵢ
    let y: Vec<f64> = v.iter().map(|x| (-x).max(0.0)).collect();
    let nu: Vec<f64> = u.iter().map(|x| -x).collect();

    // any other optimum differs from this one in at least one pair, so
    // forbidding each pair in turn finds it
    let big =
        1.0 + 4.0 * values.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())) * (k as f64 + 1.0);
    let mut tied = false;
    if d > 1 {
        for (i, &j) in assignment.iter().enumerate() {
            let mut c2 = cost.clone();
            c2[i][j] = big;
            let (alt, _, _) = hungarian(&c2);
            if alt[i] != j && assignment_value(values, &alt) >= value - 1e-9 {
                tied = true;
                break;
            }
        }
    }
    Ok(AssignmentSolution {
        assignment,
        value,
        y,
        nu,
        tied,
    })
}

/// Brute-force optimum over all injective assignments, for small cross-checks.
pub fn enumerate_best_assignment(values: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let (k, d) = check_values(values)?;
    fn rec(
        i: usize,
        values: &[Vec<f64>],
        used: &mut Vec<bool>,
        cur: &mut Vec<usize>,
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if i == values.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(i + 1, values, used, cur, acc + values[i][j], best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::with_capacity(k));
    rec(
        0,
        values,
        &mut vec![false; d],
        &mut Vec::with_capacity(k),
        0.0,
        &mut best,
    );
    Ok(best)
}

/// Dual certificate of a unique optimal assignment in the eigenbasis.
#[derive(Debug, Clone)]
pub struct StrictDual {
    pub dual: SdpDualSolution,
    /// Smallest strictly positive complementarity gap achieved.
    pub margin: f64,
}

/// Shortest distances from node `n` over the difference-constraint graph,
/// or `None` on a negative cycle. `edges` are `(from, to, weight)` encoding
/// `x_to − x_from ≤ weight`.
fn bellman_ford(n_nodes: usize, src: usize, edges: &[(usize, usize, f64)]) -> Option<Vec<f64>> {
    let mut dist = vec![f64::INFINITY; n_nodes];
    dist[src] = 0.0;
    for _ in 0..n_nodes {
        let mut changed = false;
        for &(a, b, w) in edges {
            if !dist[a].is_finite() {
                continue;
            }
            let cand = dist[a] + w;
            if !dist[b].is_finite() || cand < dist[b] - 1e-15 * (1.0 + dist[b].abs()) {
                dist[b] = cand;
                changed = true;
            }
        }
        if !changed {
            return Some(dist);
        }
    }
    None
}

/// Builds a strictly complementary dual for the diagonal instance `values`
/// and its optimal `assignment`.
///
/// Columns off the assignment get `y_j = 0`; assigned columns get
/// `y_{jᵢ} = m_{i,jᵢ} − νᵢ`. Strict complementarity then asks for `νᵢ` with
/// `νᵢ ≤ m_{i,jᵢ}`, `νᵢ ≥ m_ij + ε` on free columns and
/// `νᵢ − ν_l ≥ m_{i,j_l} − m_{l,j_l} + ε` for `l ≠ i`, all difference
/// constraints. The largest feasible `ε` is found by bisection and half of it
/// is used. A largest `ε` at or below `1e-9` means the optimum is not unique.
pub fn goldman_tucker_dual(values: &[Vec<f64>], assignment: &[usize]) -> Result<StrictDual> {
    let (k, d) = check_values(values)?;
    if assignment.len() != k {
        return Err(Error::DimensionMismatch("assignment length".into()));
    }
    let mut assigned = vec![false; d];
    for &j in assignment {
        if j >= d || assigned[j] {
            return Err(Error::InvalidInput("assignment is not injective".into()));
        }
        assigned[j] = true;
    }

    let src = k;
    let build = |eps: f64| -> Vec<(usize, usize, f64)> {
        let mut edges = Vec::new();
        for i in 0..k {
            // νᵢ − ν_src ≤ m_{i,jᵢ}
            edges.push((src, i, values[i][assignment[i]]));
            for j in (0..d).filter(|&j| !assigned[j]) {
                // ν_src − νᵢ ≤ −(m_ij + ε)
                edges.push((i, src, -(values[i][j] + eps)));
            }
            for l in (0..k).filter(|&l| l != i) {
                // ν_l − νᵢ ≤ m_{l,j_l} − m_{i,j_l} − ε
                let jl = assignment[l];
                edges.push((i, l, values[l][jl] - values[i][jl] - eps));
            }
        }
        edges
    };
    let feasible = |eps: f64| bellman_ford(k + 1, src, &build(eps));

    if feasible(0.0).is_none() {
        return Err(Error::InvalidInput("assignment is not optimal".into()));
    }
    let scale = values.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut hi = 2.0 * scale + 1.0;
    let mut lo = 0.0;
    if feasible(hi).is_some() {
        // k = d = 1 style instances with no constraints coupling ε
        lo = hi;
    } else {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if feasible(mid).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * (1.0 + scale) {
                break;
            }
        }
    }
    if lo <= 1e-9 {
        return Err(Error::Tie(lo));
    }
    let eps = 0.5 * lo;
    let dist = feasible(eps).expect("half the largest margin is feasible");
    let nu: Vec<f64> = (0..k).map(|i| dist[i] - dist[src]).collect();
    let mut y = vec![0.0; d];
    for i in 0..k {
        y[assignment[i]] = values[i][assignment[i]] - nu[i];
    }
    let inst = ProblemInstance::from_diagonals(values)?;
    let dual = SdpDualSolution::from_y_nu(&inst, SymMat::from_diagonal(&y), nu);
    let margin = dual
        .z_blocks
        .iter()
        .enumerate()
        .flat_map(|(i, z)| {
            let zi = z.as_matrix().clone();
            (0..d)
                .filter(move |&j| j != assignment[i])
                .map(move |j| zi[(j, j)])
        })
        .fold(f64::INFINITY, f64::min);
    Ok(StrictDual { dual, margin })
}

/// Summary of a tightness sweep over randomly perturbed diagonal instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagSweepRecord {
    pub trial: usize,
    pub seed: u64,
    pub perturbation: f64,
    pub max_commuting_distance: f64,
    pub status: Option<SolveStatus>,
    pub rop_error: f64,
    pub tight: bool,
    pub error: Option<String>,
}

/// `M_i(θ) = D_i + θ·S_i` with random symmetric `S_i` of unit spectral norm.
pub fn perturbed_instance(
    center: &ProblemInstance,
    theta: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    let mut rng = stream_rng(seed, 0);
    let mats = center
        .mats
        .iter()
        .map(|m| {
            let g = crate::rng::gaussian_matrix(center.d, center.d, &mut rng);
            let s = SymMat::symmetrized(&g + g.transpose());
            let n = s.spectral_norm().max(1e-300);
            m.add(&s.scaled(theta / n))
        })
        .collect();
    ProblemInstance::new(mats)
}

/// Solves the relaxation on `trials` perturbations of `center` of size
/// `theta` and records whether each stays tight.
pub fn tightness_sweep(
    center: &ProblemInstance,
    theta: f64,
    trials: usize,
    seed: u64,
    rop_threshold: f64,
    cfg: &SdpConfig,
    mode: ExecMode,
) -> Vec<DiagSweepRecord> {
    let idx: Vec<usize> = (0..trials).collect();
    map_trials(mode, &idx, |&t| {
        let s = derive_seed(seed, t as u64);
        let mut rec = DiagSweepRecord {
            trial: t,
            seed: s,
            perturbation: theta,
            max_commuting_distance: f64::NAN,
            status: None,
            rop_error: f64::NAN,
            tight: false,
            error: None,
        };
        let inst = match perturbed_instance(center, theta, s) {
            Ok(i) => i,
            Err(e) => {
                rec.error = Some(e.to_string());
                return rec;
            }
        };
        rec.max_commuting_distance = max_commuting_distance(&inst);
        match solve_sdp(&inst, cfg) {
            Ok(r) => {
                rec.status = Some(r.status);
                rec.rop_error = r.rop_error;
                rec.tight = r.is_tight(rop_threshold);
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    })
}

/// Random diagonal values with entries uniform on `[0, 1)`.
pub fn random_diagonal_values(d: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0);
    (0..k)
        .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// Diagonal values whose optimal assignment is `i ↦ i` with a margin of at
/// least `1/2`: `m_ii ∈ [1, 1.5)` and every other entry in `[0, 1/2)`.
pub fn separated_diagonal_values(d: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0);
    (0..k)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let x: f64 = rng.random();
                    if i == j {
                        1.0 + 0.5 * x
                    } else {
                        0.5 * x
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{check_kkt, dual_rank_profile, SdpPrimalSolution};
    use approx::assert_abs_diff_eq;

    #[test]
    fn assignment_examples() {
        let s = solve_assignment(&[vec![3.0, 1.0, 0.0], vec![0.0, 2.0, 1.0]]).unwrap();
        assert_eq!(s.assignment, vec![0, 1]);
        assert_eq!(s.value, 5.0);
        assert!(!s.tied);
        let s = solve_assignment(&[vec![1.0, 5.0], vec![1.0, 4.0]]).unwrap();
        assert_eq!(s.value, 6.0);
        assert_eq!(s.assignment, vec![1, 0]);
        let s = solve_assignment(&[vec![1.0; 3], vec![1.0; 3]]).unwrap();
        assert_eq!(s.value, 2.0);
        assert!(s.tied);
    }

    #[test]
    fn assignment_dual_is_feasible_and_tight() {
        for seed in 0..20 {
            let vals = random_diagonal_values(6, 3, seed);
            let s = solve_assignment(&vals).unwrap();
            let (best, _) = enumerate_best_assignment(&vals).unwrap();
            assert_abs_diff_eq!(s.value, best, epsilon = 1e-12);
            for i in 0..3 {
                for j in 0..6 {
                    assert!(s.y[j] + s.nu[i] >= vals[i][j] - 1e-12);
                }
                assert_abs_diff_eq!(
                    s.y[s.assignment[i]] + s.nu[i],
                    vals[i][s.assignment[i]],
                    epsilon = 1e-12
                );
            }
            assert!(s.y.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn strict_dual_for_unique_optimum() {
        let vals = vec![vec![3.0, 1.0, 0.0], vec![0.0, 2.0, 1.0]];
        let s = solve_assignment(&vals).unwrap();
        let gt = goldman_tucker_dual(&vals, &s.assignment).unwrap();
        assert!(gt.margin > 0.0);
        assert_eq!(dual_rank_profile(&gt.dual, 1e-9), vec![2, 2]);
        let inst = ProblemInstance::from_diagonals(&vals).unwrap();
        let u = s.point(3);
        let primal = SdpPrimalSolution {
            x_blocks: (0..2).map(|i| SymMat::outer(&u.column(i))).collect(),
            objective: -5.0,
        };
        assert!(check_kkt(&inst, &primal, &gt.dual).unwrap().max() <= 1e-12);
    }

    #[test]
    fn tie_has_no_strict_dual() {
        let vals = vec![vec![1.0; 3], vec![1.0; 3]];
        assert!(matches!(
            goldman_tucker_dual(&vals, &[0, 1]),
            Err(Error::Tie(_))
        ));
    }

    #[test]
    fn joint_diagonalization_recovers_values() {
        let vals = random_diagonal_values(5, 3, 3);
        let q = crate::stiefel::random_point(5, 5, 8);
        let jd0 = JointDiagonalization {
            basis: q,
            diag_values: vals.clone(),
            off_diag_residual: 0.0,
        };
        let inst = ProblemInstance::new(
            vals.iter()
                .map(|v| jd0.rotate(&SymMat::from_diagonal(v)))
                .collect(),
        )
        .unwrap();
        let JdOutcome::Diagonalized(jd) = joint_diagonalize(&inst, 1e-9) else {
            panic!("expected a joint diagonalization");
        };
        assert!(jd.off_diag_residual < 1e-9);
        let a = solve_assignment(&jd.diag_values).unwrap();
        let b = solve_assignment(&vals).unwrap();
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-9);
    }

    #[test]
    fn noncommuting_is_rejected() {
        let a = SymMat::from_diagonal(&[1.0, 0.0]);
        let b = SymMat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], 0.0).unwrap();
        let inst = ProblemInstance::new(vec![a, b]).unwrap();
        assert!(matches!(
            joint_diagonalize(&inst, 1e-9),
            JdOutcome::NotJointlyDiagonalizable { .. }
        ));
    }

    #[test]
    fn perturbation_zero_is_center() {
        let c = ProblemInstance::from_diagonals(&random_diagonal_values(4, 2, 1)).unwrap();
        assert_eq!(perturbed_instance(&c, 0.0, 5).unwrap(), c);
    }
}
