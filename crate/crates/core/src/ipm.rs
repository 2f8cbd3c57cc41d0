//! Primal-dual interior-point method for block-diagonal SDPs in standard form
//!
//! ```text
//! minimize   ⟨C, X⟩            maximize   bᵀy
//! subject to A(X) = b          subject to A*(y) + Z = C
//!            X ⪰ 0                        Z ⪰ 0
//! ```
//!
//! where `X`, `Z` and `C` are block diagonal. Search directions are HKM
//! (`ΔX = sym(...Z⁻¹)`) with a Mehrotra predictor-corrector step. Problems
//! describe their constraint operator through [`BlockSdp`] and may override
//! the Schur complement assembly when they have structure to exploit.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub type Blocks = Vec<DMatrix<f64>>;

pub trait BlockSdp {
    fn block_sizes(&self) -> Vec<usize>;
    fn num_constraints(&self) -> usize;
    fn cost(&self) -> &[DMatrix<f64>];
    fn rhs(&self) -> &DVector<f64>;

    /// `A(X)`.
    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64>;

    /// `A*(y) = Σ_p y_p A_p`.
    fn adjoint(&self, y: &DVector<f64>) -> Blocks;

    /// Schur complement `S_pq = Σ_blocks tr(A_p X A_q Z⁻¹)`.
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.num_constraints();
        let mut s = DMatrix::zeros(m, m);
        let mut unit = DVector::zeros(m);
        for q in 0..m {
            unit[q] = 1.0;
            let aq = self.adjoint(&unit);
            unit[q] = 0.0;
            let h: Blocks = aq
                .iter()
                .zip(x.iter().zip(zinv))
                .map(|(a, (xb, zi))| sym(&(xb * a * zi)))
                .collect();
            s.set_column(q, &self.apply(&h));
        }
        // exact arithmetic gives a symmetric matrix; remove rounding skew
        let t = s.transpose();
        (s + t) * 0.5
    }

    /// Starting point `(X, y, Z)`; the default is a scaled identity.
    fn initial_point(&self) -> (Blocks, DVector<f64>, Blocks) {
        default_start(self)
    }
}

fn default_start<P: BlockSdp + ?Sized>(p: &P) -> (Blocks, DVector<f64>, Blocks) {
    let sizes = p.block_sizes();
    let n: usize = sizes.iter().sum();
    let m = p.num_constraints();
    let mut xi = 1.0f64;
    let mut eta = 1.0f64;
    let mut unit = DVector::zeros(m);
    for q in 0..m {
        unit[q] = 1.0;
        let aq = p.adjoint(&unit);
        unit[q] = 0.0;
        let anorm: f64 = aq.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        xi = xi.max((n as f64).sqrt() * (1.0 + p.rhs()[q].abs()) / (1.0 + anorm));
        eta = eta.max(anorm);
    }
    let cnorm: f64 = p
        .cost()
        .iter()
        .map(|b| b.norm_squared())
        .sum::<f64>()
        .sqrt();
    eta = eta.max(cnorm).max(1.0);
    let x = sizes
        .iter()
        .map(|&s| DMatrix::identity(s, s) * xi)
        .collect();
    let z = sizes
        .iter()
        .map(|&s| DMatrix::identity(s, s) * ((1.0 + eta) / (s as f64).sqrt().max(1.0)))
        .collect();
    (x, DVector::zeros(m), z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    /// Stop when relative primal residual, dual residual and gap are all
    /// below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: IpmStatus,
    pub x: Blocks,
    pub y: DVector<f64>,
    pub z: Blocks,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub rel_gap: f64,
    pub iterations: usize,
}

pub(crate) fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn block_norm(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
}

fn axpy(a: &[DMatrix<f64>], alpha: f64, b: &[DMatrix<f64>]) -> Blocks {
    a.iter().zip(b).map(|(x, y)| x + y * alpha).collect()
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m.clone()).map(|c| sym(&c.inverse()))
}

/// Largest `α` with `X + αΔX ⪰ 0` (infinity when `ΔX ⪰ 0`).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(linv) = l.clone().try_inverse() else {
        return 0.0;
    };
    let w = sym(&(&linv * dx * linv.transpose()));
    let lo = nalgebra::SymmetricEigen::new(w).eigenvalues.min();
    if lo >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lo
    }
}

fn step_length(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> f64 {
    x.iter()
        .zip(dx)
        .map(|(a, b)| max_step(a, b))
        .fold(f64::INFINITY, f64::min)
}

struct Factored {
    matrix: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    lu: Option<nalgebra::LU<f64, Dyn, Dyn>>,
}

impl Factored {
    fn new(s: DMatrix<f64>) -> Option<Self> {
        let matrix = s.clone();
        let mut s = s;
        if let Some(c) = Cholesky::new(s.clone()) {
            return Some(Self {
                matrix,
                chol: Some(c),
                lu: None,
            });
        }
        let scale = (0..s.nrows())
            .map(|i| s[(i, i)].abs())
            .fold(0.0, f64::max)
            .max(1.0);
        for i in 0..s.nrows() {
            s[(i, i)] += 1e-13 * scale;
        }
        if let Some(c) = Cholesky::new(s.clone()) {
            return Some(Self {
                matrix,
                chol: Some(c),
                lu: None,
            });
        }
        let lu = s.lu();
        if lu.is_invertible() {
            Some(Self {
                matrix,
                chol: None,
                lu: Some(lu),
            })
        } else {
            None
        }
    }

    fn solve_once(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match (&self.chol, &self.lu) {
            (Some(c), _) => Some(c.solve(rhs)),
            (None, Some(lu)) => lu.solve(rhs),
            _ => None,
        }
    }

    /// Solve with one step of iterative refinement; the Schur complement
    /// becomes badly conditioned near the optimum.
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.solve_once(rhs)?;
        let r = rhs - &self.matrix * &x;
        x += self.solve_once(&r)?;
        Some(x)
    }
}

/// Iterations without halving the worst residual before giving up.
const STALL_ITERS: usize = 12;

/// Solves the SDP. Without convergence, the iterate with the smallest worst
/// residual is returned.
pub fn solve<P: BlockSdp + ?Sized>(problem: &P, settings: &IpmSettings) -> IpmResult {
    let c = problem.cost();
    let b = problem.rhs();
    let n: f64 = problem.block_sizes().iter().sum::<usize>() as f64;
    let bnorm = b.norm();
    let cnorm = block_norm(c);

    let (mut x, mut y, mut z) = problem.initial_point();
    let mut status = IpmStatus::MaxIterations;
    let mut iterations = 0;
    let mut stall = 0usize;

    let measure = |x: &Blocks, y: &DVector<f64>, z: &Blocks| {
        let rp = b - problem.apply(x);
        let aty = problem.adjoint(y);
        let rd: Blocks = c
            .iter()
            .zip(aty.iter().zip(z))
            .map(|(cb, (ab, zb))| cb - ab - zb)
            .collect();
        let pobj = inner(c, x);
        let dobj = b.dot(y);
        let pres = rp.norm() / (1.0 + bnorm);
        let dres = block_norm(&rd) / (1.0 + cnorm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        (rp, rd, pobj, dobj, pres, dres, gap)
    };

    // best iterate so far by its worst residual
    let mut best: Option<(f64, Blocks, DVector<f64>, Blocks)> = None;
    let mut best_iter = 0usize;

    for iter in 0..=settings.max_iter {
        let (rp, rd, _pobj, _dobj, pres, dres, gap) = measure(&x, &y, &z);
        iterations = iter;
        let worst = pres.max(dres).max(gap);
        if worst <= settings.tol {
            status = IpmStatus::Converged;
            best = None;
            break;
        }
        if best.as_ref().is_none_or(|b| worst < b.0) {
            if best.as_ref().is_none_or(|b| worst < 0.5 * b.0) {
                best_iter = iter;
            }
            best = Some((worst, x.clone(), y.clone(), z.clone()));
        } else if iter >= best_iter + STALL_ITERS {
            status = IpmStatus::Stalled;
            break;
        }
        if iter == settings.max_iter {
            break;
        }
        let mu = inner(&x, &z) / n;

        let Some(zinv) = z.iter().map(inverse_spd).collect::<Option<Blocks>>() else {
            status = IpmStatus::Stalled;
            break;
        };
        let Some(fact) = Factored::new(problem.schur(&x, &zinv)) else {
            status = IpmStatus::Stalled;
            break;
        };
        // sym(X R_d Z⁻¹), shared by predictor and corrector
        let xrz: Blocks = x
            .iter()
            .zip(rd.iter().zip(&zinv))
            .map(|(xb, (r, zi))| sym(&(xb * r * zi)))
            .collect();

        let direction = |g: &Blocks| -> Option<(Blocks, DVector<f64>, Blocks)> {
            let rhs_blocks: Blocks = g.iter().zip(&xrz).map(|(gb, t)| gb - t).collect();
            let rhs = &rp - problem.apply(&rhs_blocks);
            let dy = fact.solve(&rhs)?;
            let aty = problem.adjoint(&dy);
            let dz: Blocks = rd.iter().zip(&aty).map(|(r, a)| r - a).collect();
            let dx: Blocks = g
                .iter()
                .zip(x.iter().zip(dz.iter().zip(&zinv)))
                .map(|(gb, (xb, (dzb, zi)))| gb - sym(&(xb * dzb * zi)))
                .collect();
            Some((dx, dy, dz))
        };

        // predictor: G = −X
        let g_aff: Blocks = x.iter().map(|xb| -xb).collect();
        let Some((dx_a, _dy_a, dz_a)) = direction(&g_aff) else {
            status = IpmStatus::Stalled;
            break;
        };
        let ap = step_length(&x, &dx_a).min(1.0);
        let ad = step_length(&z, &dz_a).min(1.0);
        let mu_aff = inner(&axpy(&x, ap, &dx_a), &axpy(&z, ad, &dz_a)) / n;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector: G = sym((σμI − ΔXₐΔZₐ)Z⁻¹) − X
        let g: Blocks = x
            .iter()
            .zip(dx_a.iter().zip(dz_a.iter().zip(&zinv)))
            .map(|(xb, (dxa, (dza, zi)))| {
                let s = xb.nrows();
                let target = DMatrix::identity(s, s) * (sigma * mu) - dxa * dza;
                sym(&(target * zi)) - xb
            })
            .collect();
        let Some((dx, dy, dz)) = direction(&g) else {
            status = IpmStatus::Stalled;
            break;
        };
        let ap_max = step_length(&x, &dx);
        let ad_max = step_length(&z, &dz);
        let tau = 0.9 + 0.09 * ap.min(ad);
        let ap = (tau * ap_max).min(1.0);
        let ad = (tau * ad_max).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            stall += 1;
            if stall > 3 {
                status = IpmStatus::Stalled;
                break;
            }
        } else {
            stall = 0;
        }
        x = axpy(&x, ap, &dx).iter().map(sym).collect();
        y += dy * ad;
        z = axpy(&z, ad, &dz).iter().map(sym).collect();
    }

    if let Some((_, bx, by, bz)) = best {
        x = bx;
        y = by;
        z = bz;
    }
    let (_rp, _rd, pobj, dobj, pres, dres, gap) = measure(&x, &y, &z);
    IpmResult {
        status,
        x,
        y,
        z,
        primal_obj: pobj,
        dual_obj: dobj,
        primal_res: pres,
        dual_res: dres,
        rel_gap: gap,
        iterations,
    }
}

/// SDP with explicitly stored constraint matrices `A_p` (one block list per
/// constraint). Suited to problems with few constraints.
#[derive(Debug, Clone)]
pub struct DenseSdp {
    pub sizes: Vec<usize>,
    pub c: Blocks,
    pub a: Vec<Blocks>,
    pub b: DVector<f64>,
}

impl DenseSdp {
    pub fn new(c: Blocks, a: Vec<Blocks>, b: DVector<f64>) -> Self {
        let sizes = c.iter().map(|m| m.nrows()).collect();
        Self { sizes, c, a, b }
    }
}

impl BlockSdp for DenseSdp {
    fn block_sizes(&self) -> Vec<usize> {
        self.sizes.clone()
    }

    fn num_constraints(&self) -> usize {
        self.a.len()
    }

    fn cost(&self) -> &[DMatrix<f64>] {
        &self.c
    }

    fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|ap| inner(ap, x)))
    }

    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let mut out: Blocks = self.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        for (ap, &yp) in self.a.iter().zip(y.iter()) {
            if yp == 0.0 {
                continue;
            }
            for (o, blk) in out.iter_mut().zip(ap) {
                *o += blk * yp;
            }
        }
        out
    }

    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.a.len();
        // W_q = X A_q Z⁻¹ per block, then S_pq = ⟨A_p, W_q⟩
        let w: Vec<Blocks> = self
            .a
            .iter()
            .map(|aq| {
                aq.iter()
                    .zip(x.iter().zip(zinv))
                    .map(|(a, (xb, zi))| xb * a * zi)
                    .collect()
            })
            .collect();
        let mut s = DMatrix::zeros(m, m);
        for p in 0..m {
            for q in p..m {
                let v = inner(&self.a[p], &w[q]);
                s[(p, q)] = v;
                s[(q, p)] = v;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn diagonal_lp_as_sdp() {
        // min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0 using 1x1 blocks
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let p = DenseSdp::new(
            vec![one(1.0), one(2.0)],
            vec![vec![one(1.0), one(1.0)]],
            DVector::from_vec(vec![1.0]),
        );
        let r = solve(&p, &IpmSettings::default());
        assert_eq!(r.status, IpmStatus::Converged);
        assert_abs_diff_eq!(r.primal_obj, 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.x[0][(0, 0)], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn max_eigenvalue_sdp() {
        // min −⟨M, X⟩ s.t. tr X = 1 → −λ_max(M)
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let p = DenseSdp::new(
            vec![-m.clone()],
            vec![vec![DMatrix::identity(3, 3)]],
            DVector::from_vec(vec![1.0]),
        );
        let r = solve(&p, &IpmSettings::default());
        assert_eq!(r.status, IpmStatus::Converged);
        assert_abs_diff_eq!(r.primal_obj, -3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.dual_obj, -3.0, epsilon = 1e-7);
    }

    #[test]
    fn generic_and_dense_schur_agree() {
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.0]);
        let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 2.0]);
        let p = DenseSdp::new(
            vec![DMatrix::identity(2, 2)],
            vec![vec![a0], vec![a1]],
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let x = vec![DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])];
        let zi = vec![DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5])];
        struct Generic<'a>(&'a DenseSdp);
        impl BlockSdp for Generic<'_> {
            fn block_sizes(&self) -> Vec<usize> {
                self.0.block_sizes()
            }
            fn num_constraints(&self) -> usize {
                self.0.num_constraints()
            }
            fn cost(&self) -> &[DMatrix<f64>] {
                self.0.cost()
            }
            fn rhs(&self) -> &DVector<f64> {
                self.0.rhs()
            }
            fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
                self.0.apply(x)
            }
            fn adjoint(&self, y: &DVector<f64>) -> Blocks {
                self.0.adjoint(y)
            }
        }
        let s1 = p.schur(&x, &zi);
        let s2 = Generic(&p).schur(&x, &zi);
        assert_abs_diff_eq!(s1, s2, epsilon = 1e-12);
    }
}
