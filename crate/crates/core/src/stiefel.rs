//! First-order solver on the Stiefel manifold for `F(U) = Σ uᵢᵀMᵢuᵢ`.
//!
//! Each step maximizes the linear minorizer `⟨∇F(U_t), U⟩` of the convex
//! objective over the manifold, whose solution is the polar factor of the
//! Euclidean gradient. Objectives are therefore nondecreasing along the run.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exec::{map_trials, ExecMode};
use crate::rng::{derive_seed, gaussian_matrix, stream_rng};
use crate::symmat::{procrustes_project, ProblemInstance, StiefelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop once the Riemannian gradient's Frobenius norm is at or below this.
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::cjd_experiment()
    }
}

impl SolverConfig {
    /// 2000 iterations, gradient tolerance `1e-10`.
    pub fn cjd_experiment() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-10,
            seed: 0,
        }
    }

    /// 10000 iterations, gradient tolerance `1e-10`.
    pub fn hppca_experiment() -> Self {
        Self {
            max_iters: 10_000,
            ..Self::cjd_experiment()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradTol,
    MaxIters,
    /// Euclidean gradient vanished; the start point is returned as is.
    ZeroGradient,
}

#[derive(Debug, Clone)]
pub struct IterateTrace {
    /// Objective at the start point and after every step.
    pub objectives: Vec<f64>,
    /// Riemannian gradient norm at each recorded point.
    pub grad_norms: Vec<f64>,
    pub final_point: StiefelPoint,
    pub stop: StopReason,
    /// Steps at which the gradient was rank deficient and had to be perturbed.
    pub degenerate_steps: Vec<usize>,
}

impl IterateTrace {
    pub fn iterations(&self) -> usize {
        self.objectives.len() - 1
    }

    pub fn final_objective(&self) -> f64 {
        *self
            .objectives
            .last()
            .expect("trace has at least the start point")
    }

    pub fn final_grad_norm(&self) -> f64 {
        *self
            .grad_norms
            .last()
            .expect("trace has at least the start point")
    }

    /// `(iter, objective, grad_norm)` rows as CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,objective,grad_norm\n");
        for (i, (f, g)) in self.objectives.iter().zip(&self.grad_norms).enumerate() {
            s.push_str(&format!("{i},{f:.17e},{g:.17e}\n"));
        }
        s
    }
}

/// `Λ̄ = Σ ŪᵀMᵢŪEᵢ`, whose i-th column is `ŪᵀMᵢūᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMatrix {
    pub matrix: DMatrix<f64>,
    /// `‖Λ̄ − Λ̄ᵀ‖_F`.
    pub symmetry_residual: f64,
}

impl LambdaMatrix {
    pub fn symmetric_part(&self) -> DMatrix<f64> {
        (&self.matrix + self.matrix.transpose()) * 0.5
    }
}

fn check_dims(c: &ProblemInstance, u: &StiefelPoint) {
    assert_eq!(
        (c.d, c.k),
        (u.d(), u.k()),
        "instance shape (d, k) must match the point's shape"
    );
}

pub fn objective(c: &ProblemInstance, u: &StiefelPoint) -> f64 {
    check_dims(c, u);
    objective_raw(c, u.as_matrix())
}

/// The objective extended to arbitrary `d×k` matrices.
pub fn objective_raw(c: &ProblemInstance, u: &DMatrix<f64>) -> f64 {
    c.mats
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let ui = u.column(i);
            (m.as_matrix() * ui).dot(&ui)
        })
        .sum()
}

/// `∇F̄(U) = 2[M₁u₁ … M_k u_k]`.
pub fn euclidean_gradient(c: &ProblemInstance, u: &StiefelPoint) -> DMatrix<f64> {
    check_dims(c, u);
    euclidean_gradient_raw(c, u.as_matrix())
}

fn euclidean_gradient_raw(c: &ProblemInstance, u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(u.nrows(), u.ncols());
    for (i, m) in c.mats.iter().enumerate() {
        g.set_column(i, &(m.as_matrix() * u.column(i) * 2.0));
    }
    g
}

/// `(I − UUᵀ)∇F̄ + U·skew(Uᵀ∇F̄)`, the projection of the Euclidean gradient
/// onto the tangent space at `U`.
pub fn riemannian_gradient(c: &ProblemInstance, u: &StiefelPoint) -> DMatrix<f64> {
    let g = euclidean_gradient(c, u);
    project_tangent(u.as_matrix(), &g)
}

pub(crate) fn project_tangent(u: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let utg = u.transpose() * g;
    let sym = (&utg + utg.transpose()) * 0.5;
    g - u * sym
}

/// Component of the Euclidean gradient normal to `span(U)`: `(I − UUᵀ)∇F̄`.
pub fn normal_gradient_component(c: &ProblemInstance, u: &StiefelPoint) -> DMatrix<f64> {
    let g = euclidean_gradient(c, u);
    let um = u.as_matrix();
    &g - um * (um.transpose() * &g)
}

pub fn lambda_matrix(c: &ProblemInstance, u: &StiefelPoint) -> LambdaMatrix {
    check_dims(c, u);
    let um = u.as_matrix();
    let mut lam = DMatrix::zeros(c.k, c.k);
    for (i, m) in c.mats.iter().enumerate() {
        lam.set_column(i, &(um.transpose() * (m.as_matrix() * um.column(i))));
    }
    let symmetry_residual = (&lam - lam.transpose()).norm();
    LambdaMatrix {
        matrix: lam,
        symmetry_residual,
    }
}

/// Uniformly distributed Stiefel point: Q factor of a Gaussian matrix.
pub fn random_point(d: usize, k: usize, seed: u64) -> StiefelPoint {
    let mut rng = stream_rng(seed, 0);
    loop {
        let a = gaussian_matrix(d, k, &mut rng);
        let qr = a.qr();
        let r = qr.r();
        if (0..k).all(|i| r[(i, i)].abs() > 1e-10) {
            // fix column signs so the map from Gaussian matrices is well defined
            let mut q = qr.q();
            for i in 0..k {
                if r[(i, i)] < 0.0 {
                    let mut col = q.column_mut(i);
                    col.neg_mut();
                }
            }
            return StiefelPoint::new(q, 1e-10).expect("QR factor is orthonormal");
        }
    }
}

/// Runs the linear-minorizer iteration from `u0`.
pub fn stmm_solve(c: &ProblemInstance, u0: &StiefelPoint, cfg: &SolverConfig) -> IterateTrace {
    check_dims(c, u0);
    let mut u = u0.clone();
    let mut objectives = vec![objective(c, &u)];
    let mut g = euclidean_gradient(c, &u);
    let mut grad_norms = vec![project_tangent(u.as_matrix(), &g).norm()];
    let mut degenerate_steps = Vec::new();

    if g.iter().all(|v| *v == 0.0) {
        return IterateTrace {
            objectives,
            grad_norms,
            final_point: u,
            stop: StopReason::ZeroGradient,
            degenerate_steps,
        };
    }

    let mut stop = StopReason::MaxIters;
    for step in 0..=cfg.max_iters {
        if *grad_norms.last().unwrap() <= cfg.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
        if step == cfg.max_iters {
            break;
        }
        let next = match procrustes_project(&g) {
            Ok(p) => p,
            Err(_) => {
                degenerate_steps.push(step);
                let perturbed = &g + u.as_matrix() * 1e-12;
                match procrustes_project(&perturbed) {
                    Ok(p) => p,
                    Err(_) => {
                        // an exact zero column: keep the current point there
                        let mixed = &g + u.as_matrix() * (1e-12 + g.norm());
                        procrustes_project(&mixed).unwrap_or_else(|_| u.clone())
                    }
                }
            }
        };
        u = next;
        g = euclidean_gradient(c, &u);
        objectives.push(objective(c, &u));
        grad_norms.push(project_tangent(u.as_matrix(), &g).norm());
    }

    IterateTrace {
        objectives,
        grad_norms,
        final_point: u,
        stop,
        degenerate_steps,
    }
}

/// `restarts` independent runs from random starts seeded by `cfg.seed`.
pub fn multi_start(
    c: &ProblemInstance,
    restarts: usize,
    cfg: &SolverConfig,
    mode: ExecMode,
) -> Vec<IterateTrace> {
    let seeds: Vec<u64> = (0..restarts as u64)
        .map(|r| derive_seed(cfg.seed, r))
        .collect();
    map_trials(mode, &seeds, |&s| {
        stmm_solve(c, &random_point(c.d, c.k, s), cfg)
    })
}

/// Index of the run with the largest final objective.
pub fn best_run(traces: &[IterateTrace]) -> Option<usize> {
    traces
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.final_objective().total_cmp(&b.1.final_objective()))
        .map(|(i, _)| i)
}
