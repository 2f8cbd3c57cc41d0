//! Maximization of sums of heterogeneous quadratic forms `Σ uᵢᵀMᵢuᵢ` over
//! matrices `U = [u₁ … u_k]` with orthonormal columns.
//!
//! The crate provides a convex SDP relaxation with tightness detection
//! ([`sdp`]), a first-order manifold solver ([`stiefel`]), a small LMI that
//! certifies global optimality of a stationary point ([`certificate`]), the
//! jointly diagonalizable special case ([`diagonal`]), instance generators
//! ([`generators`], [`hppca`]) and experiment drivers ([`harness`]).

// index loops mirror the matrix formulas more closely than iterator chains
#![allow(clippy::needless_range_loop)]

pub mod certificate;
pub mod diagonal;
pub mod error;
pub mod exec;
pub mod external;
pub mod generators;
pub mod harness;
pub mod hppca;
pub mod io;
pub mod ipm;
pub mod rng;
pub mod sdp;
pub mod stiefel;
pub mod symmat;

pub use error::{Error, Result};
pub use symmat::{ProblemInstance, StiefelPoint, SymMat, Tolerances};
