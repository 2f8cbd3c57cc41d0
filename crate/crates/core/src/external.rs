//! Adapter for an external conic solver run as a subprocess.
//!
//! The program receives the prepared instance on stdin in the instance file
//! format and must print a JSON object on stdout:
//!
//! ```json
//! { "x_blocks": [[d·d row-major] × k], "y": [d·d row-major], "nu": [k], "iterations": 0 }
//! ```
//!
//! where `Y` and `ν` are the dual variables of `ΣXᵢ ⪯ I` and `tr Xᵢ = 1`.
//! The dual slacks are rebuilt as `Zᵢ = Y − Mᵢ + νᵢI`, so every result is
//! checked against the same KKT residuals as the built-in solver.

use std::io::Write;
use std::process::{Command, Stdio};

use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::Map;

use crate::error::{Error, Result};
use crate::io::InstanceFile;
use crate::sdp::{SdpBackend, SdpConfig, SdpDualSolution, SdpPrimalSolution};
use crate::symmat::{ProblemInstance, SymMat};

#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub program: String,
    pub args: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ExternalOutput {
    x_blocks: Vec<Vec<f64>>,
    y: Vec<f64>,
    nu: Vec<f64>,
    #[serde(default)]
    iterations: usize,
}

fn square(flat: &[f64], d: usize, what: &str) -> Result<SymMat> {
    if flat.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} entries, expected {}",
            flat.len(),
            d * d
        )));
    }
    Ok(SymMat::symmetrized(DMatrix::from_row_slice(d, d, flat)))
}

impl SdpBackend for ExternalBackend {
    fn solve(
        &self,
        c: &ProblemInstance,
        _cfg: &SdpConfig,
    ) -> Result<(SdpPrimalSolution, SdpDualSolution, usize)> {
        let input = serde_json::to_vec(&InstanceFile::from_instance(c, Map::new()))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(&input)?;
        let out = child.wait_with_output()?;
        if !out.status.success() {
            return Err(Error::NumericalFailure(format!(
                "external solver exited with {}",
                out.status
            )));
        }
        let parsed: ExternalOutput = serde_json::from_slice(&out.stdout)?;
        if parsed.x_blocks.len() != c.k || parsed.nu.len() != c.k {
            return Err(Error::DimensionMismatch(
                "external solver returned the wrong number of blocks".into(),
            ));
        }
        let x_blocks = parsed
            .x_blocks
            .iter()
            .map(|b| square(b, c.d, "primal block"))
            .collect::<Result<Vec<_>>>()?;
        let objective = -c
            .mats
            .iter()
            .zip(&x_blocks)
            .map(|(m, x)| m.dot(x))
            .sum::<f64>();
        let y = square(&parsed.y, c.d, "dual Y")?;
        let dual = SdpDualSolution::from_y_nu(c, y, parsed.nu);
        Ok((
            SdpPrimalSolution {
                x_blocks,
                objective,
            },
            dual,
            parsed.iterations,
        ))
    }
}
