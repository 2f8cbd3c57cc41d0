//! JSON file formats shared by the CLI and the experiment drivers.
//!
//! Instance file: `{ "d": int, "k": int, "mats": [[row-major d·d floats] × k], "meta": {...} }`.
//! Asymmetry above `1e-12` in any matrix is a load error.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::sdp::{Candidate, SolveReport};
use crate::symmat::{max_asymmetry, ProblemInstance, StiefelPoint, SymMat};

pub const LOAD_ASYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub d: usize,
    pub k: usize,
    pub mats: Vec<Vec<f64>>,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

impl InstanceFile {
    pub fn from_instance(c: &ProblemInstance, mut meta: Map<String, Value>) -> Self {
        meta.insert("psd_shift".into(), json!(c.psd_shift));
        meta.insert("scale".into(), json!(c.scale));
        Self {
            d: c.d,
            k: c.k,
            mats: c.mats.iter().map(|m| row_major(m.as_matrix())).collect(),
            meta,
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance> {
        if self.mats.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "k = {} but {} matrices given",
                self.k,
                self.mats.len()
            )));
        }
        let mut mats = Vec::with_capacity(self.k);
        for (i, flat) in self.mats.iter().enumerate() {
            if flat.len() != self.d * self.d {
                return Err(Error::DimensionMismatch(format!(
                    "matrix {i} has {} entries, expected {}",
                    flat.len(),
                    self.d * self.d
                )));
            }
            let m = DMatrix::from_row_slice(self.d, self.d, flat);
            let asym = max_asymmetry(&m);
            if asym > LOAD_ASYMMETRY_TOL {
                return Err(Error::NotSymmetric(asym));
            }
            mats.push(SymMat::new(m)?);
        }
        let mut c = ProblemInstance::new(mats)?;
        if let Some(s) = self.meta.get("psd_shift").and_then(Value::as_f64) {
            c.psd_shift = s;
        }
        if let Some(s) = self.meta.get("scale").and_then(Value::as_f64) {
            if s > 0.0 {
                c.scale = s;
            }
        }
        Ok(c)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    read_json::<InstanceFile>(path)?.to_instance()
}

pub fn save_instance(path: &Path, c: &ProblemInstance, meta: Map<String, Value>) -> Result<()> {
    write_json(path, &InstanceFile::from_instance(c, meta))
}

/// Candidate point file: `{ "d", "k", "u": [row-major d·k floats] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub d: usize,
    pub k: usize,
    pub u: Vec<f64>,
}

impl CandidateFile {
    pub fn from_point(u: &StiefelPoint) -> Self {
        Self {
            d: u.d(),
            k: u.k(),
            u: row_major(u.as_matrix()),
        }
    }

    pub fn to_point(&self, orth_tol: f64) -> Result<StiefelPoint> {
        if self.u.len() != self.d * self.k {
            return Err(Error::DimensionMismatch(format!(
                "candidate has {} entries, expected {}",
                self.u.len(),
                self.d * self.k
            )));
        }
        StiefelPoint::new(DMatrix::from_row_slice(self.d, self.k, &self.u), orth_tol)
    }
}

/// Serialized form of a relaxation solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReportFile {
    pub status: crate::sdp::SolveStatus,
    pub d: usize,
    pub k: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub relaxation_value: f64,
    pub raw_relaxation_value: f64,
    pub gap: f64,
    pub kkt_residuals: [f64; 5],
    pub rop_error: f64,
    pub iterations: usize,
    pub wall_time_secs: f64,
    pub psd_shift: f64,
    pub scale: f64,
    pub x_blocks: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub z_blocks: Vec<Vec<f64>>,
    pub nu: Vec<f64>,
    pub candidate: Option<CandidateFile>,
    pub tie_flags: Vec<bool>,
    pub rop_orthogonal: Option<bool>,
}

impl SolveReportFile {
    pub fn new(r: &SolveReport, cand: Option<&Candidate>, rop_orthogonal: Option<bool>) -> Self {
        Self {
            status: r.status,
            d: r.instance.d,
            k: r.instance.k,
            primal_objective: r.primal.objective,
            dual_objective: r.dual.objective,
            relaxation_value: r.relaxation_value(),
            raw_relaxation_value: r.raw_relaxation_value(),
            gap: r.gap,
            kkt_residuals: r.kkt.as_array(),
            rop_error: r.rop_error,
            iterations: r.iterations,
            wall_time_secs: r.wall_time_secs,
            psd_shift: r.instance.psd_shift,
            scale: r.instance.scale,
            x_blocks: r
                .primal
                .x_blocks
                .iter()
                .map(|m| row_major(m.as_matrix()))
                .collect(),
            y: row_major(r.dual.y.as_matrix()),
            z_blocks: r
                .dual
                .z_blocks
                .iter()
                .map(|m| row_major(m.as_matrix()))
                .collect(),
            nu: r.dual.nu.clone(),
            candidate: cand.map(|c| CandidateFile::from_point(&c.u)),
            tie_flags: cand.map(|c| c.tie_flags.clone()).unwrap_or_default(),
            rop_orthogonal,
        }
    }

    /// Primal blocks of the stored solve.
    pub fn x_blocks(&self) -> Result<Vec<SymMat>> {
        self.x_blocks
            .iter()
            .map(|flat| {
                if flat.len() != self.d * self.d {
                    return Err(Error::DimensionMismatch("x block size".into()));
                }
                SymMat::new(DMatrix::from_row_slice(self.d, self.d, flat))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_round_trip() {
        let c =
            ProblemInstance::from_diagonals(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.0, 1.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        save_instance(&path, &c, Map::new()).unwrap();
        let back = load_instance(&path).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn asymmetric_file_is_rejected() {
        let f = InstanceFile {
            d: 2,
            k: 1,
            mats: vec![vec![1.0, 0.5, 0.5 + 1e-9, 1.0]],
            meta: Map::new(),
        };
        assert!(matches!(f.to_instance(), Err(Error::NotSymmetric(_))));
        let short = InstanceFile {
            d: 2,
            k: 1,
            mats: vec![vec![1.0, 0.5, 0.5]],
            meta: Map::new(),
        };
        assert!(short.to_instance().is_err());
    }

    #[test]
    fn candidate_round_trip() {
        let u = StiefelPoint::standard(4, 2);
        let f = CandidateFile::from_point(&u);
        assert_eq!(f.to_point(1e-10).unwrap(), u);
    }
}
