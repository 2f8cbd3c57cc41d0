//! Experiment drivers: rank-one-property tables, commuting-distance sweeps,
//! perturbation sweeps around diagonal instances and timing benchmarks.
//!
//! Every driver returns per-trial records next to the aggregated rows, so
//! each reported fraction can be audited. Trials are seeded by
//! `derive_seed(derive_seed(master, cell), trial)` and therefore reproduce
//! exactly regardless of execution order.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::certificate::{certify, CertifyConfig};
use crate::diagonal::tightness_sweep;
use crate::error::{Error, Result};
use crate::exec::{map_trials, ExecMode};
use crate::generators::{gen_cjd, gen_random_psd, CjdOrdering};
use crate::hppca::{build_instance, sample, HppcaModel};
use crate::rng::derive_seed;
use crate::sdp::{extract_candidate, solve_sdp, SdpConfig, SolveReport, SolveStatus};
use crate::stiefel::{objective, random_point, stmm_solve, SolverConfig};
use crate::symmat::{
    check_rop_orthogonality, max_commuting_distance, normalize_instance, ProblemInstance,
    StiefelPoint,
};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sdp: SdpConfig,
    /// Largest rank-one error accepted as tight.
    pub rop_threshold: f64,
    pub stmm: SolverConfig,
    pub certify: CertifyConfig,
    pub mode: ExecMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sdp: SdpConfig::default(),
            rop_threshold: 1e-5,
            stmm: SolverConfig::cjd_experiment(),
            certify: CertifyConfig::default(),
            mode: ExecMode::default(),
        }
    }
}

/// Tight means an optimal solve whose blocks are rank one within the
/// threshold and whose top eigenvectors are mutually orthogonal.
pub fn is_tight_report(r: &SolveReport, cfg: &ExperimentConfig) -> bool {
    r.is_tight(cfg.rop_threshold)
        && check_rop_orthogonality(&r.primal.x_blocks, &cfg.sdp.tolerances).unwrap_or(false)
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn jsonl_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// rank-one-property tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RopFamily {
    /// `λ = linspace(1, 4, k)` with the given groups.
    Hppca {
        group_sizes: Vec<usize>,
        variances: Vec<f64>,
    },
    /// `Mᵢ = AAᵀ` with Gaussian `A ∈ ℝ^{d×rank}`; `rank` defaults to `k`.
    RandPsd { rank: Option<usize> },
}

impl RopFamily {
    pub fn name(&self) -> &'static str {
        match self {
            RopFamily::Hppca { .. } => "hppca",
            RopFamily::RandPsd { .. } => "randpsd",
        }
    }

    pub fn params(&self) -> String {
        match self {
            RopFamily::Hppca {
                group_sizes,
                variances,
            } => format!("n={group_sizes:?};v={variances:?}"),
            RopFamily::RandPsd { rank } => match rank {
                Some(r) => format!("rank={r}"),
                None => "rank=k".into(),
            },
        }
    }

    pub fn instance(&self, d: usize, k: usize, seed: u64) -> Result<ProblemInstance> {
        match self {
            RopFamily::Hppca {
                group_sizes,
                variances,
            } => {
                let m = HppcaModel::with_lambda_grid(
                    d,
                    k,
                    variances.clone(),
                    group_sizes.clone(),
                    seed,
                )?;
                build_instance(&m, &sample(&m))
            }
            RopFamily::RandPsd { rank } => gen_random_psd(d, k, rank.unwrap_or(k), seed),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RopTrialRecord {
    pub family: String,
    pub params: String,
    pub d: usize,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub status: Option<SolveStatus>,
    pub rop_error: f64,
    pub rop_orthogonal: bool,
    pub tight: bool,
    /// Certificate outcome on the extracted candidate, when requested and tight.
    pub certified: Option<bool>,
    pub relaxation_value: f64,
    pub gap: f64,
    pub kkt_max: f64,
    pub iterations: usize,
    pub wall_time_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RopCellSummary {
    pub family: String,
    pub params: String,
    pub d: usize,
    pub k: usize,
    pub trials: usize,
    pub tight: usize,
    pub failures: usize,
    pub fraction: f64,
    pub certified: usize,
}

#[derive(Debug, Clone)]
pub struct RopTable {
    pub cells: Vec<RopCellSummary>,
    pub records: Vec<RopTrialRecord>,
}

impl RopTable {
    pub fn to_csv(&self) -> Result<String> {
        csv_string(&self.cells)
    }

    pub fn records_jsonl(&self) -> Result<String> {
        jsonl_string(&self.records)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().map(|c| c.failures).sum()
    }
}

fn rop_trial(
    family: &RopFamily,
    d: usize,
    k: usize,
    trial: usize,
    seed: u64,
    certify_tight: bool,
    cfg: &ExperimentConfig,
) -> RopTrialRecord {
    let mut rec = RopTrialRecord {
        family: family.name().into(),
        params: family.params(),
        d,
        k,
        trial,
        seed,
        status: None,
        rop_error: f64::NAN,
        rop_orthogonal: false,
        tight: false,
        certified: None,
        relaxation_value: f64::NAN,
        gap: f64::NAN,
        kkt_max: f64::NAN,
        iterations: 0,
        wall_time_secs: 0.0,
        error: None,
    };
    let report = match family
        .instance(d, k, seed)
        .and_then(|c| solve_sdp(&c, &cfg.sdp))
    {
        Ok(r) => r,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.status = Some(report.status);
    rec.rop_error = report.rop_error;
    rec.relaxation_value = report.relaxation_value();
    rec.gap = report.gap;
    rec.kkt_max = report.kkt.max();
    rec.iterations = report.iterations;
    rec.wall_time_secs = report.wall_time_secs;
    rec.rop_orthogonal =
        check_rop_orthogonality(&report.primal.x_blocks, &cfg.sdp.tolerances).unwrap_or(false);
    rec.tight = is_tight_report(&report, cfg);
    if certify_tight && rec.tight {
        rec.certified = Some(
            extract_candidate(&report.primal, &cfg.sdp.tolerances)
                .and_then(|cand| certify(&report.instance, &cand.u, &cfg.certify))
                .map(|r| r.is_certified())
                .unwrap_or(false),
        );
    }
    rec
}

/// Fraction of tight trials for each `(d, k)` cell. Failed solves count
/// against the fraction and are tallied separately.
pub fn run_rop_table(
    family: &RopFamily,
    cells: &[(usize, usize)],
    trials: usize,
    seed: u64,
    certify_tight: bool,
    cfg: &ExperimentConfig,
) -> RopTable {
    let jobs: Vec<(usize, usize, usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, &(d, k))| {
            let cell_seed = derive_seed(seed, ci as u64);
            (0..trials).map(move |t| (d, k, t, derive_seed(cell_seed, t as u64)))
        })
        .collect();
    let records = map_trials(cfg.mode, &jobs, |&(d, k, t, s)| {
        rop_trial(family, d, k, t, s, certify_tight, cfg)
    });

    let summaries = cells
        .iter()
        .enumerate()
        .map(|(ci, &(d, k))| {
            let rs = &records[ci * trials..(ci + 1) * trials];
            let tight = rs.iter().filter(|r| r.tight).count();
            let failures = rs
                .iter()
                .filter(|r| r.error.is_some() || r.status == Some(SolveStatus::NumericalFailure))
                .count();
            RopCellSummary {
                family: family.name().into(),
                params: family.params(),
                d,
                k,
                trials,
                tight,
                failures,
                fraction: if trials == 0 {
                    f64::NAN
                } else {
                    tight as f64 / trials as f64
                },
                certified: rs.iter().filter(|r| r.certified == Some(true)).count(),
            }
        })
        .collect();
    RopTable {
        cells: summaries,
        records,
    }
}

// ---------------------------------------------------------------------------
// commuting-distance sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum SweepPoint {
    Cjd {
        d: usize,
        k: usize,
        r: usize,
        sigma: f64,
        #[serde(default)]
        ordering: CjdOrdering,
    },
    Hppca {
        d: usize,
        lambdas: Vec<f64>,
        variances: Vec<f64>,
        group_sizes: Vec<usize>,
    },
}

impl SweepPoint {
    /// Value on the sweep axis: `sigma`, or the first group size.
    pub fn axis_value(&self) -> f64 {
        match self {
            SweepPoint::Cjd { sigma, .. } => *sigma,
            SweepPoint::Hppca { group_sizes, .. } => group_sizes[0] as f64,
        }
    }

    /// A normalized instance for one trial. HPPCA trials draw a fresh
    /// planted subspace per seed.
    pub fn instance(&self, seed: u64) -> Result<ProblemInstance> {
        match self {
            SweepPoint::Cjd {
                d,
                k,
                r,
                sigma,
                ordering,
            } => gen_cjd(*d, *k, *r, *sigma, seed, *ordering),
            SweepPoint::Hppca {
                d,
                lambdas,
                variances,
                group_sizes,
            } => {
                let u = random_point(*d, lambdas.len(), derive_seed(seed, u64::MAX));
                let m = HppcaModel::new(
                    u,
                    lambdas.clone(),
                    variances.clone(),
                    group_sizes.clone(),
                    seed,
                )?;
                normalize_instance(&build_instance(&m, &sample(&m))?)
            }
        }
    }
}

/// Outcome classes of a sweep trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marker {
    /// The manifold solution was certified globally optimal.
    Certified,
    /// Not certified, and the relaxation has no rank-one solution.
    NotTight,
    /// Not certified although the relaxation is tight: a suboptimal stationary point.
    TightSuboptimal,
}

impl Marker {
    pub fn classify(certified: bool, tight: bool) -> Marker {
        match (certified, tight) {
            (true, _) => Marker::Certified,
            (false, false) => Marker::NotTight,
            (false, true) => Marker::TightSuboptimal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Marker::Certified => "certified",
            Marker::NotTight => "not-tight",
            Marker::TightSuboptimal => "tight-suboptimal",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRecord {
    pub point: usize,
    pub axis_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub commuting_distance: f64,
    pub sdp_status: Option<SolveStatus>,
    pub rop_error: f64,
    pub tight: bool,
    pub p_sdp: f64,
    pub p_stmm: f64,
    /// `p_SDP − p_StMM`.
    pub objective_gap: f64,
    /// `‖|Ū_StMMᵀŪ_SDP| − I‖_F/√k`, when a relaxation candidate exists.
    pub subspace_distance: Option<f64>,
    pub certified: bool,
    pub stmm_iterations: usize,
    /// `None` when the trial failed.
    pub marker: Option<Marker>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub point: usize,
    pub axis_value: f64,
    pub trials: usize,
    pub failures: usize,
    pub median_commuting_distance: f64,
    pub tight_fraction: f64,
    pub certified_fraction: f64,
    /// Certified trials among the tight ones.
    pub certified_given_tight: f64,
    pub not_certified_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub summaries: Vec<SweepSummary>,
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    pub fn to_csv(&self) -> Result<String> {
        csv_string(&self.summaries)
    }

    pub fn records_jsonl(&self) -> Result<String> {
        jsonl_string(&self.records)
    }

    /// Plot data: one line per successful trial.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "# axis_value\tcommuting_distance\tobjective_gap\tsubspace_distance\tmarker\n",
        );
        for r in &self.records {
            if let Some(m) = r.marker {
                s.push_str(&format!(
                    "{}\t{:.6e}\t{:.6e}\t{}\t{}\n",
                    r.axis_value,
                    r.commuting_distance,
                    r.objective_gap,
                    r.subspace_distance
                        .map_or("nan".into(), |v| format!("{v:.6e}")),
                    m.as_str()
                ));
            }
        }
        s
    }

    pub fn failures(&self) -> usize {
        self.summaries.iter().map(|s| s.failures).sum()
    }
}

/// `‖|AᵀB| − I‖_F/√k`.
pub fn subspace_distance(a: &StiefelPoint, b: &StiefelPoint) -> f64 {
    let k = a.k();
    let p = (a.as_matrix().transpose() * b.as_matrix()).abs();
    (p - nalgebra::DMatrix::<f64>::identity(k, k)).norm() / (k as f64).sqrt()
}

fn sweep_trial(
    point: &SweepPoint,
    idx: usize,
    trial: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> SweepRecord {
    let mut rec = SweepRecord {
        point: idx,
        axis_value: point.axis_value(),
        trial,
        seed,
        commuting_distance: f64::NAN,
        sdp_status: None,
        rop_error: f64::NAN,
        tight: false,
        p_sdp: f64::NAN,
        p_stmm: f64::NAN,
        objective_gap: f64::NAN,
        subspace_distance: None,
        certified: false,
        stmm_iterations: 0,
        marker: None,
        error: None,
    };
    let inst = match point.instance(seed) {
        Ok(c) => c,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.commuting_distance = max_commuting_distance(&inst);
    let report = match solve_sdp(&inst, &cfg.sdp) {
        Ok(r) => r,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.sdp_status = Some(report.status);
    if report.status != SolveStatus::Optimal {
        rec.error = Some(format!("relaxation solve ended with {:?}", report.status));
        return rec;
    }
    rec.rop_error = report.rop_error;
    rec.tight = is_tight_report(&report, cfg);
    rec.p_sdp = report.relaxation_value();

    // both solvers work on the instance the relaxation solved
    let work = &report.instance;
    let start = random_point(work.d, work.k, derive_seed(seed, 1));
    let trace = stmm_solve(work, &start, &cfg.stmm);
    rec.stmm_iterations = trace.iterations();
    rec.p_stmm = objective(work, &trace.final_point);
    rec.objective_gap = rec.p_sdp - rec.p_stmm;
    if let Ok(cand) = extract_candidate(&report.primal, &cfg.sdp.tolerances) {
        rec.subspace_distance = Some(subspace_distance(&trace.final_point, &cand.u));
    }
    match certify(work, &trace.final_point, &cfg.certify) {
        Ok(c) => rec.certified = c.is_certified(),
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    }
    rec.marker = Some(Marker::classify(rec.certified, rec.tight));
    rec
}

/// For every point and trial: relaxation solve, manifold solve from a random
/// start, certificate on the manifold solution and the resulting marker.
pub fn run_cjd_sweep(
    points: &[SweepPoint],
    trials: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> SweepResult {
    let jobs: Vec<(usize, usize, u64)> = (0..points.len())
        .flat_map(|pi| {
            let ps = derive_seed(seed, pi as u64);
            (0..trials).map(move |t| (pi, t, derive_seed(ps, t as u64)))
        })
        .collect();
    let records = map_trials(cfg.mode, &jobs, |&(pi, t, s)| {
        sweep_trial(&points[pi], pi, t, s, cfg)
    });
    let summaries = points
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let rs = &records[pi * trials..(pi + 1) * trials];
            let ok: Vec<&SweepRecord> = rs.iter().filter(|r| r.marker.is_some()).collect();
            let n_ok = ok.len().max(1) as f64;
            let tight = ok.iter().filter(|r| r.tight).count();
            let cert = ok.iter().filter(|r| r.certified).count();
            let cert_tight = ok.iter().filter(|r| r.tight && r.certified).count();
            let deltas: Vec<f64> = rs
                .iter()
                .map(|r| r.commuting_distance)
                .filter(|v| v.is_finite())
                .collect();
            SweepSummary {
                point: pi,
                axis_value: p.axis_value(),
                trials,
                failures: rs.len() - ok.len(),
                median_commuting_distance: median(&deltas),
                tight_fraction: tight as f64 / n_ok,
                certified_fraction: cert as f64 / n_ok,
                certified_given_tight: if tight == 0 {
                    f64::NAN
                } else {
                    cert_tight as f64 / tight as f64
                },
                not_certified_fraction: 1.0 - cert as f64 / n_ok,
            }
        })
        .collect();
    SweepResult { summaries, records }
}

// ---------------------------------------------------------------------------
// perturbation sweeps around diagonal instances

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagSweepSummary {
    pub perturbation: f64,
    pub trials: usize,
    pub tight: usize,
    pub failures: usize,
    pub fraction: f64,
    pub median_commuting_distance: f64,
}

#[derive(Debug, Clone)]
pub struct DiagSweepResult {
    pub summaries: Vec<DiagSweepSummary>,
    pub records: Vec<crate::diagonal::DiagSweepRecord>,
}

impl DiagSweepResult {
    pub fn to_csv(&self) -> Result<String> {
        csv_string(&self.summaries)
    }

    pub fn records_jsonl(&self) -> Result<String> {
        jsonl_string(&self.records)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# perturbation\tcommuting_distance\trop_error\ttight\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{:.6e}\t{:.6e}\t{}\n",
                r.perturbation, r.max_commuting_distance, r.rop_error, r.tight as u8
            ));
        }
        s
    }

    pub fn failures(&self) -> usize {
        self.summaries.iter().map(|s| s.failures).sum()
    }
}

/// Tightness fraction of random perturbations of `center` at each scale.
pub fn run_diag_sweep(
    center: &ProblemInstance,
    scales: &[f64],
    trials: usize,
    seed: u64,
    cfg: &ExperimentConfig,
) -> DiagSweepResult {
    let mut summaries = Vec::with_capacity(scales.len());
    let mut records = Vec::new();
    for (si, &theta) in scales.iter().enumerate() {
        let rs = tightness_sweep(
            center,
            theta,
            trials,
            derive_seed(seed, si as u64),
            cfg.rop_threshold,
            &cfg.sdp,
            cfg.mode,
        );
        let tight = rs.iter().filter(|r| r.tight).count();
        let failures = rs
            .iter()
            .filter(|r| r.error.is_some() || r.status == Some(SolveStatus::NumericalFailure))
            .count();
        let deltas: Vec<f64> = rs
            .iter()
            .map(|r| r.max_commuting_distance)
            .filter(|v| v.is_finite())
            .collect();
        summaries.push(DiagSweepSummary {
            perturbation: theta,
            trials,
            tight,
            failures,
            fraction: if trials == 0 {
                f64::NAN
            } else {
                tight as f64 / trials as f64
            },
            median_commuting_distance: median(&deltas),
        });
        records.extend(rs);
    }
    DiagSweepResult { summaries, records }
}

// ---------------------------------------------------------------------------
// timing

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchTrial {
    pub d: usize,
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    /// `None` when the relaxation arm was skipped after a timeout.
    pub sdp_secs: Option<f64>,
    pub stmm_cert_secs: f64,
    pub certified: bool,
    pub sdp_tight: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub d: usize,
    pub k: usize,
    pub trials: usize,
    pub sdp_median_secs: f64,
    pub sdp_std_secs: f64,
    pub stmm_cert_median_secs: f64,
    pub stmm_cert_std_secs: f64,
    /// `sdp_median / stmm_cert_median`.
    pub speedup: f64,
    pub sdp_timed_out: bool,
    pub certified: usize,
}

#[derive(Debug, Clone)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub trials: Vec<BenchTrial>,
}

impl BenchTable {
    pub fn to_csv(&self) -> Result<String> {
        csv_string(&self.rows)
    }

    pub fn records_jsonl(&self) -> Result<String> {
        jsonl_string(&self.trials)
    }

    pub fn to_tsv(&self) -> String {
        let mut s =
            String::from("# d\tk\tsdp_median\tsdp_std\tstmm_cert_median\tstmm_cert_std\tspeedup\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.4}\n",
                r.d,
                r.k,
                r.sdp_median_secs,
                r.sdp_std_secs,
                r.stmm_cert_median_secs,
                r.stmm_cert_std_secs,
                r.speedup
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub group_sizes: Vec<usize>,
    pub variances: Vec<f64>,
    /// Once a relaxation solve in a cell takes longer than this, the
    /// remaining relaxation solves of the cell are skipped.
    pub sdp_timeout_secs: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            group_sizes: vec![100, 400],
            variances: vec![1.0, 4.0],
            sdp_timeout_secs: 600.0,
        }
    }
}

/// Wall time of the full relaxation against the manifold solver followed by
/// the certificate, on the same HPPCA instances. Runs sequentially so the
/// timings are not distorted by sharing cores.
pub fn run_bench(
    ds: &[usize],
    ks: &[usize],
    trials: usize,
    seed: u64,
    bench: &BenchConfig,
    cfg: &ExperimentConfig,
) -> Result<BenchTable> {
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (ki, &k) in ks.iter().enumerate() {
        for (di, &d) in ds.iter().enumerate() {
            if k > d {
                continue;
            }
            let cell_seed = derive_seed(seed, (ki * ds.len() + di) as u64);
            let mut timed_out = false;
            let mut cell = Vec::with_capacity(trials);
            for t in 0..trials {
                let s = derive_seed(cell_seed, t as u64);
                let fam = RopFamily::Hppca {
                    group_sizes: bench.group_sizes.clone(),
                    variances: bench.variances.clone(),
                };
                let raw = fam.instance(d, k, s)?;

                let t0 = Instant::now();
                let work = normalize_instance(&raw)?;
                let start = random_point(d, k, derive_seed(s, 1));
                let trace = stmm_solve(&work, &start, &cfg.stmm);
                let cert = certify(&work, &trace.final_point, &cfg.certify)?;
                let stmm_cert_secs = t0.elapsed().as_secs_f64();

                let (sdp_secs, sdp_tight) = if timed_out {
                    (None, None)
                } else {
                    let t1 = Instant::now();
                    let report = solve_sdp(&raw, &cfg.sdp)?;
                    let secs = t1.elapsed().as_secs_f64();
                    if secs > bench.sdp_timeout_secs {
                        timed_out = true;
                    }
                    (Some(secs), Some(is_tight_report(&report, cfg)))
                };
                log::info!("bench d={d} k={k} trial {t}: sdp {sdp_secs:?} s, stmm+cert {stmm_cert_secs:.3} s");
                cell.push(BenchTrial {
                    d,
                    k,
                    trial: t,
                    seed: s,
                    sdp_secs,
                    stmm_cert_secs,
                    certified: cert.is_certified(),
                    sdp_tight,
                });
            }
            let sdp: Vec<f64> = cell.iter().filter_map(|r| r.sdp_secs).collect();
            let fast: Vec<f64> = cell.iter().map(|r| r.stmm_cert_secs).collect();
            let (sm, fm) = (median(&sdp), median(&fast));
            rows.push(BenchRow {
                d,
                k,
                trials,
                sdp_median_secs: sm,
                sdp_std_secs: std_dev(&sdp),
                stmm_cert_median_secs: fm,
                stmm_cert_std_secs: std_dev(&fast),
                speedup: sm / fm,
                sdp_timed_out: timed_out,
                certified: cell.iter().filter(|r| r.certified).count(),
            });
            all.extend(cell);
        }
    }
    Ok(BenchTable { rows, trials: all })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fast_cfg(mode: ExecMode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            ..Default::default()
        }
    }

    #[test]
    fn marker_taxonomy_is_exhaustive() {
        assert_eq!(Marker::classify(true, true), Marker::Certified);
        assert_eq!(Marker::classify(true, false), Marker::Certified);
        assert_eq!(Marker::classify(false, false), Marker::NotTight);
        assert_eq!(Marker::classify(false, true), Marker::TightSuboptimal);
    }

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
        assert_abs_diff_eq!(std_dev(&[1.0, 3.0]), 2f64.sqrt());
    }

    #[test]
    fn subspace_distance_is_sign_invariant() {
        let a = random_point(5, 2, 1);
        let flipped = StiefelPoint::new(a.as_matrix() * -1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(subspace_distance(&a, &flipped), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rop_table_is_reproducible_across_modes() {
        let fam = RopFamily::Hppca {
            group_sizes: vec![20, 80],
            variances: vec![1.0, 4.0],
        };
        let a = run_rop_table(
            &fam,
            &[(6, 2), (8, 3)],
            3,
            11,
            true,
            &fast_cfg(ExecMode::Sequential),
        );
        let b = run_rop_table(
            &fam,
            &[(6, 2), (8, 3)],
            3,
            11,
            true,
            &fast_cfg(ExecMode::Parallel),
        );
        assert_eq!(a.records.len(), 6);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.tight, y.tight);
            assert_eq!(x.rop_error.to_bits(), y.rop_error.to_bits());
        }
        let csv = a.to_csv().unwrap();
        assert!(csv.starts_with("family,params,d,k,trials,tight,failures,fraction,certified"));
        assert_eq!(a.records_jsonl().unwrap().lines().count(), 6);
    }

    #[test]
    fn sweep_small() {
        let pts = vec![SweepPoint::Cjd {
            d: 6,
            k: 2,
            r: 2,
            sigma: 1e-6,
            ordering: CjdOrdering::Descending,
        }];
        let res = run_cjd_sweep(&pts, 3, 5, &fast_cfg(ExecMode::Sequential));
        assert_eq!(res.records.len(), 3);
        assert!(res.records.iter().all(|r| r.marker.is_some()));
        assert_eq!(res.to_tsv().lines().count(), 4);
        for r in &res.records {
            assert!(r.objective_gap >= -1e-6);
            if r.certified {
                assert!(r.objective_gap <= 1e-5);
            }
        }
    }
}
