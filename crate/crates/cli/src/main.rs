use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use hqsdp::certificate::{certify, classify_inconclusive, CertifyConfig};
use hqsdp::exec::{configure_threads, ExecMode};
use hqsdp::external::ExternalBackend;
use hqsdp::generators::{
    gen_cjd, gen_nested, gen_random_psd, high_rank_fixture, CjdOrdering, CoeffSpec,
};
use hqsdp::harness::{
    run_bench, run_cjd_sweep, run_diag_sweep, run_rop_table, BenchConfig, ExperimentConfig,
    RopFamily, SweepPoint,
};
use hqsdp::hppca::{build_instance, linspace, sample, HppcaModel, HppcaModelFile};
use hqsdp::io::{
    load_instance, read_json, save_instance, write_json, CandidateFile, SolveReportFile,
};
use hqsdp::sdp::{
    extract_candidate, solve_sdp, solve_sdp_with, BuiltinBackend, SdpBackend, SdpConfig,
    SolveStatus,
};
use hqsdp::stiefel::{best_run, multi_start, objective, random_point, stmm_solve, SolverConfig};
use hqsdp::symmat::{check_rop_orthogonality, instance_metrics, ProblemInstance};
use hqsdp::{Error, StiefelPoint};

#[derive(Parser)]
#[command(
    name = "hqsdp",
    version,
    about = "Sums of heterogeneous quadratic forms over the Stiefel manifold"
)]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for experiment outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Exit successfully even if some solves failed numerically.
    #[arg(long, global = true)]
    tolerate_failures: bool,
    /// Run trials one after another on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Solve the convex relaxation of an instance.
    SolveSdp(SolveSdpArgs),
    /// Run the first-order manifold solver.
    SolveStmm(SolveStmmArgs),
    /// Check a candidate point for global optimality.
    Certify(CertifyArgs),
    /// Fraction of tight relaxations over a (d, k) grid.
    RopTable(RopTableArgs),
    /// Relaxation and manifold solver against commuting distance.
    CjdSweep(CjdSweepArgs),
    /// Tightness under random perturbations of a diagonal instance.
    DiagSweep(DiagSweepArgs),
    /// Timing of the relaxation against manifold solver plus certificate.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Hppca,
    Randpsd,
    Cjd,
    #[value(alias = "appendixE")]
    Nested,
    #[value(alias = "fixtureC")]
    Fixture,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Family parameters as a JSON object.
    #[arg(long, default_value = "{}")]
    params: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Builtin,
    External,
}

#[derive(Args)]
struct SolveSdpArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "builtin")]
    backend: BackendArg,
    /// Program (and arguments) for the external backend.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    external_cmd: Vec<String>,
    /// Interior-point stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 2000 iterations.
    Cjd,
    /// 10000 iterations.
    Hppca,
}

#[derive(Args)]
struct SolveStmmArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Start point; random when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cjd")]
    preset: Preset,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Random restarts; the best final objective is kept.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV file for the objective and gradient-norm trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Solve the relaxation to explain an inconclusive result.
    #[arg(long)]
    classify: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Comma-separated list argument. A named alias keeps clap from treating
/// the field as a repeated flag.
type List<T> = Vec<T>;

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x}: {e}")))
        .collect()
}

#[derive(Clone, Copy, ValueEnum)]
enum RopFamilyArg {
    Hppca,
    Randpsd,
}

#[derive(Args)]
struct RopTableArgs {
    #[arg(long, value_enum, default_value = "hppca")]
    family: RopFamilyArg,
    #[arg(long, value_parser = parse_list::<usize>, default_value = "10,20,30")]
    d: List<usize>,
    #[arg(long, value_parser = parse_list::<usize>, default_value = "3,5")]
    k: List<usize>,
    /// Group sizes (HPPCA).
    #[arg(long, value_parser = parse_list::<usize>, default_value = "100,400")]
    n: List<usize>,
    /// Group noise variances (HPPCA).
    #[arg(long, value_parser = parse_list::<f64>, default_value = "1,4")]
    v: List<f64>,
    /// Rank of each random PSD matrix; defaults to k.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// 10 trials and d ≤ 30.
    #[arg(long)]
    fast: bool,
    /// Also certify the candidate of every tight trial.
    #[arg(long)]
    certify: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepFamily {
    Cjd,
    Hppca,
}

#[derive(Args)]
struct CjdSweepArgs {
    #[arg(long, value_enum, default_value = "cjd")]
    family: SweepFamily,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Nonzero diagonal entries per level (CJD).
    #[arg(long, default_value_t = 3)]
    r: usize,
    /// Noise variances to sweep (CJD).
    #[arg(long, value_parser = parse_list::<f64>, default_value = "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1")]
    sigmas: List<f64>,
    /// Build levels as Mᵢ = Mᵢ₋₁ + Dᵢ + Nᵢ instead of Mᵢ = Mᵢ₊₁ + Dᵢ + Nᵢ.
    #[arg(long)]
    ascending: bool,
    /// First-group sizes to sweep (HPPCA); group sizes are n₁ times `ratios`.
    #[arg(long, value_parser = parse_list::<usize>, default_value = "10,20,50,100,200")]
    n1: List<usize>,
    #[arg(long, value_parser = parse_list::<usize>, default_value = "1,4")]
    ratios: List<usize>,
    #[arg(long, value_parser = parse_list::<f64>, default_value = "1,4")]
    v: List<f64>,
    /// Signal strengths (HPPCA); defaults to k values evenly spaced from 4 down to 1.
    #[arg(long, value_parser = parse_list::<f64>)]
    lambdas: Option<List<f64>>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long)]
    max_iters: Option<usize>,
    /// 10 trials and d ≤ 30.
    #[arg(long)]
    fast: bool,
}

#[derive(Args)]
struct DiagSweepArgs {
    /// Diagonal center instance; a well-separated random one when omitted.
    #[arg(long)]
    center: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_parser = parse_list::<f64>, default_value = "1e-4,1e-3,1e-2,1e-1,0.3,1")]
    scales: List<f64>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_parser = parse_list::<usize>, default_value = "20,40,60")]
    d: List<usize>,
    #[arg(long, value_parser = parse_list::<usize>, default_value = "3")]
    k: List<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Skip the remaining relaxation solves of a cell after one exceeds this.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
    mode: ExecMode,
}

impl Ctx {
    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            mode: self.mode,
            ..Default::default()
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let p = self.out_dir.join(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

/// Number of failed solves, used for the exit status.
type Failures = usize;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads(cli.jobs);
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        mode: if cli.sequential {
            ExecMode::Sequential
        } else {
            ExecMode::Parallel
        },
    };
    let outcome = match &cli.command {
        Cmd::Gen(a) => cmd_gen(&ctx, a),
        Cmd::SolveSdp(a) => cmd_solve_sdp(a),
        Cmd::SolveStmm(a) => cmd_solve_stmm(&ctx, a),
        Cmd::Certify(a) => cmd_certify(a),
        Cmd::RopTable(a) => cmd_rop_table(&ctx, a),
        Cmd::CjdSweep(a) => cmd_cjd_sweep(&ctx, a),
        Cmd::DiagSweep(a) => cmd_diag_sweep(&ctx, a),
        Cmd::Bench(a) => cmd_bench(&ctx, a),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) if cli.tolerate_failures => {
            log::warn!("{n} numerical failure(s) tolerated");
            ExitCode::SUCCESS
        }
        Ok(n) => {
            eprintln!("error: {n} numerical failure(s); pass --tolerate-failures to ignore");
            ExitCode::from(2)
        }
        Err(e) => {
            let numerical = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::NumericalFailure(_)));
            if numerical && cli.tolerate_failures {
                eprintln!("warning: {e:#}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {e:#}");
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn param<T: serde::de::DeserializeOwned>(p: &Map<String, Value>, key: &str) -> Result<Option<T>> {
    p.get(key)
        .map(|v| serde_json::from_value(v.clone()).with_context(|| format!("parameter `{key}`")))
        .transpose()
}

fn required<T: serde::de::DeserializeOwned>(p: &Map<String, Value>, key: &str) -> Result<T> {
    param(p, key)?.with_context(|| format!("missing parameter `{key}`"))
}

fn cmd_gen(ctx: &Ctx, a: &GenArgs) -> Result<Failures> {
    let p: Map<String, Value> =
        serde_json::from_str(&a.params).context("--params must be a JSON object")?;
    let seed = param::<u64>(&p, "seed")?.unwrap_or(ctx.seed);
    let mut meta = Map::new();
    meta.insert("seed".into(), json!(seed));
    let inst: ProblemInstance = match a.family {
        Family::Hppca => {
            let d: usize = required(&p, "d")?;
            let k: usize = required(&p, "k")?;
            let file = HppcaModelFile {
                d,
                k,
                lambdas: param(&p, "lambdas")?.unwrap_or_else(|| linspace(1.0, 4.0, k)),
                variances: param(&p, "variances")?.unwrap_or_else(|| vec![1.0, 4.0]),
                group_sizes: param(&p, "group_sizes")?.unwrap_or_else(|| vec![100, 400]),
                seed,
                u_true: param(&p, "u_true")?,
            };
            let model = HppcaModel::from_file(&file)?;
            meta.insert("family".into(), json!("hppca"));
            meta.insert("model".into(), serde_json::to_value(model.to_file())?);
            build_instance(&model, &sample(&model))?
        }
        Family::Randpsd => {
            let d: usize = required(&p, "d")?;
            let k: usize = required(&p, "k")?;
            let rank = param(&p, "rank")?.unwrap_or(k);
            meta.insert("family".into(), json!("randpsd"));
            meta.insert("rank".into(), json!(rank));
            gen_random_psd(d, k, rank, seed)?
        }
        Family::Cjd => {
            let d: usize = required(&p, "d")?;
            let k: usize = required(&p, "k")?;
            let r = param(&p, "r")?.unwrap_or(k);
            let sigma: f64 = required(&p, "sigma")?;
            let ordering: CjdOrdering = param(&p, "ordering")?.unwrap_or_default();
            meta.insert("family".into(), json!("cjd"));
            meta.insert("sigma".into(), json!(sigma));
            gen_cjd(d, k, r, sigma, seed, ordering)?
        }
        Family::Nested => {
            let d: usize = required(&p, "d")?;
            let k: usize = required(&p, "k")?;
            let coeff = match param::<Vec<Vec<f64>>>(&p, "coefficients")? {
                Some(rows) => CoeffSpec::Explicit(rows),
                None => CoeffSpec::Random {
                    off_diag_scale: param(&p, "off_diag_scale")?.unwrap_or(1.0),
                },
            };
            let n = gen_nested(d, k, &coeff, seed)?;
            meta.insert("family".into(), json!("nested"));
            meta.insert("optimal_value".into(), json!(n.optimal_value));
            meta.insert(
                "optimum".into(),
                serde_json::to_value(CandidateFile::from_point(&n.optimum))?,
            );
            n.instance
        }
        Family::Fixture => {
            let (x1, x2) = high_rank_fixture();
            let v = json!({ "d": 4, "x_blocks": [x1.to_rows(), x2.to_rows()] });
            write_json(&a.out, &v)?;
            println!("{}", a.out.display());
            return Ok(0);
        }
    };
    meta.insert(
        "metrics".into(),
        serde_json::to_value(instance_metrics(&inst))?,
    );
    save_instance(&a.out, &inst, meta)?;
    println!("{}", a.out.display());
    Ok(0)
}

fn cmd_solve_sdp(a: &SolveSdpArgs) -> Result<Failures> {
    let c = load_instance(&a.instance)?;
    let mut cfg = SdpConfig::default();
    if let Some(t) = a.tol {
        cfg.ipm.tol = t;
    }
    let backend: Box<dyn SdpBackend> = match a.backend {
        BackendArg::Builtin => Box::new(BuiltinBackend),
        BackendArg::External => {
            let Some((program, args)) = a.external_cmd.split_first() else {
                bail!("--backend external needs --external-cmd PROGRAM [ARGS...]");
            };
            Box::new(ExternalBackend {
                program: program.clone(),
                args: args.to_vec(),
            })
        }
    };
    let report = solve_sdp_with(backend.as_ref(), &c, &cfg)?;
    let cand = extract_candidate(&report.primal, &cfg.tolerances).ok();
    let orth = check_rop_orthogonality(&report.primal.x_blocks, &cfg.tolerances).ok();
    let file = SolveReportFile::new(&report, cand.as_ref(), orth);
    match &a.out {
        Some(p) => write_json(p, &file)?,
        None => println!("{}", serde_json::to_string_pretty(&file)?),
    }
    eprintln!(
        "status {:?}  value {:.10}  gap {:.2e}  kkt {:.2e}  rop_error {:.2e}",
        report.status,
        report.raw_relaxation_value(),
        report.gap,
        report.kkt.max(),
        report.rop_error
    );
    Ok(usize::from(report.status == SolveStatus::NumericalFailure))
}

fn load_candidate(path: &Path) -> Result<StiefelPoint> {
    let f: CandidateFile = read_json(path)?;
    Ok(f.to_point(1e-8)?)
}

fn cmd_solve_stmm(ctx: &Ctx, a: &SolveStmmArgs) -> Result<Failures> {
    let c = load_instance(&a.instance)?;
    let mut cfg = match a.preset {
        Preset::Cjd => SolverConfig::cjd_experiment(),
        Preset::Hppca => SolverConfig::hppca_experiment(),
    };
    cfg.seed = ctx.seed;
    if let Some(m) = a.max_iters {
        cfg.max_iters = m;
    }
    if let Some(g) = a.grad_tol {
        cfg.grad_tol = g;
    }
    let trace = match &a.init {
        Some(p) => stmm_solve(&c, &load_candidate(p)?, &cfg),
        None if a.restarts > 1 => {
            let mut runs = multi_start(&c, a.restarts, &cfg, ctx.mode);
            let best = best_run(&runs).expect("at least one restart");
            runs.swap_remove(best)
        }
        None => stmm_solve(&c, &random_point(c.d, c.k, ctx.seed), &cfg),
    };
    if let Some(p) = &a.trace {
        fs::write(p, trace.to_csv())?;
    }
    let summary = json!({
        "objective": objective(&c, &trace.final_point),
        "grad_norm": trace.final_grad_norm(),
        "iterations": trace.iterations(),
        "stop": format!("{:?}", trace.stop),
        "degenerate_steps": trace.degenerate_steps.len(),
    });
    let mut out = serde_json::to_value(CandidateFile::from_point(&trace.final_point))?;
    out.as_object_mut()
        .expect("object")
        .insert("solver".into(), summary.clone());
    match &a.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    eprintln!("{summary}");
    Ok(0)
}

fn cmd_certify(a: &CertifyArgs) -> Result<Failures> {
    let c = load_instance(&a.instance)?;
    let u = load_candidate(&a.candidate)?;
    let cfg = CertifyConfig {
        tol: a.tol,
        ..Default::default()
    };
    let mut r = certify(&c, &u, &cfg)?;
    let mut failures = 0;
    if !r.is_certified() && a.classify {
        match solve_sdp(&c, &SdpConfig::default()) {
            Ok(rep) => r.classification = Some(classify_inconclusive(&u, Some(&rep), 1e-5, 1e-5)),
            Err(e) => {
                log::warn!("relaxation solve for classification failed: {e}");
                failures += 1;
            }
        }
    }
    let out = json!({
        "status": r.status,
        "nu_witness": r.nu_witness,
        "classification": r.classification,
        "min_eig_slacks": r.min_eig_slacks,
        "margin": r.margin,
        "precondition_weak": r.precondition_weak,
        "symmetry_residual": r.symmetry_residual,
        "grad_norm": r.grad_norm,
        "kkt_residuals": r.kkt.map(|k| k.as_array()),
    });
    match &a.out {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    Ok(failures)
}

fn cmd_rop_table(ctx: &Ctx, a: &RopTableArgs) -> Result<Failures> {
    let family = match a.family {
        RopFamilyArg::Hppca => RopFamily::Hppca {
            group_sizes: a.n.clone(),
            variances: a.v.clone(),
        },
        RopFamilyArg::Randpsd => RopFamily::RandPsd { rank: a.rank },
    };
    let trials = if a.fast { 10 } else { a.trials };
    let cells: Vec<(usize, usize)> =
        a.d.iter()
            .filter(|&&d| !a.fast || d <= 30)
            .flat_map(|&d| a.k.iter().filter(move |&&k| k <= d).map(move |&k| (d, k)))
            .collect();
    let table = run_rop_table(
        &family,
        &cells,
        trials,
        ctx.seed,
        a.certify,
        &ctx.experiment(),
    );
    let csv = table.to_csv()?;
    ctx.write("rop_table.csv", &csv)?;
    ctx.write("rop_records.jsonl", &table.records_jsonl()?)?;
    print!("{csv}");
    Ok(table.failures())
}

fn cmd_cjd_sweep(ctx: &Ctx, a: &CjdSweepArgs) -> Result<Failures> {
    let trials = if a.fast { 10 } else { a.trials };
    let points: Vec<SweepPoint> = match a.family {
        SweepFamily::Cjd => {
            if a.fast && a.d > 30 {
                bail!("--fast limits d to 30");
            }
            let ordering = if a.ascending {
                CjdOrdering::Ascending
            } else {
                CjdOrdering::Descending
            };
            a.sigmas
                .iter()
                .map(|&sigma| SweepPoint::Cjd {
                    d: a.d,
                    k: a.k,
                    r: a.r,
                    sigma,
                    ordering,
                })
                .collect()
        }
        SweepFamily::Hppca => {
            let lambdas = a.lambdas.clone().unwrap_or_else(|| linspace(4.0, 1.0, a.k));
            a.n1.iter()
                .map(|&n1| SweepPoint::Hppca {
                    d: a.d,
                    lambdas: lambdas.clone(),
                    variances: a.v.clone(),
                    group_sizes: a.ratios.iter().map(|r| r * n1).collect(),
                })
                .collect()
        }
    };
    let mut cfg = ctx.experiment();
    if matches!(a.family, SweepFamily::Hppca) {
        cfg.stmm = SolverConfig::hppca_experiment();
    }
    if let Some(m) = a.max_iters {
        cfg.stmm.max_iters = m;
    }
    let res = run_cjd_sweep(&points, trials, ctx.seed, &cfg);
    let csv = res.to_csv()?;
    ctx.write("cjd_summary.csv", &csv)?;
    ctx.write("cjd_records.jsonl", &res.records_jsonl()?)?;
    ctx.write("cjd_plot.tsv", &res.to_tsv())?;
    print!("{csv}");
    Ok(res.failures())
}

fn cmd_diag_sweep(ctx: &Ctx, a: &DiagSweepArgs) -> Result<Failures> {
    let center = match &a.center {
        Some(p) => load_instance(p)?,
        None => ProblemInstance::from_diagonals(&hqsdp::diagonal::separated_diagonal_values(
            a.d, a.k, ctx.seed,
        ))?,
    };
    let res = run_diag_sweep(&center, &a.scales, a.trials, ctx.seed, &ctx.experiment());
    let csv = res.to_csv()?;
    ctx.write("diag_sweep.csv", &csv)?;
    ctx.write("diag_records.jsonl", &res.records_jsonl()?)?;
    ctx.write("diag_plot.tsv", &res.to_tsv())?;
    print!("{csv}");
    Ok(res.failures())
}

fn cmd_bench(ctx: &Ctx, a: &BenchArgs) -> Result<Failures> {
    let bench = BenchConfig {
        sdp_timeout_secs: a.timeout,
        ..Default::default()
    };
    let table = run_bench(&a.d, &a.k, a.trials, ctx.seed, &bench, &ctx.experiment())?;
    let csv = table.to_csv()?;
    ctx.write("bench.csv", &csv)?;
    ctx.write("bench_trials.jsonl", &table.records_jsonl()?)?;
    ctx.write("bench.tsv", &table.to_tsv())?;
    print!("{csv}");
    Ok(0)
}
