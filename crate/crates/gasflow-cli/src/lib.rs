//! Command-line front end: solve single instances, run randomized batches,
//! compare equations of state, and compare scaled against dimensional
//! solves. Outputs are machine-readable (JSON solution files, CSV tables);
//! human-oriented notes go to standard error.
//!
//! Exit codes: 0 feasible, 1 input/output or schema error, 2 infeasible,
//! 3 converged-out-of-domain or failed.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use gasflow::eos::{cnga_b_coefficients, EosKind};
use gasflow::network::{parse_instance, perturb_instance, validate, Network};
use gasflow::scaling::{
    choose_nominals_with, nondimensionalize, redimensionalize, NominalOverrides, NominalValues,
    ScaledNetwork,
};
use gasflow::solver::{
    pressure_correction_rerun, solve, Classification, FailureReason, Feasibility, Outcome,
    SolverConfig,
};

pub const CSV_HEADER_COMMENT: &str = "# gasflow csv v1";
pub const SOLUTION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EosArg {
    Ideal,
    Cnga,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and write the physical-unit solution.
    Solve(SolveArgs),
    /// Solve many randomized derivatives of an instance.
    Batch(BatchArgs),
    /// Solve under the ideal and CNGA models and tabulate the deviation.
    CompareEos(SolveArgs),
    /// Solve each randomized instance scaled and unscaled.
    CompareScaling(BatchArgs),
}

#[derive(Debug, Args, Clone)]
pub struct SolveArgs {
    /// Instance document (JSON).
    pub instance: PathBuf,
    /// Override the instance's equation-of-state kind.
    #[arg(long, value_enum)]
    pub eos: Option<EosArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Residual max-norm convergence bound.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Write the primary output here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Solve the raw dimensional equations (all nominal values 1).
    #[arg(long)]
    pub dimensional: bool,
    #[arg(long)]
    pub nominal_l0: Option<f64>,
    #[arg(long)]
    pub nominal_p0: Option<f64>,
    #[arg(long)]
    pub nominal_v0: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct BatchArgs {
    #[command(flatten)]
    pub common: SolveArgs,
    /// Number of randomized instances.
    #[arg(long = "n", default_value_t = 500)]
    pub count: usize,
    #[arg(long, default_value_t = 0.9)]
    pub withdraw_lo: f64,
    #[arg(long, default_value_t = 1.1)]
    pub withdraw_hi: f64,
    #[arg(long, default_value_t = 1.1)]
    pub ratio_lo: f64,
    #[arg(long, default_value_t = 1.4)]
    pub ratio_hi: f64,
}

/// Per-run record; deviation columns are filled by `compare-eos` only.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceReport {
    pub instance_id: String,
    pub classification: String,
    pub feasibility: String,
    pub certificate: String,
    pub diagnostic: String,
    pub iterations: usize,
    pub residual_final: f64,
    pub max_rel_pressure_dev: Option<f64>,
    pub max_rel_density_dev: Option<f64>,
    pub wall_time_s: f64,
}

pub fn classification_label(c: Classification) -> &'static str {
    match c {
        Classification::ConvergedInDomain => "converged_in_domain",
        Classification::ConvergedOutOfDomain => "converged_out_of_domain",
        Classification::Failed => "failed",
    }
}

pub fn feasibility_label(f: &Feasibility) -> &'static str {
    match f {
        Feasibility::Feasible => "feasible",
        Feasibility::Infeasible(_) => "infeasible",
        Feasibility::Indeterminate => "indeterminate",
    }
}

fn certificate_label(outcome: &Outcome) -> String {
    outcome
        .certificate()
        .iter()
        .map(|c| {
            let reason = match c.reason {
                gasflow::solver::CertificateReason::NegativeCompressorFlow => {
                    "negative_compressor_flow"
                }
                gasflow::solver::CertificateReason::NegativePotential => "negative_potential",
            };
            format!("{}:{}", c.element_id, reason)
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn diagnostic_label(outcome: &Outcome) -> String {
    match outcome.failure {
        None => String::new(),
        Some(FailureReason::MaxIterations) => "max_iterations".into(),
        Some(FailureReason::Diverged) => "diverged".into(),
        Some(FailureReason::SingularJacobian { rank, dimension }) => {
            format!("singular_jacobian(rank {rank} of {dimension})")
        }
    }
}

/// Exit code of one outcome under the cross-mode contract.
pub fn exit_code(outcome: &Outcome) -> i32 {
    match (&outcome.classification, &outcome.feasibility) {
        (Classification::ConvergedInDomain, Feasibility::Feasible) => 0,
        (Classification::ConvergedInDomain, _) => 2,
        _ => 3,
    }
}

fn combine_exit(codes: impl IntoIterator<Item = i32>) -> i32 {
    let mut any_infeasible = false;
    for c in codes {
        match c {
            3 => return 3,
            2 => any_infeasible = true,
            _ => {}
        }
    }
    if any_infeasible {
        2
    } else {
        0
    }
}

/// Independent per-instance streams for batch runs.
fn derive_seed(base: u64, k: u64) -> u64 {
    let mut z = base ^ (k.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn load_network(args: &SolveArgs) -> Result<Network> {
    let text = fs::read_to_string(&args.instance)
        .with_context(|| format!("reading {}", args.instance.display()))?;
    let mut net = parse_instance(&text).map_err(|e| anyhow!("{e}"))?;
    if let Some(kind) = args.eos {
        let mut eos = *net.eos();
        eos.kind = match kind {
            EosArg::Ideal => EosKind::Ideal,
            EosArg::Cnga => EosKind::Cnga,
        };
        net = net.with_eos(eos).map_err(|e| anyhow!("{e}"))?;
    }
    for problem in validate(&net).problems() {
        eprintln!("warning: {problem}");
    }
    Ok(net)
}

fn nominals_for(args: &SolveArgs, net: &Network) -> Result<NominalValues> {
    if args.dimensional {
        return Ok(NominalValues::unit());
    }
    let overrides = NominalOverrides {
        l0: args.nominal_l0,
        p0: args.nominal_p0,
        v0: args.nominal_v0,
    };
    choose_nominals_with(net, &overrides).map_err(|e| anyhow!("{e}"))
}

fn scale(args: &SolveArgs, net: &Network) -> Result<(ScaledNetwork, NominalValues)> {
    let nv = nominals_for(args, net)?;
    let snet = nondimensionalize(net, &nv).map_err(|e| anyhow!("{e}"))?;
    Ok((snet, nv))
}

/// Solve with the configured tolerance; converged runs with negative
/// pressures get one warm-started correction pass. The reported duration
/// covers only the Newton iterations.
fn timed_solve(snet: &ScaledNetwork, cfg: &SolverConfig) -> (Outcome, Duration) {
    let start = Instant::now();
    let outcome = solve(snet, cfg);
    let outcome = pressure_correction_rerun(snet, cfg, outcome);
    (outcome, start.elapsed())
}

fn report_of(id: String, outcome: &Outcome, elapsed: Duration) -> InstanceReport {
    InstanceReport {
        instance_id: id,
        classification: classification_label(outcome.classification).into(),
        feasibility: feasibility_label(&outcome.feasibility).into(),
        certificate: certificate_label(outcome),
        diagnostic: diagnostic_label(outcome),
        iterations: outcome.iterations,
        residual_final: outcome.residual_history.last().copied().unwrap_or(f64::NAN),
        max_rel_pressure_dev: None,
        max_rel_density_dev: None,
        wall_time_s: elapsed.as_secs_f64(),
    }
}

fn write_primary(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn emit_report(report: &InstanceReport, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Json => eprintln!("{}", serde_json::to_string(report)?),
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.serialize(report)?;
            let buf = w.into_inner()?;
            eprint!("{}", String::from_utf8_lossy(&buf));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SolutionNode {
    id: String,
    pressure_pa: f64,
    injection_kg_s: f64,
}

#[derive(Serialize)]
struct SolutionEdge {
    id: String,
    flow_kg_s: f64,
}

#[derive(Serialize)]
struct SolutionFile {
    format_version: u32,
    classification: String,
    feasibility: String,
    certificate: String,
    iterations: usize,
    residual_final: f64,
    nodes: Vec<SolutionNode>,
    edges: Vec<SolutionEdge>,
}

fn solution_file(snet: &ScaledNetwork, nv: &NominalValues, outcome: &Outcome) -> SolutionFile {
    let (nodes, edges) = match &outcome.solution {
        Some(sol) => {
            let phys = redimensionalize(sol, nv);
            let nodes = snet
                .node_ids
                .iter()
                .enumerate()
                .map(|(i, id)| SolutionNode {
                    id: id.clone(),
                    pressure_pa: phys.p[i],
                    injection_kg_s: phys.q_full[i],
                })
                .collect();
            let edges = snet
                .edges
                .iter()
                .enumerate()
                .map(|(e, edge)| SolutionEdge {
                    id: edge.id.clone(),
                    flow_kg_s: phys.f[e],
                })
                .collect();
            (nodes, edges)
        }
        None => (Vec::new(), Vec::new()),
    };
    SolutionFile {
        format_version: SOLUTION_FORMAT_VERSION,
        classification: classification_label(outcome.classification).into(),
        feasibility: feasibility_label(&outcome.feasibility).into(),
        certificate: certificate_label(outcome),
        iterations: outcome.iterations,
        residual_final: outcome.residual_history.last().copied().unwrap_or(f64::NAN),
        nodes,
        edges,
    }
}

pub fn run_solve(args: &SolveArgs) -> Result<i32> {
    let net = load_network(args)?;
    let (snet, nv) = scale(args, &net)?;
    let cfg = SolverConfig {
        tolerance: args.tol,
        max_iterations: args.max_iter,
        seed: args.seed,
        ..SolverConfig::default()
    };
    let (outcome, elapsed) = timed_solve(&snet, &cfg);

    let file = solution_file(&snet, &nv, &outcome);
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    write_primary(&args.out, &bytes)?;
    emit_report(
        &report_of(instance_label(args), &outcome, elapsed),
        args.format,
    )?;
    Ok(exit_code(&outcome))
}

fn instance_label(args: &SolveArgs) -> String {
    args.instance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.instance.display().to_string())
}

/// Build a rayon pool sized by `GASFLOW_THREADS` (unset: rayon default).
fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("GASFLOW_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| anyhow!("GASFLOW_THREADS must be a positive integer, got {raw:?}"))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().context("building worker pool")
}

fn check_ranges(args: &BatchArgs) -> Result<()> {
    if !(args.withdraw_lo > 0.0 && args.withdraw_lo <= args.withdraw_hi) {
        return Err(anyhow!("withdrawal range must be positive and ordered"));
    }
    if !(args.ratio_lo > 0.0 && args.ratio_lo <= args.ratio_hi) {
        return Err(anyhow!("ratio range must be positive and ordered"));
    }
    if args.count == 0 {
        return Err(anyhow!("--n must be at least 1"));
    }
    Ok(())
}

pub fn run_batch(args: &BatchArgs) -> Result<i32> {
    check_ranges(args)?;
    let base = load_network(&args.common)?;
    let pool = worker_pool()?;

    let reports: Vec<Result<(InstanceReport, i32)>> = pool.install(|| {
        (0..args.count)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(args.common.seed, k as u64);
                let inst = perturb_instance(
                    &base,
                    seed,
                    (args.withdraw_lo, args.withdraw_hi),
                    (args.ratio_lo, args.ratio_hi),
                );
                let (snet, _) = scale(&args.common, &inst)?;
                let cfg = SolverConfig {
                    tolerance: args.common.tol,
                    max_iterations: args.common.max_iter,
                    seed,
                    ..SolverConfig::default()
                };
                let (outcome, elapsed) = timed_solve(&snet, &cfg);
                Ok((
                    report_of(format!("{:04}", k), &outcome, elapsed),
                    exit_code(&outcome),
                ))
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(args.count);
    let mut codes = Vec::with_capacity(args.count);
    for r in reports {
        let (report, code) = r?;
        rows.push(report);
        codes.push(code);
    }

    let converged = rows
        .iter()
        .filter(|r| r.classification != "failed")
        .count();
    let feasible = rows.iter().filter(|r| r.feasibility == "feasible").count();
    let iters: Vec<usize> = rows.iter().map(|r| r.iterations).collect();
    let mean_iter = iters.iter().sum::<usize>() as f64 / rows.len() as f64;
    let max_iter = iters.iter().max().copied().unwrap_or(0);
    let mean_wall = rows.iter().map(|r| r.wall_time_s).sum::<f64>() / rows.len() as f64;

    let mut buf = Vec::new();
    writeln!(buf, "{CSV_HEADER_COMMENT}")?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    writeln!(
        buf,
        "# summary converged={converged}/{} feasible={feasible} mean_iterations={mean_iter:.2} max_iterations={max_iter} mean_wall_time_s={mean_wall:.6}",
        rows.len()
    )?;
    write_primary(&args.common.out, &buf)?;
    Ok(combine_exit(codes))
}

#[derive(Serialize)]
struct EosProfileRow {
    node_id: String,
    pressure_ideal_pa: f64,
    pressure_cnga_pa: f64,
    rel_pressure_dev: f64,
    density_ideal_kg_m3: f64,
    density_cnga_kg_m3: f64,
    rel_density_dev: f64,
}

pub fn run_compare_eos(args: &SolveArgs) -> Result<i32> {
    let net = load_network(args)?;
    let mut eos_ideal = *net.eos();
    eos_ideal.kind = EosKind::Ideal;
    let mut eos_cnga = *net.eos();
    eos_cnga.kind = EosKind::Cnga;
    let net_ideal = net.with_eos(eos_ideal).map_err(|e| anyhow!("{e}"))?;
    let net_cnga = net.with_eos(eos_cnga).map_err(|e| anyhow!("{e}"))?;

    // Shared nominal values: the sound speed is EoS-independent.
    let nv = nominals_for(args, &net_ideal)?;
    let s_ideal = nondimensionalize(&net_ideal, &nv).map_err(|e| anyhow!("{e}"))?;
    let s_cnga = nondimensionalize(&net_cnga, &nv).map_err(|e| anyhow!("{e}"))?;

    let cfg = SolverConfig {
        tolerance: args.tol,
        max_iterations: args.max_iter,
        seed: args.seed,
        ..SolverConfig::default()
    };
    let (out_ideal, t_ideal) = timed_solve(&s_ideal, &cfg);
    let (out_cnga, t_cnga) = timed_solve(&s_cnga, &cfg);
    let elapsed = t_ideal + t_cnga;

    let both_in_domain = out_ideal.classification == Classification::ConvergedInDomain
        && out_cnga.classification == Classification::ConvergedInDomain;

    let mut report = report_of(instance_label(args), &out_cnga, elapsed);
    let mut buf = Vec::new();
    writeln!(buf, "{CSV_HEADER_COMMENT}")?;
    if both_in_domain {
        let phys_i = redimensionalize(out_ideal.solution.as_ref().unwrap(), &nv);
        let phys_c = redimensionalize(out_cnga.solution.as_ref().unwrap(), &nv);
        let a_sq = net.eos().sound_speed_squared();
        let (b1, b2) = cnga_b_coefficients(net.eos()).map_err(|e| anyhow!("{e}"))?;

        let mut max_p_dev = 0.0f64;
        let mut max_rho_dev = 0.0f64;
        let mut rows = Vec::new();
        for (i, id) in s_ideal.node_ids.iter().enumerate() {
            let (p_i, p_c) = (phys_i.p[i], phys_c.p[i]);
            let rho_i = p_i / a_sq;
            let rho_c = (b1 * p_c + b2 * p_c * p_c) / a_sq;
            let p_dev = (p_i - p_c).abs() / p_c;
            let rho_dev = (rho_i - rho_c).abs() / rho_c;
            max_p_dev = max_p_dev.max(p_dev);
            max_rho_dev = max_rho_dev.max(rho_dev);
            rows.push(EosProfileRow {
                node_id: id.clone(),
                pressure_ideal_pa: p_i,
                pressure_cnga_pa: p_c,
                rel_pressure_dev: p_dev,
                density_ideal_kg_m3: rho_i,
                density_cnga_kg_m3: rho_c,
                rel_density_dev: rho_dev,
            });
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for row in &rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        writeln!(
            buf,
            "# summary max_rel_pressure_dev={max_p_dev:.6e} max_rel_density_dev={max_rho_dev:.6e}"
        )?;
        report.max_rel_pressure_dev = Some(max_p_dev);
        report.max_rel_density_dev = Some(max_rho_dev);
    } else {
        report.feasibility = "indeterminate".into();
        writeln!(
            buf,
            "# no profile: ideal={} cnga={}",
            classification_label(out_ideal.classification),
            classification_label(out_cnga.classification),
        )?;
    }
    write_primary(&args.out, &buf)?;
    emit_report(&report, args.format)?;
    Ok(combine_exit([exit_code(&out_ideal), exit_code(&out_cnga)]))
}

#[derive(Serialize)]
struct ScalingRow {
    instance_id: String,
    scaled_classification: String,
    scaled_iterations: usize,
    dimensional_classification: String,
    dimensional_iterations: usize,
    /// Largest relative difference between the two physical solutions when
    /// both runs converge in-domain.
    max_rel_solution_dev: Option<f64>,
}

pub fn run_compare_scaling(args: &BatchArgs) -> Result<i32> {
    check_ranges(args)?;
    let base = load_network(&args.common)?;
    let pool = worker_pool()?;

    let rows: Vec<Result<(ScalingRow, i32)>> = pool.install(|| {
        (0..args.count)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(args.common.seed, k as u64);
                let inst = perturb_instance(
                    &base,
                    seed,
                    (args.withdraw_lo, args.withdraw_hi),
                    (args.ratio_lo, args.ratio_hi),
                );
                let nv = nominals_for(&args.common, &inst)?;
                let scaled_net = nondimensionalize(&inst, &nv).map_err(|e| anyhow!("{e}"))?;
                let dim_net =
                    nondimensionalize(&inst, &NominalValues::unit()).map_err(|e| anyhow!("{e}"))?;
                let cfg = SolverConfig {
                    tolerance: args.common.tol,
                    max_iterations: args.common.max_iter,
                    seed,
                    ..SolverConfig::default()
                };
                let (out_s, _) = timed_solve(&scaled_net, &cfg);
                // The dimensional residuals live on physical magnitudes, so
                // the convergence bound scales with the boundary data.
                let dim_cfg = SolverConfig {
                    tolerance: args.common.tol
                        * inst
                            .junctions()
                            .iter()
                            .filter_map(|j| j.slack_pressure())
                            .fold(1.0f64, f64::max),
                    ..cfg.clone()
                };
                let (out_d, _) = timed_solve(&dim_net, &dim_cfg);

                let dev = match (&out_s.solution, &out_d.solution) {
                    (Some(a), Some(b))
                        if out_s.classification == Classification::ConvergedInDomain
                            && out_d.classification == Classification::ConvergedInDomain =>
                    {
                        let pa = redimensionalize(a, &nv);
                        let dev = pa
                            .p
                            .iter()
                            .zip(&b.p)
                            .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
                            .fold(0.0f64, f64::max);
                        Some(dev)
                    }
                    _ => None,
                };
                let row = ScalingRow {
                    instance_id: format!("{:04}", k),
                    scaled_classification: classification_label(out_s.classification).into(),
                    scaled_iterations: out_s.iterations,
                    dimensional_classification: classification_label(out_d.classification).into(),
                    dimensional_iterations: out_d.iterations,
                    max_rel_solution_dev: dev,
                };
                Ok((row, exit_code(&out_s)))
            })
            .collect()
    });

    let mut table = Vec::with_capacity(args.count);
    let mut codes = Vec::with_capacity(args.count);
    for r in rows {
        let (row, code) = r?;
        table.push(row);
        codes.push(code);
    }
    let scaled_ok = table
        .iter()
        .filter(|r| r.scaled_classification == "converged_in_domain")
        .count();
    let dim_ok = table
        .iter()
        .filter(|r| r.dimensional_classification == "converged_in_domain")
        .count();

    let mut buf = Vec::new();
    writeln!(buf, "{CSV_HEADER_COMMENT}")?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in &table {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    writeln!(
        buf,
        "# summary scaled_converged={scaled_ok}/{} dimensional_converged={dim_ok}/{}",
        table.len(),
        table.len()
    )?;
    write_primary(&args.common.out, &buf)?;
    Ok(combine_exit(codes))
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Solve(args) => run_solve(args),
        Command::Batch(args) => run_batch(args),
        Command::CompareEos(args) => run_compare_eos(args),
        Command::CompareScaling(args) => run_compare_scaling(args),
    }
}
