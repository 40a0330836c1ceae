//! Subcommand implementations, independent of argument parsing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dynbc_core::assembly::{assemble, DiscreteOperators};
use dynbc_core::energy::energy;
use dynbc_core::harness::{
    build_negative_energy_data, lowest_mode, model_grid, run_blowup_experiment, run_global_experiment,
    run_scenario, sweep, Scenario, SourceTarget, SweepSettings, Verdict, VerdictKind,
};
use dynbc_core::mesh::{generate_annulus, generate_interval, generate_rectangle, Mesh};
use dynbc_core::nonlin::{CoefficientField, Kind, PowerSumSpec, ProblemSpec, Region};
use dynbc_core::regime::{classify, RegimeReport};
use dynbc_core::stepper::{Integrator, IntegrateOptions, Trajectory};
use dynbc_core::{harness::cutoff, selftest};
use nalgebra::DVector;

use crate::config::{ConfigErrors, MeshConfig, Profile, RunConfig, Target};
use crate::output::{fmt_num, key_value_block, nodal_pair, sha256_hex, snapshot_csv, sweep_csv, trajectory_csv, verdict_pairs};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigErrors),
    /// Bad input that is not a config-file line (mesh file, data file, flags).
    Input(String),
    Numerical(String),
    Inconclusive(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Inconclusive(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration errors:\n{e}"),
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical breakdown: {m}"),
            CliError::Inconclusive(m) => write!(f, "inconclusive: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigErrors> for CliError {
    fn from(e: ConfigErrors) -> Self {
        CliError::Config(e)
    }
}

impl From<dynbc_core::Error> for CliError {
    fn from(e: dynbc_core::Error) -> Self {
        use dynbc_core::Error as E;
        match e {
            E::DegenerateSystem(_) | E::NonFiniteState(_) | E::ResolventFailure { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn build_mesh(cfg: &MeshConfig) -> Result<Mesh, CliError> {
    Ok(match cfg {
        MeshConfig::Interval { length, elements } => generate_interval(*length, *elements)?,
        MeshConfig::Annulus { r0, r1, nr, nt } => generate_annulus(*r0, *r1, *nr, *nt)?,
        MeshConfig::Rectangle { lx, ly, nx, ny, side } => generate_rectangle(*lx, *ly, *nx, *ny, *side)?,
        MeshConfig::File(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            Mesh::from_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
    })
}

/// Mesh, operators and nonlinearities described by a configuration.
pub struct Problem {
    pub mesh: Mesh,
    pub ops: DiscreteOperators,
    pub spec: ProblemSpec,
}

fn damping(terms: &[(f64, f64)]) -> Result<PowerSumSpec, CliError> {
    if terms.is_empty() {
        Ok(PowerSumSpec::zero(Kind::Damping))
    } else {
        Ok(PowerSumSpec::from_pairs(Kind::Damping, terms, 0.0)?)
    }
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem, CliError> {
    let mesh = build_mesh(&cfg.mesh)?;
    let ops = assemble(&mesh)?;
    let spec = ProblemSpec::new(
        &mesh,
        damping(&cfg.damping_bulk)?,
        CoefficientField::constant(&mesh, cfg.alpha, Region::Bulk)?,
        damping(&cfg.damping_boundary)?,
        CoefficientField::constant(&mesh, cfg.beta, Region::Boundary)?,
        PowerSumSpec::from_pairs(Kind::Source, &cfg.source_bulk, cfg.source_bulk_constant)?,
        PowerSumSpec::from_pairs(Kind::Source, &cfg.source_boundary, cfg.source_boundary_constant)?,
        cfg.dimension.unwrap_or(mesh.dim().max(2)),
    )?;
    Ok(Problem { mesh, ops, spec })
}

fn read_nodal_file(path: &Path, n_nodes: usize) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, msg: String| CliError::Input(format!("{} line {line}: {msg}", path.display()));
    let mut u = vec![f64::NAN; n_nodes];
    let mut v = vec![f64::NAN; n_nodes];
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(["node", "u", "v"]) => {}
        _ => return Err(bad(1, "expected header 'node,u,v'".into())),
    }
    for (idx, raw) in lines {
        let line = idx + 1;
        let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(line, format!("expected 3 columns, got {}", cols.len())));
        }
        let node: usize = cols[0].parse().map_err(|_| bad(line, format!("bad node index '{}'", cols[0])))?;
        if node >= n_nodes {
            return Err(bad(line, format!("node {node} out of range (mesh has {n_nodes} nodes)")));
        }
        let num = |s: &str| s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(line, format!("bad number '{s}'")));
        if !u[node].is_nan() {
            return Err(bad(line, format!("node {node} listed twice")));
        }
        u[node] = num(cols[1])?;
        v[node] = num(cols[2])?;
    }
    if let Some(missing) = u.iter().position(|x| x.is_nan()) {
        return Err(CliError::Input(format!("{}: node {missing} has no values", path.display())));
    }
    Ok((u, v))
}

/// `(u0, v0)` in free-dof coordinates.
pub fn initial_data(cfg: &RunConfig, pb: &Problem) -> Result<(DVector<f64>, DVector<f64>), CliError> {
    let (mesh, ops) = (&pb.mesh, &pb.ops);
    let ic = &cfg.initial;
    let n = ops.num_dofs();
    let scaled = |shape: DVector<f64>| (&shape * ic.amplitude, &shape * ic.velocity_amplitude);
    Ok(match &ic.profile {
        Profile::Zero => (DVector::zeros(n), DVector::zeros(n)),
        Profile::Eigenmode { k: Some(k) } if mesh.dim() == 1 => {
            let nodal: Vec<f64> = (0..mesh.num_nodes()).map(|i| (k * mesh.node(i)[0]).sin()).collect();
            scaled(ops.restrict_nodal(&nodal))
        }
        Profile::Eigenmode { k: Some(_) } => {
            return Err(CliError::Input("an explicit eigenmode wavenumber k is only meaningful on an interval mesh".into()))
        }
        Profile::Eigenmode { k: None } => {
            let (_, phi) = lowest_mode(ops)?;
            let peak = phi.amax();
            scaled(phi / peak)
        }
        Profile::Bump { center, radius } => {
            if center.len() != mesh.dim() {
                return Err(CliError::Input(format!("bump center has {} coordinates, mesh is {}D", center.len(), mesh.dim())));
            }
            let nodal: Vec<f64> = (0..mesh.num_nodes())
                .map(|i| {
                    let d = mesh.node(i).iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    cutoff(d / radius)
                })
                .collect();
            scaled(ops.restrict_nodal(&nodal))
        }
        Profile::File(path) => {
            let (u, v) = read_nodal_file(path, mesh.num_nodes())?;
            (ops.restrict_nodal(&u), ops.restrict_nodal(&v))
        }
        Profile::NegativeEnergy { s_max } => {
            let data = build_negative_energy_data(mesh, ops, &pb.spec, &DVector::zeros(n), *s_max)?;
            (data.u0, data.v0)
        }
    })
}

fn report_with_energy(cfg: &RunConfig, pb: &Problem) -> Result<RegimeReport, CliError> {
    let mut report = classify(&pb.spec, pb.mesh.dim())?;
    if cfg.initial_given {
        let (u0, v0) = initial_data(cfg, pb)?;
        report.initial_energy = Some(energy(&pb.ops, &pb.spec, &u0, &v0)?.e);
    }
    Ok(report)
}

/// Report text followed by a blank line and a `key=value` block.
pub fn classify_text(cfg: &RunConfig) -> Result<String, CliError> {
    let pb = build_problem(cfg)?;
    let report = report_with_energy(cfg, &pb)?;
    let mut kv = vec![("label".to_string(), report.label().to_string())];
    kv.extend(report.key_values());
    Ok(format!("{report}\n\n{}", key_value_block(&kv)))
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub mode: &'static str,
    pub out_dir: PathBuf,
}

/// Which experiment `run` performs for a classified problem.
fn run_mode(report: &RegimeReport, e0: f64) -> &'static str {
    match (&report.blowup, &report.global) {
        (Ok(_), _) if e0 < 0.0 => "blowup",
        (_, Ok(_)) => "global",
        _ => "plain",
    }
}

pub struct RunContext<'a> {
    pub config_path: Option<&'a Path>,
    pub config_bytes: &'a [u8],
    pub out_dir: PathBuf,
    pub threads: usize,
}

fn manifest(command: &str, ctx: &RunContext, started: Instant, outputs: &[&str]) -> String {
    let kv = vec![
        ("command".to_string(), command.to_string()),
        ("version".into(), env!("CARGO_PKG_VERSION").into()),
        ("config".into(), ctx.config_path.map_or("none".into(), |p| p.display().to_string())),
        ("config_sha256".into(), sha256_hex(ctx.config_bytes)),
        ("threads".into(), ctx.threads.to_string()),
        ("wall_time_seconds".into(), fmt_num(started.elapsed().as_secs_f64())),
        ("outputs".into(), outputs.join(";")),
    ];
    key_value_block(&kv)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn integrate_with_snapshots(sc: &Scenario, cfg: &RunConfig, mode: &str) -> Result<(Trajectory, Verdict), CliError> {
    let (tr, v) = match mode {
        "blowup" => run_blowup_experiment(sc)?,
        "global" => run_global_experiment(sc)?,
        _ => run_scenario(sc)?,
    };
    if cfg.output.snapshot_every.is_none() {
        return Ok((tr, v));
    }
    // The experiments do not keep states; repeat the integration with
    // snapshots switched on. Same inputs, same trajectory.
    let opts = IntegrateOptions {
        sample_every: sc.sample_every,
        snapshot_every: cfg.output.snapshot_every,
        ..IntegrateOptions::new(sc.t_end)
    };
    let snaps = Integrator::new(sc.ops, sc.spec, sc.stepper.clone())?.integrate(&sc.u0, &sc.v0, &opts)?;
    Ok((Trajectory { snapshots: snaps.snapshots, ..tr }, v))
}

/// Runs one scenario and writes trajectory, snapshots, verdict and manifest.
pub fn run(cfg: &RunConfig, ctx: &RunContext) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    let pb = build_problem(cfg)?;
    let (u0, v0) = initial_data(cfg, &pb)?;
    let report = classify(&pb.spec, pb.mesh.dim())?;
    let e0 = energy(&pb.ops, &pb.spec, &u0, &v0)?.e;
    let mode = run_mode(&report, e0);
    let sc = Scenario {
        ops: &pb.ops,
        spec: &pb.spec,
        u0,
        v0,
        stepper: cfg.stepper.clone(),
        t_end: cfg.t_end,
        sample_every: cfg.output.sample_every,
    };
    let (tr, verdict) = integrate_with_snapshots(&sc, cfg, mode)?;

    let dir = &ctx.out_dir;
    create_dir(dir)?;
    let mut outputs = vec!["trajectory.csv", "verdict.txt"];
    write_file(&dir.join("trajectory.csv"), &trajectory_csv(&tr.samples))?;
    if !tr.snapshots.is_empty() {
        let snap_dir = dir.join("snapshots");
        create_dir(&snap_dir)?;
        let mut index = String::from("index,t,file\n");
        for (i, (t, u, v)) in tr.snapshots.iter().enumerate() {
            let (un, vn) = nodal_pair(&pb.ops, u, v);
            let name = format!("snapshot_{i:05}.csv");
            write_file(&snap_dir.join(&name), &snapshot_csv(&pb.mesh, &un, &vn))?;
            index.push_str(&format!("{i},{},{name}\n", fmt_num(*t)));
        }
        write_file(&snap_dir.join("index.csv"), &index)?;
        outputs.push("snapshots/");
    }
    let mut kv = vec![("mode".to_string(), mode.to_string()), ("regime".into(), report.label().into())];
    kv.push(("initial_energy".into(), fmt_num(e0)));
    kv.extend(verdict_pairs(&verdict));
    kv.push(("midpoint_identity_residual".into(), fmt_num(tr.midpoint_identity_residual)));
    write_file(&dir.join("verdict.txt"), &key_value_block(&kv))?;
    outputs.push("manifest.txt");
    write_file(&dir.join("manifest.txt"), &manifest("run", ctx, started, &outputs))?;
    Ok(RunOutcome { verdict, mode, out_dir: dir.clone() })
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub csv: String,
    pub row_errors: Vec<String>,
}

/// Exponent grid from `[sweep]`, run on `ctx.threads` threads.
pub fn run_sweep(cfg: &RunConfig, ctx: &RunContext) -> Result<SweepOutcome, CliError> {
    let started = Instant::now();
    let sw = cfg.sweep.as_ref().ok_or_else(|| CliError::Input("the sweep command needs a [sweep] section".into()))?;
    let pb = build_problem(cfg)?;
    let target = match sw.target {
        Target::Bulk => SourceTarget::Bulk,
        Target::Boundary => SourceTarget::Boundary,
    };
    let mut points = model_grid(&pb.mesh, &sw.source_exponents, &sw.damping_exponents, target, sw.alpha, sw.beta)?;
    if let Some(d) = cfg.dimension {
        for p in &mut points {
            p.spec.dimension = d;
        }
    }
    let (u0, v0) = match cfg.initial.profile {
        // negative-energy data is built per row by the sweep itself
        Profile::NegativeEnergy { .. } => (DVector::zeros(pb.ops.num_dofs()), DVector::zeros(pb.ops.num_dofs())),
        _ => initial_data(cfg, &pb)?,
    };
    let settings = SweepSettings {
        stepper: cfg.stepper.clone(),
        t_end: cfg.t_end,
        sample_every: cfg.output.sample_every,
        u0,
        v0,
        s_max: sw.s_max,
    };
    let rows = sweep(&pb.mesh, &pb.ops, &points, &settings, ctx.threads)?;
    let (csv, row_errors) = sweep_csv(&rows);
    create_dir(&ctx.out_dir)?;
    write_file(&ctx.out_dir.join("sweep.csv"), &csv)?;
    write_file(&ctx.out_dir.join("manifest.txt"), &manifest("sweep", ctx, started, &["sweep.csv", "manifest.txt"]))?;
    Ok(SweepOutcome { csv, row_errors })
}

/// `(report, all_passed)`
pub fn selftest_text(seed: u64, trials: usize) -> Result<(String, bool), CliError> {
    let checks = selftest::run(seed, trials)?;
    let mut out = String::new();
    for c in &checks {
        out.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    Ok((out, checks.iter().all(|c| c.passed)))
}

/// One-line human summary of a verdict.
pub fn verdict_summary(v: &Verdict) -> String {
    match &v.kind {
        VerdictKind::Global { window_end } => format!("global: solution exists on [0, {}]", fmt_num(*window_end)),
        VerdictKind::BlowUp { t_estimate, norm_at_abort } => {
            format!("blowup: estimated blow-up time {} (|u|_H1 + |v|_H0 = {} at abort)", fmt_num(*t_estimate), fmt_num(*norm_at_abort))
        }
        VerdictKind::Inconclusive { reason } => format!("inconclusive: {reason}"),
    }
}
