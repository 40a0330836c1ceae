//! Canned experiments: blow-up and global-existence runs with verdicts,
//! continuous dependence on the data, discretization convergence against
//! the eigenmode oracles, and parallel parameter sweeps.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;
use rayon::prelude::*;

use crate::assembly::{assemble, h0_norm, h1_norm, DiscreteOperators};
use crate::energy::{energy, EnergySample};
use crate::error::{check_len, Error, Result};
use crate::linalg::{quad_form, spmv};
use crate::mesh::{generate_annulus, generate_interval, Mesh};
use crate::nonlin::{CoefficientField, Kind, NodalWeights, PowerSumSpec, ProblemSpec, Region};
use crate::regime::{check_blowup_hypotheses, check_global_hypotheses, classify, RegimeReport};
use crate::stepper::{IntegrateOptions, Integrator, StepperConfig, TerminationStatus, Trajectory};

/// `|u|_H1 + |v|_H0` must exceed this for a blow-up verdict.
pub const PHASE_NORM_THRESHOLD: f64 = 1e6;
/// `max(|u|_Lp, |u|_Lq(Gamma1))` must exceed this for a blow-up verdict.
pub const SOURCE_NORM_THRESHOLD: f64 = 1e4;

#[derive(Clone, Debug, PartialEq)]
pub enum VerdictKind {
    Global { window_end: f64 },
    BlowUp { t_estimate: f64, norm_at_abort: f64 },
    Inconclusive { reason: String },
}

impl VerdictKind {
    pub fn name(&self) -> &'static str {
        match self {
            VerdictKind::Global { .. } => "global",
            VerdictKind::BlowUp { .. } => "blowup",
            VerdictKind::Inconclusive { .. } => "inconclusive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub min_dt: f64,
    pub max_dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub final_sample: Option<EnergySample>,
    pub dt_summary: DtSummary,
    /// Fitted blow-up rate exponent, reported only.
    pub gamma: Option<f64>,
    pub source_norm_at_abort: Option<f64>,
    pub max_upsilon: Option<f64>,
    /// Slope and max deviation of the affine fit to `log Upsilon(t)`.
    pub upsilon_rate: Option<f64>,
    pub upsilon_fit_residual: Option<f64>,
}

/// Problem, data and integration settings for one run.
#[derive(Clone)]
pub struct Scenario<'a> {
    pub ops: &'a DiscreteOperators,
    pub spec: &'a ProblemSpec,
    pub u0: DVector<f64>,
    pub v0: DVector<f64>,
    pub stepper: StepperConfig,
    pub t_end: f64,
    pub sample_every: usize,
}

fn dt_summary(tr: &Trajectory) -> DtSummary {
    let steps = tr.history.iter().skip(1).map(|h| h.dt);
    DtSummary {
        accepted: tr.accepted_steps,
        rejected: tr.rejected_steps,
        min_dt: steps.clone().fold(f64::INFINITY, f64::min),
        max_dt: steps.fold(0.0, f64::max),
    }
}

fn verdict_from(tr: &Trajectory, blowup_expected: bool) -> Verdict {
    let mut verdict = Verdict {
        kind: VerdictKind::Inconclusive { reason: String::new() },
        final_sample: tr.samples.last().copied(),
        dt_summary: dt_summary(tr),
        gamma: None,
        source_norm_at_abort: None,
        max_upsilon: None,
        upsilon_rate: None,
        upsilon_fit_residual: None,
    };
    verdict.kind = match &tr.status {
        TerminationStatus::ReachedTEnd if blowup_expected => VerdictKind::Inconclusive {
            reason: "window too short or thresholds unmet".into(),
        },
        TerminationStatus::ReachedTEnd => VerdictKind::Global { window_end: tr.final_state.t },
        TerminationStatus::BlowUpSuspected { t_est, gamma, norm_h1_h0, source_norm } => {
            verdict.gamma = *gamma;
            verdict.source_norm_at_abort = Some(*source_norm);
            if *norm_h1_h0 > PHASE_NORM_THRESHOLD && *source_norm > SOURCE_NORM_THRESHOLD {
                VerdictKind::BlowUp { t_estimate: *t_est, norm_at_abort: *norm_h1_h0 }
            } else {
                VerdictKind::Inconclusive {
                    reason: format!(
                        "integration stalled at t = {} with |u|_H1 + |v|_H0 = {norm_h1_h0:e} and source norm {source_norm:e} below the blow-up thresholds",
                        tr.final_state.t
                    ),
                }
            }
        }
        TerminationStatus::ResolventBreakdown { reason, .. } => VerdictKind::Inconclusive { reason: reason.clone() },
    };
    verdict
}

fn options(sc: &Scenario) -> IntegrateOptions {
    IntegrateOptions { sample_every: sc.sample_every, ..IntegrateOptions::new(sc.t_end) }
}

/// Plain run: `Global` when the window is reached, `BlowUp` on joint divergence.
pub fn run_scenario(sc: &Scenario) -> Result<(Trajectory, Verdict)> {
    let tr = Integrator::new(sc.ops, sc.spec, sc.stepper.clone())?.integrate(&sc.u0, &sc.v0, &options(sc))?;
    let v = verdict_from(&tr, false);
    Ok((tr, v))
}

/// Like [`run_scenario`], but a certified negative-energy scenario that
/// survives the window is reported as inconclusive instead of global.
pub fn run_blowup_experiment(sc: &Scenario) -> Result<(Trajectory, Verdict)> {
    let certified = check_blowup_hypotheses(sc.spec).is_ok() && energy(sc.ops, sc.spec, &sc.u0, &sc.v0)?.e < 0.0;
    let tr = Integrator::new(sc.ops, sc.spec, sc.stepper.clone())?.integrate(&sc.u0, &sc.v0, &options(sc))?;
    let v = verdict_from(&tr, certified);
    Ok((tr, v))
}

/// Least-squares line through `(x, y)`: `(slope, intercept, max |residual|)`.
pub fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (0.0, y.first().copied().unwrap_or(0.0), 0.0);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let resid = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).abs()).fold(0.0, f64::max);
    (slope, intercept, resid)
}

/// Run under a global-existence certificate, tracking `Upsilon` and fitting
/// `log Upsilon` by an affine function of time.
pub fn run_global_experiment(sc: &Scenario) -> Result<(Trajectory, Verdict)> {
    let cert = check_global_hypotheses(sc.spec)
        .map_err(|r| Error::Precondition(format!("no global-existence certificate: {}", r.reason)))?;
    let opts = IntegrateOptions { certificate: Some(cert), ..options(sc) };
    let tr = Integrator::new(sc.ops, sc.spec, sc.stepper.clone())?.integrate(&sc.u0, &sc.v0, &opts)?;
    let mut v = verdict_from(&tr, false);
    let ups: Vec<(f64, f64)> = tr.samples.iter().map(|s| (s.t, s.upsilon)).collect();
    if ups.iter().any(|(_, u)| !u.is_finite()) {
        v.kind = VerdictKind::Inconclusive { reason: "Upsilon became non-finite".into() };
        return Ok((tr, v));
    }
    v.max_upsilon = Some(ups.iter().map(|p| p.1).fold(0.0, f64::max));
    let (t, logs): (Vec<f64>, Vec<f64>) = ups.iter().filter(|p| p.1 > 0.0).map(|&(t, u)| (t, u.ln())).unzip();
    let (slope, _, resid) = affine_fit(&t, &logs);
    v.upsilon_rate = Some(slope);
    v.upsilon_fit_residual = Some(resid);
    Ok((tr, v))
}

/// Smooth cutoff: 1 below 1/4, 0 above 3/4, C-infinity in between.
pub fn cutoff(s: f64) -> f64 {
    if s <= 0.25 {
        return 1.0;
    }
    if s >= 0.75 {
        return 0.0;
    }
    let x = (0.75 - s) / 0.5;
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

fn distances_to(mesh: &Mesh, targets: &[usize], node: usize) -> f64 {
    let p = mesh.node(node);
    targets
        .iter()
        .map(|&t| {
            let q = mesh.node(t);
            p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Nodal bump equal to 1 near the dynamic boundary and 0 near the pinched
/// one; without a dynamic boundary, a ball around the node farthest from
/// the pinched boundary.
pub fn bump_profile(mesh: &Mesh, ops: &DiscreteOperators) -> DVector<f64> {
    let gamma1: Vec<usize> = mesh.gamma1_mask().iter().enumerate().filter(|p| *p.1).map(|p| p.0).collect();
    let gamma0 = mesh.dirichlet_nodes();
    let nodal: Vec<f64> = if !gamma1.is_empty() {
        (0..mesh.num_nodes())
            .map(|i| {
                let d1 = distances_to(mesh, &gamma1, i);
                let d0 = distances_to(mesh, &gamma0, i);
                cutoff(d1 / (d0 + d1))
            })
            .collect()
    } else {
        let d0: Vec<f64> = (0..mesh.num_nodes()).map(|i| distances_to(mesh, &gamma0, i)).collect();
        let (center, radius) = d0.iter().copied().enumerate().fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
        (0..mesh.num_nodes()).map(|i| cutoff(distances_to(mesh, &[center], i) / radius)).collect()
    };
    ops.restrict_nodal(&nodal)
}

#[derive(Clone, Debug)]
pub struct NegativeEnergyData {
    pub u0: DVector<f64>,
    pub v0: DVector<f64>,
    pub scale: f64,
    pub energy: f64,
}

/// Scales the bump profile by `s = 1, 2, 4, ...` (both signs) until the
/// energy of `(s w, v0)` is negative.
pub fn build_negative_energy_data(
    mesh: &Mesh,
    ops: &DiscreteOperators,
    spec: &ProblemSpec,
    v0: &DVector<f64>,
    s_max: f64,
) -> Result<NegativeEnergyData> {
    check_len(ops.num_dofs(), v0.len())?;
    if spec.sources_vanish() {
        return Err(Error::NegativeEnergy("sources vanish identically, so the negative-energy set N is empty".into()));
    }
    let w = bump_profile(mesh, ops);
    let mut s = 1.0;
    let mut last = f64::NAN;
    while s <= s_max {
        for sign in [1.0, -1.0] {
            let u0 = &w * (sign * s);
            let e = energy(ops, spec, &u0, v0)?.e;
            if e < 0.0 {
                return Ok(NegativeEnergyData { u0, v0: v0.clone(), scale: sign * s, energy: e });
            }
            last = e;
        }
        s *= 2.0;
    }
    Err(Error::NegativeEnergy(format!("scale cap {s_max} exceeded, last energy {last}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DependenceReport {
    pub deltas: Vec<f64>,
    /// `sup_t |u_d - u|_H1 + |v_d - v|_H0` per perturbation size.
    pub errors: Vec<f64>,
    /// Weighted `L^m` / `L^mu` space-time norm of the velocity difference.
    pub z_errors: Vec<f64>,
    /// Log-log slope of `errors` against `deltas` over the positive entries.
    pub slope: f64,
    pub inconclusive: Option<String>,
}

/// Perturbs the data along `(du, dv)` by each `delta` and measures the
/// trajectory deviation on the fixed sampling grid of the scenario. When the
/// scenario does not set a truncation radius one is chosen well above the
/// data norms, so that the truncated source is globally Lipschitz.
pub fn run_continuous_dependence(
    sc: &Scenario,
    du: &DVector<f64>,
    dv: &DVector<f64>,
    deltas: &[f64],
) -> Result<DependenceReport> {
    let ops = sc.ops;
    check_len(ops.num_dofs(), du.len())?;
    check_len(ops.num_dofs(), dv.len())?;
    let mut cfg = sc.stepper.clone();
    if cfg.truncation_radius.is_none() {
        let dmax = deltas.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let base = crate::stepper::phase_norm(ops, &sc.u0, &sc.v0);
        let pert = crate::stepper::phase_norm(ops, du, dv);
        cfg.truncation_radius = Some(4.0 * (base + dmax * pert) + 1.0);
    }
    let opts = IntegrateOptions {
        snapshot_every: Some(sc.sample_every),
        ..IntegrateOptions::new(sc.t_end)
    };
    let mut integrator = Integrator::new(ops, sc.spec, cfg)?;
    let base = integrator.integrate(&sc.u0, &sc.v0, &opts)?;
    let mut report = DependenceReport {
        deltas: deltas.to_vec(),
        errors: Vec::new(),
        z_errors: Vec::new(),
        slope: f64::NAN,
        inconclusive: None,
    };
    if base.status != TerminationStatus::ReachedTEnd {
        report.inconclusive = Some(format!("baseline run aborted: {:?}", base.status));
        return Ok(report);
    }
    let weights = NodalWeights::new(ops, sc.spec);
    let (m, mu) = (sc.spec.m(), sc.spec.mu());
    for &delta in deltas {
        let u0 = &sc.u0 + du * delta;
        let v0 = &sc.v0 + dv * delta;
        let run = integrator.integrate(&u0, &v0, &opts)?;
        if run.status != TerminationStatus::ReachedTEnd {
            report.inconclusive = Some(format!("perturbed run (delta = {delta}) aborted: {:?}", run.status));
            return Ok(report);
        }
        if run.snapshots.len() != base.snapshots.len()
            || run.snapshots.iter().zip(&base.snapshots).any(|(a, b)| a.0 != b.0)
        {
            return Err(Error::Precondition("perturbed run used a different time grid; use a fixed step".into()));
        }
        let mut sup: f64 = 0.0;
        let (mut zb, mut zg) = (0.0, 0.0);
        for k in 0..base.snapshots.len() {
            let (t, ub, vb) = &base.snapshots[k];
            let (_, ur, vr) = &run.snapshots[k];
            let dvel = vr - vb;
            sup = sup.max(h1_norm(ops, &(ur - ub))? + h0_norm(ops, &dvel)?);
            if k > 0 {
                let tau = t - base.snapshots[k - 1].0;
                for i in 0..dvel.len() {
                    zb += tau * weights.damp_bulk[i] * dvel[i].abs().powf(m);
                    zg += tau * weights.damp_boundary[i] * dvel[i].abs().powf(mu);
                }
            }
        }
        report.errors.push(sup);
        report.z_errors.push(zb.powf(1.0 / m) + zg.powf(1.0 / mu));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = report
        .deltas
        .iter()
        .zip(&report.errors)
        .filter(|(d, e)| **d > 0.0 && **e > 0.0)
        .map(|(d, e)| (d.ln(), e.ln()))
        .unzip();
    if x.len() >= 2 {
        report.slope = affine_fit(&x, &y).0;
    }
    Ok(report)
}

/// Positive root of `k tan k = 1` in `(0, pi/2)`.
pub fn rod_wavenumber() -> f64 {
    let h = |k: f64| k * k.sin() - k.cos();
    let (mut a, mut b) = (0.0, std::f64::consts::FRAC_PI_2);
    for _ in 0..200 {
        let c = 0.5 * (a + b);
        if h(c) > 0.0 {
            b = c;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Lowest axisymmetric frequency of the annulus `r0 < r < r1` pinched at
/// `r0` with the dynamic condition at `r1`: shoots `R'' + R'/r + w^2 R = 0`,
/// `R(r0) = 0`, and brackets the first root of `R'(r1) - w^2 R(r1)`.
pub fn annulus_frequency(r0: f64, r1: f64) -> f64 {
    let mismatch = |w: f64| {
        let n = 4000;
        let h = (r1 - r0) / n as f64;
        let f = |r: f64, y: [f64; 2]| [y[1], -y[1] / r - w * w * y[0]];
        let mut y = [0.0, 1.0];
        let mut r = r0;
        for _ in 0..n {
            let k1 = f(r, y);
            let k2 = f(r + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = f(r + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = f(r + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
            for j in 0..2 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            r += h;
        }
        y[1] - w * w * y[0]
    };
    let mut lo = 1e-3;
    let mut m_lo = mismatch(lo);
    let mut hi = lo;
    loop {
        hi += 0.01;
        let m_hi = mismatch(hi);
        if m_hi.signum() != m_lo.signum() {
            break;
        }
        lo = hi;
        m_lo = m_hi;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let mm = mismatch(mid);
        if mm.signum() == m_lo.signum() {
            lo = mid;
            m_lo = mm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Lowest generalized eigenpair of `K x = lambda M x` by inverse iteration,
/// normalized to `x^T M x = 1` with a nonnegative sum.
pub fn lowest_mode(ops: &DiscreteOperators) -> Result<(f64, DVector<f64>)> {
    let n = ops.num_dofs();
    let k = CscMatrix::from(&ops.stiff);
    let chol = CscCholesky::factor(&k).map_err(|_| Error::DegenerateSystem("stiffness is not positive definite".into()))?;
    let mut x = DVector::from_element(n, 1.0);
    let mut lambda = f64::INFINITY;
    for _ in 0..1000 {
        let rhs = spmv(&ops.mass, &x);
        let sol = chol.solve(&nalgebra::DMatrix::from_column_slice(n, 1, rhs.as_slice()));
        let mut y = DVector::from_column_slice(sol.as_slice());
        let norm = quad_form(&ops.mass, &y).sqrt();
        y /= norm;
        let new_lambda = quad_form(&ops.stiff, &y);
        x = y;
        let done = (new_lambda - lambda).abs() <= 1e-15 * new_lambda;
        lambda = new_lambda;
        if done {
            break;
        }
    }
    if x.sum() < 0.0 {
        x = -x;
    }
    Ok((lambda, x))
}

/// Period of the modal coordinate `phi^T M u(t)` of a conservative run with
/// fixed step `dt`, from its zero crossings over about `periods` periods.
pub fn measure_period(ops: &DiscreteOperators, phi: &DVector<f64>, omega_guess: f64, dt: f64, periods: f64) -> Result<f64> {
    let spec = conservative_spec_for(ops);
    let mut it = Integrator::new(ops, &spec, StepperConfig::fixed(dt))?;
    let mphi = spmv(&ops.mass, phi);
    let steps = (periods * 2.0 * std::f64::consts::PI / omega_guess / dt).ceil() as usize;
    let mut u = phi.clone();
    let mut v = DVector::zeros(ops.num_dofs());
    let mut c_prev = mphi.dot(&u);
    let mut crossings = Vec::new();
    for k in 0..steps {
        let r = it.step(&u, &v, dt)?;
        u = r.u;
        v = r.v;
        let c = mphi.dot(&u);
        if (c_prev < 0.0) != (c < 0.0) {
            let t0 = k as f64 * dt;
            crossings.push(t0 + dt * c_prev / (c_prev - c));
        }
        c_prev = c;
    }
    if crossings.len() < 2 {
        return Err(Error::Precondition("fewer than two zero crossings; increase the window".into()));
    }
    let spacing = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    Ok(2.0 * spacing)
}

fn conservative_spec_for(ops: &DiscreteOperators) -> ProblemSpec {
    // coefficient fields are irrelevant without damping; unit fields of the right size
    let nodes = ops.node_to_dof.len();
    let field = |r| CoefficientField::new(vec![1.0; nodes], r).expect("unit field");
    ProblemSpec {
        damping_bulk: PowerSumSpec::zero(Kind::Damping),
        alpha: field(Region::Bulk),
        damping_boundary: PowerSumSpec::zero(Kind::Damping),
        beta: field(Region::Boundary),
        source_bulk: PowerSumSpec::zero(Kind::Source),
        source_boundary: PowerSumSpec::zero(Kind::Source),
        dimension: 2,
        alpha_inf: 1.0,
        beta_inf: 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometry {
    Rod,
    Annulus { r0: f64, r1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceLevel {
    pub resolution: usize,
    pub dt: f64,
    pub period: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub exact_period: f64,
    pub levels: Vec<ConvergenceLevel>,
    /// `error[i] / error[i + 1]`
    pub ratios: Vec<f64>,
    /// `log2` of the mean ratio.
    pub order: f64,
}

/// Period error of the lowest mode over a ladder of `(resolution, dt)`
/// levels. The rod uses `resolution` elements; the annulus uses
/// `resolution` radial and `8 * resolution` angular subdivisions.
pub fn run_convergence_study(geometry: Geometry, levels: &[(usize, f64)], periods: f64) -> Result<ConvergenceReport> {
    let (exact_omega, build): (f64, Box<dyn Fn(usize) -> Result<Mesh>>) = match geometry {
        Geometry::Rod => (rod_wavenumber(), Box::new(|n| generate_interval(1.0, n))),
        Geometry::Annulus { r0, r1 } => (annulus_frequency(r0, r1), Box::new(move |n| generate_annulus(r0, r1, n, 8 * n))),
    };
    let exact_period = 2.0 * std::f64::consts::PI / exact_omega;
    let mut out = Vec::new();
    for &(n, dt) in levels {
        let ops = assemble(&build(n)?)?;
        let (lambda, phi) = lowest_mode(&ops)?;
        let period = measure_period(&ops, &phi, lambda.sqrt(), dt, periods)?;
        out.push(ConvergenceLevel { resolution: n, dt, period, error: (period - exact_period).abs() });
    }
    let ratios: Vec<f64> = out.windows(2).map(|w| w[0].error / w[1].error).collect();
    let order = if ratios.is_empty() {
        f64::NAN
    } else {
        (ratios.iter().sum::<f64>() / ratios.len() as f64).log2()
    };
    Ok(ConvergenceReport { exact_period, levels: out, ratios, order })
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub params: Vec<(String, f64)>,
    pub spec: ProblemSpec,
}

#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub stepper: StepperConfig,
    pub t_end: f64,
    pub sample_every: usize,
    /// Data for rows without a blow-up certificate.
    pub u0: DVector<f64>,
    pub v0: DVector<f64>,
    /// Scale cap of the negative-energy search on blow-up-certified rows.
    pub s_max: f64,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub params: Vec<(String, f64)>,
    pub report: std::result::Result<RegimeReport, String>,
    pub verdict: std::result::Result<Verdict, String>,
}

impl SweepRow {
    /// Classifier label: `blowup`, `global` or `unclassified`.
    pub fn label(&self) -> &'static str {
        self.report.as_ref().map_or("unclassified", |r| r.label())
    }
}

fn sweep_row(mesh: &Mesh, ops: &DiscreteOperators, point: &SweepPoint, st: &SweepSettings) -> SweepRow {
    let report = classify(&point.spec, mesh.dim()).map_err(|e| e.to_string());
    let verdict = (|| -> Result<Verdict> {
        let mut sc = Scenario {
            ops,
            spec: &point.spec,
            u0: st.u0.clone(),
            v0: st.v0.clone(),
            stepper: st.stepper.clone(),
            t_end: st.t_end,
            sample_every: st.sample_every,
        };
        let label = report.as_ref().map_or("unclassified", |r| r.label());
        let verdict = match label {
            "blowup" => {
                let data = build_negative_energy_data(mesh, ops, &point.spec, &st.v0, st.s_max)?;
                sc.u0 = data.u0;
                sc.v0 = data.v0;
                run_blowup_experiment(&sc)?.1
            }
            "global" => run_global_experiment(&sc)?.1,
            _ => run_scenario(&sc)?.1,
        };
        Ok(verdict)
    })()
    .map_err(|e| e.to_string());
    let report = report.map(|mut r| {
        r.initial_energy = energy(ops, &point.spec, &st.u0, &st.v0).ok().map(|p| p.e);
        r
    });
    SweepRow { params: point.params.clone(), report, verdict }
}

/// Runs every grid point on a pool of `jobs` threads; rows come back in the
/// order of `points` and a failing row never aborts the others.
pub fn sweep(mesh: &Mesh, ops: &DiscreteOperators, points: &[SweepPoint], settings: &SweepSettings, jobs: usize) -> Result<Vec<SweepRow>> {
    check_len(ops.num_dofs(), settings.u0.len())?;
    check_len(ops.num_dofs(), settings.v0.len())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| points.par_iter().map(|p| sweep_row(mesh, ops, p, settings)).collect()))
}

/// Where the model source of a grid acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceTarget {
    Bulk,
    Boundary,
}

/// Product grid over source exponents and damping exponents: the source is
/// `|u|^(p-2) u` on the chosen target and both dampings are `|v|^(m-2) v`.
pub fn model_grid(
    mesh: &Mesh,
    source_exponents: &[f64],
    damping_exponents: &[f64],
    target: SourceTarget,
    alpha: f64,
    beta: f64,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for &p in source_exponents {
        for &m in damping_exponents {
            let src = PowerSumSpec::power(Kind::Source, p)?;
            let zero = PowerSumSpec::zero(Kind::Source);
            let (f, g) = match target {
                SourceTarget::Bulk => (src, zero),
                SourceTarget::Boundary => (zero, src),
            };
            let damp = PowerSumSpec::power(Kind::Damping, m)?;
            let spec = ProblemSpec::new(
                mesh,
                damp.clone(),
                CoefficientField::constant(mesh, alpha, Region::Bulk)?,
                damp,
                CoefficientField::constant(mesh, beta, Region::Boundary)?,
                f,
                g,
                mesh.dim().max(2),
            )?;
            points.push(SweepPoint {
                params: vec![("source_exponent".into(), p), ("damping_exponent".into(), m)],
                spec,
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_interval;

    fn rod_problem(n: usize, g: PowerSumSpec, damp: PowerSumSpec) -> (Mesh, DiscreteOperators, ProblemSpec) {
        let mesh = generate_interval(1.0, n).unwrap();
        let ops = assemble(&mesh).unwrap();
        let spec = ProblemSpec::conservative(&mesh)
            .with_damping(damp.clone(), damp)
            .with_sources(PowerSumSpec::zero(Kind::Source), g);
        (mesh, ops, spec)
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(0.1), 1.0);
        assert_eq!(cutoff(0.9), 0.0);
        assert!((cutoff(0.5) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 0..=100 {
            let c = cutoff(k as f64 / 100.0);
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn negative_energy_search() {
        let cubic = PowerSumSpec::power(Kind::Source, 4.0).unwrap();
        let (mesh, ops, spec) = rod_problem(40, cubic, PowerSumSpec::linear_damping());
        let z = DVector::zeros(ops.num_dofs());
        let a = build_negative_energy_data(&mesh, &ops, &spec, &z, 1e6).unwrap();
        assert!(a.energy < 0.0);
        let fast = DVector::from_element(ops.num_dofs(), 10.0 / (ops.lumped_bulk.sum() + 1.0).sqrt());
        let b = build_negative_energy_data(&mesh, &ops, &spec, &fast, 1e6).unwrap();
        assert!(a.scale.abs() <= b.scale.abs());
        let off = ProblemSpec::conservative(&mesh);
        let err = build_negative_energy_data(&mesh, &ops, &off, &z, 1e6).unwrap_err();
        assert!(err.to_string().contains("N is empty"));
        assert!(build_negative_energy_data(&mesh, &ops, &spec, &z, 0.5).is_err());
    }

    #[test]
    fn linear_damping_without_source_is_global() {
        let (mesh, ops, spec) = rod_problem(20, PowerSumSpec::zero(Kind::Source), PowerSumSpec::linear_damping());
        let u0 = bump_profile(&mesh, &ops) * 3.0;
        let sc = Scenario {
            ops: &ops,
            spec: &spec,
            u0,
            v0: DVector::zeros(ops.num_dofs()),
            stepper: StepperConfig::default(),
            t_end: 5.0,
            sample_every: 10,
        };
        let (_, v) = run_blowup_experiment(&sc).unwrap();
        assert_eq!(v.kind, VerdictKind::Global { window_end: 5.0 });
    }

    #[test]
    fn rod_blowup_verdict() {
        let cubic = PowerSumSpec::power(Kind::Source, 4.0).unwrap();
        let (mesh, ops, spec) = rod_problem(20, cubic, PowerSumSpec::linear_damping());
        let z = DVector::zeros(ops.num_dofs());
        let data = build_negative_energy_data(&mesh, &ops, &spec, &z, 1e6).unwrap();
        let sc = Scenario { ops: &ops, spec: &spec, u0: data.u0, v0: data.v0, stepper: StepperConfig::default(), t_end: 20.0, sample_every: 10 };
        let (_, v) = run_blowup_experiment(&sc).unwrap();
        match v.kind {
            VerdictKind::BlowUp { t_estimate, norm_at_abort } => {
                assert!(t_estimate < 20.0);
                assert!(norm_at_abort > PHASE_NORM_THRESHOLD);
                assert!(v.source_norm_at_abort.unwrap() > SOURCE_NORM_THRESHOLD);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn global_run_requires_certificate() {
        let cubic = PowerSumSpec::power(Kind::Source, 4.0).unwrap();
        let (_, ops, spec) = rod_problem(10, cubic, PowerSumSpec::linear_damping());
        let z = DVector::zeros(ops.num_dofs());
        let sc = Scenario { ops: &ops, spec: &spec, u0: z.clone(), v0: z, stepper: StepperConfig::default(), t_end: 1.0, sample_every: 1 };
        assert!(matches!(run_global_experiment(&sc), Err(Error::Precondition(_))));
    }

    #[test]
    fn linear_sources_global_with_affine_log_bound() {
        let two = PowerSumSpec::power(Kind::Source, 2.0).unwrap();
        let (mesh, ops, spec) = rod_problem(20, two, PowerSumSpec::linear_damping());
        let sc = Scenario {
            ops: &ops,
            spec: &spec,
            u0: bump_profile(&mesh, &ops),
            v0: DVector::zeros(ops.num_dofs()),
            stepper: StepperConfig::default(),
            t_end: 10.0,
            sample_every: 5,
        };
        let (_, v) = run_global_experiment(&sc).unwrap();
        assert_eq!(v.kind.name(), "global");
        assert!(v.max_upsilon.unwrap().is_finite());
        assert!(v.upsilon_fit_residual.unwrap().is_finite());
    }

    #[test]
    fn zero_perturbation_gives_zero_error() {
        let d = PowerSumSpec::power(Kind::Damping, 3.0).unwrap();
        let (mesh, ops, spec) = rod_problem(20, PowerSumSpec::zero(Kind::Source), d);
        let (_, phi) = lowest_mode(&ops).unwrap();
        let sc = Scenario {
            ops: &ops,
            spec: &spec,
            u0: phi.clone(),
            v0: DVector::zeros(ops.num_dofs()),
            stepper: StepperConfig::fixed(1e-2),
            t_end: 0.5,
            sample_every: 5,
        };
        let dir = bump_profile(&mesh, &ops);
        let rep = run_continuous_dependence(&sc, &dir, &DVector::zeros(ops.num_dofs()), &[0.0, 1e-2, 1e-3]).unwrap();
        assert_eq!(rep.errors[0], 0.0);
        assert!(rep.errors[1] > rep.errors[2]);
    }

    #[test]
    fn lowest_mode_matches_rod_wavenumber() {
        let ops = assemble(&generate_interval(1.0, 200).unwrap()).unwrap();
        let (lambda, phi) = lowest_mode(&ops).unwrap();
        let k = rod_wavenumber();
        assert!((lambda.sqrt() - k).abs() < 1e-4);
        assert!((quad_form(&ops.mass, &phi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_grid_product() {
        let mesh = generate_interval(1.0, 8).unwrap();
        let pts = model_grid(&mesh, &[2.5, 3.0, 4.0], &[2.0, 3.0, 5.0], SourceTarget::Boundary, 1.0, 1.0).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[4].params[0].1, 3.0);
        assert_eq!(pts[4].params[1].1, 3.0);
    }

    #[test]
    fn sweep_rows_are_ordered_and_consistent() {
        let mesh = generate_interval(1.0, 10).unwrap();
        let ops = assemble(&mesh).unwrap();
        let pts = model_grid(&mesh, &[2.5, 4.0], &[2.0, 5.0], SourceTarget::Boundary, 1.0, 1.0).unwrap();
        let settings = SweepSettings {
            stepper: StepperConfig::default(),
            t_end: 5.0,
            sample_every: 10,
            u0: bump_profile(&mesh, &ops) * 0.1,
            v0: DVector::zeros(ops.num_dofs()),
            s_max: 1e6,
        };
        let a = sweep(&mesh, &ops, &pts, &settings, 3).unwrap();
        let b = sweep(&mesh, &ops, &pts, &settings, 1).unwrap();
        assert_eq!(a.len(), 4);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.params, rb.params);
            assert_eq!(format!("{:?}", ra.verdict), format!("{:?}", rb.verdict));
            let v = ra.verdict.as_ref().unwrap();
            match ra.label() {
                "blowup" => assert_eq!(v.kind.name(), "blowup"),
                "global" => assert_eq!(v.kind.name(), "global"),
                _ => {}
            }
        }
    }
}
