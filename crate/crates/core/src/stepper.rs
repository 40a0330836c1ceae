//! Implicit time integration of `M u'' + K u + B_h(u') = F_h(u)`.
//!
//! Each step solves one nonlinear resolvent system for an intermediate
//! velocity `v*` by damped Newton iteration:
//!
//! ```text
//! s M v* + K v*/s + B_h(v*) - F_h(u + v*/s) = s M v - K u
//! ```
//!
//! with `s = 2/dt` for the implicit midpoint rule (`v*` is the midpoint
//! velocity) and `s = 1/dt` for backward Euler (`v*` is the new velocity).
//! The Newton matrix `s M + K/s + diag(B') - diag(F')/s` is SPD whenever the
//! source derivative is dominated, which is what step rejection enforces.

use nalgebra::DVector;

use crate::assembly::{h0_norm, h1_norm, DiscreteOperators};
use crate::energy::{source_norms, EnergyMonitor, EnergySample};
use crate::error::{check_len, Error, Result};
use crate::linalg::{spmv, ShiftedSystem};
use crate::nonlin::{damping_force, damping_jacobian, source_force, source_jacobian, NodalWeights, ProblemSpec};
use crate::regime::GlobalCertificate;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Midpoint,
    BackwardEuler,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Scheme::Midpoint),
            "backward_euler" => Ok(Scheme::BackwardEuler),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme '{other}' (expected midpoint or backward_euler)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepperConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// A step is rejected when `|U_new| > growth_cap * |U_old|`.
    pub growth_cap: f64,
    /// Source truncation radius; `None` disables truncation.
    pub truncation_radius: Option<f64>,
    pub scheme: Scheme,
    /// Consecutive accepted steps before `dt` is doubled again.
    pub grow_after: usize,
    /// Integration stops as suspected blow-up once `|U|` exceeds this.
    pub norm_limit: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt_init: 1e-3,
            dt_min: 1e-10,
            dt_max: 1e-2,
            newton_tol: 1e-10,
            newton_max_iters: 50,
            growth_cap: 10.0,
            truncation_radius: None,
            scheme: Scheme::Midpoint,
            grow_after: 4,
            norm_limit: 1e30,
        }
    }
}

impl StepperConfig {
    /// Fixed step size: `dt_min = dt_init = dt_max`.
    pub fn fixed(dt: f64) -> Self {
        StepperConfig { dt_init: dt, dt_min: dt, dt_max: dt, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max && self.dt_max.is_finite()) {
            return bad(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            ));
        }
        if !(self.newton_tol > 0.0) {
            return bad(format!("newton_tol must be > 0, got {}", self.newton_tol));
        }
        if self.newton_max_iters == 0 {
            return bad("newton_max_iters must be >= 1".into());
        }
        if !(self.growth_cap > 1.0) {
            return bad(format!("growth_cap must be > 1, got {}", self.growth_cap));
        }
        if let Some(r) = self.truncation_radius {
            if !(r > 0.0) {
                return bad(format!("truncation_radius must be > 0, got {r}"));
            }
        }
        if self.grow_after == 0 {
            return bad("grow_after must be >= 1".into());
        }
        if !(self.norm_limit > 0.0) {
            return bad(format!("norm_limit must be > 0, got {}", self.norm_limit));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub dt: f64,
    pub newton_iters: usize,
}

/// Converged resolvent solve.
#[derive(Clone, Debug)]
pub struct ResolventSolution {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// One accepted step attempt.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// Velocity at which the damping was evaluated.
    pub v_mid: DVector<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryEntry {
    pub t: f64,
    pub dt: f64,
    /// `|u|_H1 + |v|_H0`
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TerminationStatus {
    ReachedTEnd,
    BlowUpSuspected {
        t_est: f64,
        /// Fitted exponent of `C (T - t)^(-gamma)`, when the fit is usable.
        gamma: Option<f64>,
        norm_h1_h0: f64,
        source_norm: f64,
    },
    ResolventBreakdown {
        t: f64,
        reason: String,
    },
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<EnergySample>,
    pub history: Vec<HistoryEntry>,
    /// `(t, u, v)` every `snapshot_every` accepted steps, when requested.
    pub snapshots: Vec<(f64, DVector<f64>, DVector<f64>)>,
    pub final_state: State,
    pub status: TerminationStatus,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Energy-identity residual with the integrator's own midpoint dissipation.
    pub midpoint_identity_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub sample_every: usize,
    pub snapshot_every: Option<usize>,
    pub certificate: Option<GlobalCertificate>,
}

impl IntegrateOptions {
    pub fn new(t_end: f64) -> Self {
        IntegrateOptions { t_end, sample_every: 1, snapshot_every: None, certificate: None }
    }
}

/// `sqrt(|u|_H1^2 + |v|_H0^2)`
pub fn phase_norm(ops: &DiscreteOperators, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let a = h1_norm(ops, u).unwrap_or(f64::NAN);
    let b = h0_norm(ops, v).unwrap_or(f64::NAN);
    (a * a + b * b).sqrt()
}

/// Integrator bound to one discretized problem. The Newton factorization is
/// kept across steps and only recomputed when the Jacobian diagonal changes.
pub struct Integrator<'a> {
    ops: &'a DiscreteOperators,
    spec: &'a ProblemSpec,
    cfg: StepperConfig,
    weights: NodalWeights,
    system: ShiftedSystem,
}

struct NewtonProblem<'b> {
    sigma: f64,
    rhs: &'b DVector<f64>,
    /// Source evaluated at `scale * (base + v/sigma)`; `None` drops it.
    source: Option<(&'b DVector<f64>, f64)>,
}

impl<'a> Integrator<'a> {
    pub fn new(ops: &'a DiscreteOperators, spec: &'a ProblemSpec, cfg: StepperConfig) -> Result<Self> {
        cfg.validate()?;
        let mut system = ShiftedSystem::new(&ops.mass, &ops.stiff);
        system.set_cg_tolerance(cfg.newton_tol / 10.0);
        Ok(Integrator { ops, spec, weights: NodalWeights::new(ops, spec), cfg, system })
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &NodalWeights {
        &self.weights
    }

    fn residual(&self, p: &NewtonProblem, v: &DVector<f64>) -> DVector<f64> {
        let mut r = spmv(&self.ops.mass, v) * p.sigma + spmv(&self.ops.stiff, v) / p.sigma
            + damping_force(self.spec, &self.weights, v)
            - p.rhs;
        if let Some((base, scale)) = p.source {
            let u = (base + v / p.sigma) * scale;
            r -= source_force(self.spec, &self.weights, &u);
        }
        r
    }

    fn jacobian_diag(&self, p: &NewtonProblem, v: &DVector<f64>) -> Vec<f64> {
        let mut d = damping_jacobian(self.spec, &self.weights, v);
        if let Some((base, scale)) = p.source {
            let u = (base + v / p.sigma) * scale;
            for (di, fi) in d.iter_mut().zip(source_jacobian(self.spec, &self.weights, &u)) {
                *di -= scale * fi / p.sigma;
            }
        }
        d
    }

    fn newton(&mut self, p: &NewtonProblem, guess: DVector<f64>) -> Result<(DVector<f64>, usize, f64)> {
        let tol = self.cfg.newton_tol * (1.0 + p.rhs.norm());
        let mut v = guess;
        let mut r = self.residual(p, &v);
        let mut rn = r.norm();
        let mut iters = 0;
        while !(rn <= tol) {
            if iters >= self.cfg.newton_max_iters || !rn.is_finite() {
                return Err(Error::ResolventFailure { iterations: iters, residual: rn });
            }
            iters += 1;
            let diag = self.jacobian_diag(p, &v);
            let delta = self.system.solve(p.sigma, &diag, &r)?;
            let mut lambda = 1.0;
            loop {
                let trial = &v - &delta * lambda;
                let tr = self.residual(p, &trial);
                let tn = tr.norm();
                if tn.is_finite() && (tn <= (1.0 - 1e-4 * lambda) * rn || tn <= tol) {
                    v = trial;
                    r = tr;
                    rn = tn;
                    break;
                }
                lambda *= 0.5;
                if lambda < 1e-8 {
                    return Err(Error::ResolventFailure { iterations: iters, residual: rn });
                }
            }
        }
        Ok((v, iters, rn))
    }

    /// Solves `s u - v = rhs1`, `s M v + K u + B_h(v) = rhs0` for `(u, v)`.
    pub fn solve_resolvent(
        &mut self,
        rhs0: &DVector<f64>,
        rhs1: &DVector<f64>,
        sigma: f64,
        guess: Option<&DVector<f64>>,
    ) -> Result<ResolventSolution> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
        }
        let n = self.ops.num_dofs();
        check_len(n, rhs0.len())?;
        check_len(n, rhs1.len())?;
        let rhs = rhs0 - spmv(&self.ops.stiff, rhs1) / sigma;
        let guess = match guess {
            Some(g) => {
                check_len(n, g.len())?;
                g.clone()
            }
            None => DVector::zeros(n),
        };
        let p = NewtonProblem { sigma, rhs: &rhs, source: None };
        let (v, iterations, residual) = self.newton(&p, guess)?;
        let u = (&v + rhs1) / sigma;
        Ok(ResolventSolution { u, v, iterations, residual })
    }

    /// One step of size `dt` (negative values are rejected) without step control.
    pub fn step(&mut self, u: &DVector<f64>, v: &DVector<f64>, dt: f64) -> Result<StepResult> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        let sigma = match self.cfg.scheme {
            Scheme::Midpoint => 2.0 / dt,
            Scheme::BackwardEuler => 1.0 / dt,
        };
        let scale = match self.cfg.truncation_radius {
            Some(r) => {
                let norm = phase_norm(self.ops, u, v);
                if norm > r {
                    r / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let rhs = spmv(&self.ops.mass, v) * sigma - spmv(&self.ops.stiff, u);
        let source = if self.spec.sources_vanish() { None } else { Some((u, scale)) };
        let p = NewtonProblem { sigma, rhs: &rhs, source };
        let (vs, iterations, _) = self.newton(&p, v.clone())?;
        let (u_new, v_new) = match self.cfg.scheme {
            Scheme::Midpoint => (u + &vs * dt, &vs * 2.0 - v),
            Scheme::BackwardEuler => (u + &vs * dt, vs.clone()),
        };
        if u_new.iter().chain(v_new.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState("step produced non-finite values".into()));
        }
        Ok(StepResult { u: u_new, v: v_new, v_mid: vs, iterations })
    }

    /// Adaptive integration from `(u0, v0)` at `t = 0` to `opts.t_end`.
    pub fn integrate(&mut self, u0: &DVector<f64>, v0: &DVector<f64>, opts: &IntegrateOptions) -> Result<Trajectory> {
        let n = self.ops.num_dofs();
        check_len(n, u0.len())?;
        check_len(n, v0.len())?;
        if !(opts.t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("t_end must be > 0, got {}", opts.t_end)));
        }
        if opts.sample_every == 0 || opts.snapshot_every == Some(0) {
            return Err(Error::InvalidParameter("sampling intervals must be >= 1".into()));
        }
        let ops = self.ops;
        let spec = self.spec;
        let mut monitor = EnergyMonitor::new(ops, spec, opts.certificate, u0, v0)?;
        let mut state = State { t: 0.0, u: u0.clone(), v: v0.clone(), dt: self.cfg.dt_init, newton_iters: 0 };
        let initial_norm = phase_norm(ops, u0, v0);
        let mut samples = vec![monitor.sample(0.0, u0, v0, state.dt)?];
        let mut history = vec![HistoryEntry { t: 0.0, dt: state.dt, norm: split_norm(ops, u0, v0) }];
        let mut snapshots = Vec::new();
        if opts.snapshot_every.is_some() {
            snapshots.push((0.0, u0.clone(), v0.clone()));
        }
        let mut dt = self.cfg.dt_init;
        let mut accepted = 0usize;
        let mut rejected = 0usize;
        let mut streak = 0usize;
        let mut norm = initial_norm;
        let mut mid_residual: f64 = 0.0;
        let t_end = opts.t_end;
        let status = loop {
            let remaining = t_end - state.t;
            if remaining <= 1e-12 * t_end {
                break TerminationStatus::ReachedTEnd;
            }
            let h = if dt >= remaining * (1.0 - 1e-9) { remaining } else { dt };
            let outcome = self.step(&state.u, &state.v, h);
            let accepted_step = match outcome {
                Ok(res) => {
                    let new_norm = phase_norm(ops, &res.u, &res.v);
                    if !new_norm.is_finite() || (norm > 0.0 && new_norm > self.cfg.growth_cap * norm) {
                        None
                    } else {
                        Some((res, new_norm))
                    }
                }
                Err(Error::ResolventFailure { .. }) | Err(Error::DegenerateSystem(_)) | Err(Error::NonFiniteState(_)) => None,
                Err(e) => return Err(e),
            };
            let Some((res, new_norm)) = accepted_step else {
                rejected += 1;
                streak = 0;
                dt *= 0.5;
                if dt < self.cfg.dt_min {
                    break self.abort_status(&state, &history, initial_norm);
                }
                continue;
            };
            monitor.record_step(&res.v, &res.v_mid, h);
            state.t = if h == remaining { t_end } else { state.t + h };
            state.u = res.u;
            state.v = res.v;
            state.dt = h;
            state.newton_iters = res.iterations;
            norm = new_norm;
            accepted += 1;
            history.push(HistoryEntry { t: state.t, dt: h, norm: split_norm(ops, &state.u, &state.v) });
            if spec.sources_vanish() || self.cfg.truncation_radius.is_none() {
                mid_residual = mid_residual.max(monitor.midpoint_residual(&state.u, &state.v)?);
            }
            let at_end = state.t >= t_end;
            if accepted % opts.sample_every == 0 || at_end {
                samples.push(monitor.sample(state.t, &state.u, &state.v, h)?);
            }
            if let Some(k) = opts.snapshot_every {
                if accepted % k == 0 || at_end {
                    snapshots.push((state.t, state.u.clone(), state.v.clone()));
                }
            }
            if norm > self.cfg.norm_limit {
                break self.abort_status(&state, &history, initial_norm);
            }
            streak += 1;
            if streak >= self.cfg.grow_after {
                streak = 0;
                dt = (dt * 2.0).min(self.cfg.dt_max);
            }
        };
        if samples.last().map(|s| s.t) != Some(state.t) {
            samples.push(monitor.sample(state.t, &state.u, &state.v, state.dt)?);
        }
        Ok(Trajectory {
            samples,
            history,
            snapshots,
            final_state: state,
            status,
            accepted_steps: accepted,
            rejected_steps: rejected,
            midpoint_identity_residual: mid_residual,
        })
    }

    fn abort_status(&self, state: &State, history: &[HistoryEntry], initial_norm: f64) -> TerminationStatus {
        let norm = phase_norm(self.ops, &state.u, &state.v);
        if norm > self.cfg.growth_cap * initial_norm.max(1.0) {
            let (t_est, gamma) = estimate_blowup_time(history);
            let (lp, lq) = source_norms(self.ops, self.spec, &state.u).unwrap_or((f64::NAN, f64::NAN));
            TerminationStatus::BlowUpSuspected {
                t_est,
                gamma,
                norm_h1_h0: split_norm(self.ops, &state.u, &state.v),
                source_norm: lp.max(lq),
            }
        } else {
            TerminationStatus::ResolventBreakdown {
                t: state.t,
                reason: format!("dt fell below dt_min = {} without norm growth", self.cfg.dt_min),
            }
        }
    }
}

fn split_norm(ops: &DiscreteOperators, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    h1_norm(ops, u).unwrap_or(f64::NAN) + h0_norm(ops, v).unwrap_or(f64::NAN)
}

/// Last time the history norm reached `level`, by log-linear interpolation.
fn crossing_time(history: &[HistoryEntry], level: f64) -> Option<f64> {
    for w in history.windows(2).rev() {
        let (a, b) = (w[0], w[1]);
        if a.norm < level && b.norm >= level {
            let (la, lb, ll) = (a.norm.ln(), b.norm.ln(), level.ln());
            return Some(a.t + (b.t - a.t) * (ll - la) / (lb - la));
        }
    }
    None
}

/// Extrapolated blow-up time from the last decade of norm growth. Fitting
/// `N(t) = C (T - t)^(-gamma)` through the crossing times of `N/10`,
/// `N/sqrt(10)` and `N` gives a geometric sequence of distances to `T`, so
/// Aitken's formula recovers `T`. Falls back to the last accepted time.
pub fn estimate_blowup_time(history: &[HistoryEntry]) -> (f64, Option<f64>) {
    let Some(last) = history.last() else {
        return (0.0, None);
    };
    let t3 = last.t;
    let top = last.norm;
    let fit = || {
        if !(top.is_finite() && top > 0.0) {
            return None;
        }
        let t1 = crossing_time(history, top / 10.0)?;
        let t2 = crossing_time(history, top / 10f64.sqrt())?;
        let denom = t1 + t3 - 2.0 * t2;
        if !(denom < 0.0) && !(denom > 0.0) {
            return None;
        }
        let t_max = (t1 * t3 - t2 * t2) / denom;
        if !(t_max.is_finite() && t_max >= t3 && t2 > t1) {
            return None;
        }
        let ratio = (t_max - t1) / (t_max - t2);
        let gamma = if ratio > 1.0 { Some(0.5 * std::f64::consts::LN_10 / ratio.ln()) } else { None };
        Some((t_max, gamma))
    };
    match fit() {
        Some((t, g)) => (t, g),
        None => (t3, None),
    }
}

/// Convenience wrapper around [`Integrator::solve_resolvent`].
pub fn solve_resolvent(
    ops: &DiscreteOperators,
    spec: &ProblemSpec,
    rhs0: &DVector<f64>,
    rhs1: &DVector<f64>,
    sigma: f64,
    cfg: &StepperConfig,
) -> Result<ResolventSolution> {
    Integrator::new(ops, spec, cfg.clone())?.solve_resolvent(rhs0, rhs1, sigma, None)
}

/// Convenience wrapper around [`Integrator::integrate`].
pub fn integrate(
    ops: &DiscreteOperators,
    spec: &ProblemSpec,
    cfg: &StepperConfig,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    Integrator::new(ops, spec, cfg.clone())?.integrate(u0, v0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::energy::energy;
    use crate::mesh::{generate_annulus, generate_interval};
    use crate::nonlin::{Kind, PowerSumSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const K_ROD: f64 = 0.860_333_589_019_380;

    fn rod(n: usize) -> (crate::mesh::Mesh, DiscreteOperators) {
        let mesh = generate_interval(1.0, n).unwrap();
        let ops = assemble(&mesh).unwrap();
        (mesh, ops)
    }

    fn eigen_data(mesh: &crate::mesh::Mesh, ops: &DiscreteOperators) -> DVector<f64> {
        let nodal: Vec<f64> = (0..mesh.num_nodes()).map(|i| (K_ROD * mesh.node(i)[0]).sin()).collect();
        ops.restrict_nodal(&nodal)
    }

    #[test]
    fn config_validation() {
        assert!(StepperConfig::default().validate().is_ok());
        let mut c = StepperConfig::default();
        c.dt_min = 1.0;
        assert!(c.validate().is_err());
        let c = StepperConfig { truncation_radius: Some(0.0), ..Default::default() };
        assert!(c.validate().is_err());
        let c = StepperConfig { newton_tol: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        assert_eq!("backward_euler".parse::<Scheme>().unwrap(), Scheme::BackwardEuler);
        assert!("rk4".parse::<Scheme>().is_err());
    }

    #[test]
    fn resolvent_zero_rhs_and_linear_one_iteration() {
        let (mesh, ops) = rod(20);
        let lin = PowerSumSpec::linear_damping();
        let spec = ProblemSpec::conservative(&mesh).with_damping(lin.clone(), lin);
        let n = ops.num_dofs();
        let z = DVector::zeros(n);
        let sol = solve_resolvent(&ops, &spec, &z, &z, 3.0, &StepperConfig::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.u.amax(), 0.0);
        let rhs0 = DVector::from_fn(n, |i, _| (i as f64).sin());
        let rhs1 = DVector::from_fn(n, |i, _| (i as f64).cos());
        let sol = solve_resolvent(&ops, &spec, &rhs0, &rhs1, 3.0, &StepperConfig::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        // original two-equation form
        let r1 = &sol.u * 3.0 - &sol.v - &rhs1;
        let r0 = spmv(&ops.mass, &sol.v) * 3.0 + spmv(&ops.stiff, &sol.u) + &sol.v.component_mul(&(&ops.lumped_bulk + &ops.lumped_boundary)) - &rhs0;
        assert!(r1.amax() < 1e-12 && r0.amax() < 1e-9);
    }

    #[test]
    fn resolvent_unique_and_monotone() {
        let mesh = generate_annulus(0.4, 1.0, 4, 20).unwrap();
        let ops = assemble(&mesh).unwrap();
        let d = PowerSumSpec::from_pairs(Kind::Damping, &[(1.0, 1.5), (1.0, 4.0)], 0.0).unwrap();
        let spec = ProblemSpec::conservative(&mesh).with_damping(d.clone(), d);
        let mut it = Integrator::new(&ops, &spec, StepperConfig::default()).unwrap();
        let n = ops.num_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rhs1 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut sols = Vec::new();
        for _ in 0..10 {
            let rhs0 = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let a = it.solve_resolvent(&rhs0, &rhs1, 4.0, None).unwrap();
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let b = it.solve_resolvent(&rhs0, &rhs1, 4.0, Some(&g)).unwrap();
            assert!((&a.v - &b.v).amax() < 1e-8);
            sols.push((rhs0, a.v));
        }
        for i in 0..sols.len() {
            for j in 0..i {
                let dv = &sols[i].1 - &sols[j].1;
                let dr = &sols[i].0 - &sols[j].0;
                assert!(dv.dot(&dr) >= -1e-12);
            }
        }
    }

    #[test]
    fn conservative_rod_conserves_energy() {
        let (mesh, ops) = rod(50);
        let spec = ProblemSpec::conservative(&mesh);
        let u0 = eigen_data(&mesh, &ops);
        let v0 = DVector::zeros(ops.num_dofs());
        let mut opts = IntegrateOptions::new(2.0);
        opts.sample_every = 50;
        let tr = integrate(&ops, &spec, &StepperConfig::fixed(1e-3), &u0, &v0, &opts).unwrap();
        assert_eq!(tr.status, TerminationStatus::ReachedTEnd);
        let e0 = tr.samples[0].e;
        for s in &tr.samples {
            assert!((s.e - e0).abs() <= 1e-12 * e0);
        }
        assert_eq!(tr.accepted_steps, 2000);
    }

    #[test]
    fn zero_data_stays_zero() {
        let (mesh, ops) = rod(10);
        let spec = ProblemSpec::conservative(&mesh)
            .with_sources(PowerSumSpec::power(Kind::Source, 4.0).unwrap(), PowerSumSpec::power(Kind::Source, 3.0).unwrap());
        let z = DVector::zeros(ops.num_dofs());
        let tr = integrate(&ops, &spec, &StepperConfig::default(), &z, &z, &IntegrateOptions::new(1.0)).unwrap();
        assert_eq!(tr.status, TerminationStatus::ReachedTEnd);
        assert_eq!(tr.final_state.u.amax(), 0.0);
        assert_eq!(tr.final_state.v.amax(), 0.0);
    }

    #[test]
    fn linear_damping_velocity_decays_and_energy_decreases() {
        let (mesh, ops) = rod(40);
        let lin = PowerSumSpec::linear_damping();
        let spec = ProblemSpec::conservative(&mesh).with_damping(lin.clone(), lin);
        let u0 = DVector::zeros(ops.num_dofs());
        let v0 = eigen_data(&mesh, &ops);
        let tr = integrate(&ops, &spec, &StepperConfig::fixed(1e-2), &u0, &v0, &IntegrateOptions::new(5.0)).unwrap();
        for w in tr.samples.windows(2) {
            assert!(w[1].e <= w[0].e + 1e-12);
        }
        assert!(tr.samples.last().unwrap().e < 0.2 * tr.samples[0].e);
        assert!(tr.midpoint_identity_residual < 1e-12);
    }

    #[test]
    fn reversing_velocity_retraces_conservative_path() {
        let (mesh, ops) = rod(30);
        let spec = ProblemSpec::conservative(&mesh);
        let mut it = Integrator::new(&ops, &spec, StepperConfig::default()).unwrap();
        let u0 = eigen_data(&mesh, &ops);
        let v0 = DVector::from_fn(ops.num_dofs(), |i, _| 0.1 * (i as f64).sin());
        let a = it.step(&u0, &v0, 0.01).unwrap();
        let b = it.step(&a.u, &(-&a.v), 0.01).unwrap();
        assert!((&b.u - &u0).amax() < 1e-12);
        assert!((&b.v + &v0).amax() < 1e-10);
    }

    #[test]
    fn backward_euler_dissipates_conservative_energy() {
        let (mesh, ops) = rod(30);
        let spec = ProblemSpec::conservative(&mesh);
        let cfg = StepperConfig { scheme: Scheme::BackwardEuler, ..StepperConfig::fixed(1e-2) };
        let u0 = eigen_data(&mesh, &ops);
        let v0 = DVector::zeros(ops.num_dofs());
        let tr = integrate(&ops, &spec, &cfg, &u0, &v0, &IntegrateOptions::new(1.0)).unwrap();
        let e = |s: &EnergySample| s.e;
        assert!(e(tr.samples.last().unwrap()) < e(&tr.samples[0]));
        assert!(e(tr.samples.last().unwrap()) > 0.9 * e(&tr.samples[0]));
    }

    #[test]
    fn linear_sources_always_reach_t_end() {
        let (mesh, ops) = rod(20);
        let two = PowerSumSpec::power(Kind::Source, 2.0).unwrap();
        let spec = ProblemSpec::conservative(&mesh).with_sources(two.clone(), two);
        let u0 = eigen_data(&mesh, &ops);
        let v0 = DVector::zeros(ops.num_dofs());
        let tr = integrate(&ops, &spec, &StepperConfig::default(), &u0, &v0, &IntegrateOptions::new(3.0)).unwrap();
        assert_eq!(tr.status, TerminationStatus::ReachedTEnd);
        assert!((tr.final_state.t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_freezes_large_sources() {
        let (mesh, ops) = rod(20);
        let g = PowerSumSpec::power(Kind::Source, 4.0).unwrap();
        let spec = ProblemSpec::conservative(&mesh).with_sources(PowerSumSpec::zero(Kind::Source), g);
        let u0 = eigen_data(&mesh, &ops) * 0.5;
        let v0 = DVector::zeros(ops.num_dofs());
        let cfg = StepperConfig { truncation_radius: Some(1e-3), ..StepperConfig::fixed(1e-2) };
        let tr = integrate(&ops, &spec, &cfg, &u0, &v0, &IntegrateOptions::new(1.0)).unwrap();
        let off = integrate(&ops, &ProblemSpec::conservative(&mesh), &StepperConfig::fixed(1e-2), &u0, &v0, &IntegrateOptions::new(1.0)).unwrap();
        // the truncated source is tiny, so the run is close to the source-free one
        assert!((&tr.final_state.u - &off.final_state.u).amax() < 1e-6);
    }

    #[test]
    fn ode_blowup_time_is_recovered() {
        // u'' = u^3 at the rod tip, with the bulk nearly rigid: compare the
        // Aitken estimate with itself under refinement.
        let (mesh, ops) = rod(4);
        let g = PowerSumSpec::power(Kind::Source, 4.0).unwrap();
        let spec = ProblemSpec::conservative(&mesh).with_sources(PowerSumSpec::zero(Kind::Source), g);
        let mut u0 = DVector::zeros(ops.num_dofs());
        for (i, x) in u0.iter_mut().enumerate() {
            *x = 4.0 * (i + 1) as f64 / 4.0;
        }
        let v0 = DVector::zeros(ops.num_dofs());
        let mut ests = Vec::new();
        for dt in [1e-3, 5e-4] {
            let cfg = StepperConfig { dt_init: dt, dt_max: dt, ..Default::default() };
            let tr = integrate(&ops, &spec, &cfg, &u0, &v0, &IntegrateOptions::new(10.0)).unwrap();
            match tr.status {
                TerminationStatus::BlowUpSuspected { t_est, norm_h1_h0, .. } => {
                    assert!(norm_h1_h0 > 1e6);
                    ests.push(t_est);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!((ests[0] - ests[1]).abs() < 0.01 * ests[1], "{ests:?}");
    }

    #[test]
    fn aitken_on_exact_power_law() {
        let t_max = 2.0;
        let hist: Vec<HistoryEntry> = (0..400)
            .map(|k| {
                let t = t_max - 1.5 * 0.97f64.powi(k);
                HistoryEntry { t, dt: 0.0, norm: 3.0 * (t_max - t).powf(-2.0) }
            })
            .collect();
        let (t, g) = estimate_blowup_time(&hist);
        assert!((t - t_max).abs() < 1e-6, "{t}");
        assert!((g.unwrap() - 2.0).abs() < 1e-3);
        assert_eq!(estimate_blowup_time(&hist[..1]).0, hist[0].t);
    }

    #[test]
    fn energy_matches_monitor() {
        let (mesh, ops) = rod(10);
        let spec = ProblemSpec::conservative(&mesh);
        let u0 = eigen_data(&mesh, &ops);
        let v0 = DVector::zeros(ops.num_dofs());
        let tr = integrate(&ops, &spec, &StepperConfig::fixed(0.05), &u0, &v0, &IntegrateOptions::new(0.5)).unwrap();
        let e = energy(&ops, &spec, &tr.final_state.u, &tr.final_state.v).unwrap().e;
        assert_eq!(e, tr.samples.last().unwrap().e);
    }
}
