//! Scalar functionals: energy, source potential, dissipation, the auxiliary
//! functional `Upsilon`, and the energy-identity bookkeeping along a run.

use nalgebra::DVector;

use crate::assembly::{weighted_lp_norm, DiscreteOperators};
use crate::error::{check_len, Error, Result};
use crate::linalg::quad_form;
use crate::nonlin::{damping_force, NodalWeights, ProblemSpec};
use crate::regime::GlobalCertificate;

/// Energy split at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParts {
    pub kinetic: f64,
    pub potential_quadratic: f64,
    pub j: f64,
    pub e: f64,
}

/// One row of the time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySample {
    pub t: f64,
    pub kinetic: f64,
    pub potential_quadratic: f64,
    pub j: f64,
    pub e: f64,
    pub dissipation_cum: f64,
    pub identity_residual: f64,
    pub norm_h1: f64,
    pub norm_v_h0: f64,
    pub norm_lp: f64,
    pub norm_lq_gamma1: f64,
    /// NaN when no global certificate is available.
    pub upsilon: f64,
    pub dt: f64,
}

fn check_finite(name: &str, x: &DVector<f64>) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteState(format!("{name}[{i}] = {}", x[i]))),
        None => Ok(()),
    }
}

/// `J(u)` with precomputed weights.
pub fn potential_j_with(spec: &ProblemSpec, w: &NodalWeights, u: &DVector<f64>) -> f64 {
    (0..u.len())
        .map(|i| {
            let mut acc = 0.0;
            if w.src_bulk[i] != 0.0 {
                acc += w.src_bulk[i] * spec.source_bulk.primitive(u[i]);
            }
            if w.src_boundary[i] != 0.0 {
                acc += w.src_boundary[i] * spec.source_boundary.primitive(u[i]);
            }
            acc
        })
        .sum()
}

/// Source potential: lumped quadrature of the primitives of `f` and `g`.
pub fn potential_j(ops: &DiscreteOperators, spec: &ProblemSpec, u: &DVector<f64>) -> Result<f64> {
    check_len(ops.num_dofs(), u.len())?;
    Ok(potential_j_with(spec, &NodalWeights::new(ops, spec), u))
}

pub fn energy_with(
    ops: &DiscreteOperators,
    spec: &ProblemSpec,
    w: &NodalWeights,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<EnergyParts> {
    check_len(ops.num_dofs(), u.len())?;
    check_len(ops.num_dofs(), v.len())?;
    check_finite("u", u)?;
    check_finite("v", v)?;
    let kinetic = 0.5 * quad_form(&ops.mass, v);
    let potential_quadratic = 0.5 * quad_form(&ops.stiff, u);
    let j = potential_j_with(spec, w, u);
    let e = kinetic + potential_quadratic - j;
    if !e.is_finite() {
        return Err(Error::NonFiniteState(format!("energy = {e}")));
    }
    Ok(EnergyParts { kinetic, potential_quadratic, j, e })
}

/// `E = v^T M v / 2 + u^T K u / 2 - J(u)`.
pub fn energy(ops: &DiscreteOperators, spec: &ProblemSpec, u: &DVector<f64>, v: &DVector<f64>) -> Result<EnergyParts> {
    energy_with(ops, spec, &NodalWeights::new(ops, spec), u, v)
}

/// Instantaneous dissipation rate `v . B_h(v)`.
pub fn dissipation_rate(spec: &ProblemSpec, w: &NodalWeights, v: &DVector<f64>) -> f64 {
    damping_force(spec, w, v).dot(v)
}

/// `dt * v_mid . B_h(v_mid)`.
pub fn dissipation_increment(ops: &DiscreteOperators, spec: &ProblemSpec, v_mid: &DVector<f64>, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    check_len(ops.num_dofs(), v_mid.len())?;
    Ok(dt * dissipation_rate(spec, &NodalWeights::new(ops, spec), v_mid))
}

/// `Upsilon = |v|_H0^2 / 2 + |u|_H1^2 / 2 + I(u)` for a global certificate.
pub fn upsilon_with(
    ops: &DiscreteOperators,
    w: &NodalWeights,
    u: &DVector<f64>,
    v: &DVector<f64>,
    cert: Option<&GlobalCertificate>,
) -> Result<f64> {
    let cert = cert.ok_or_else(|| Error::Precondition("Upsilon needs a global-existence certificate".into()))?;
    check_len(ops.num_dofs(), u.len())?;
    check_len(ops.num_dofs(), v.len())?;
    let quad = 0.5 * quad_form(&ops.mass, v) + 0.5 * (quad_form(&ops.stiff, u) + quad_form(&ops.mass_boundary, u));
    let mut aux = 0.0;
    for i in 0..u.len() {
        if cert.c_p1 != 0.0 && w.src_bulk[i] != 0.0 {
            aux += cert.c_p1 * w.src_bulk[i] * w.alpha[i] * u[i].abs().powf(cert.p1);
        }
        if cert.c_q1 != 0.0 && w.src_boundary[i] != 0.0 {
            aux += cert.c_q1 * w.src_boundary[i] * w.beta[i] * u[i].abs().powf(cert.q1);
        }
    }
    Ok(quad + aux)
}

pub fn upsilon(
    ops: &DiscreteOperators,
    spec: &ProblemSpec,
    u: &DVector<f64>,
    v: &DVector<f64>,
    cert: Option<&GlobalCertificate>,
) -> Result<f64> {
    upsilon_with(ops, &NodalWeights::new(ops, spec), u, v, cert)
}

/// `(|u|_Lp(Omega), |u|_Lq(Gamma1))` with the source exponents of `spec`.
pub fn source_norms(ops: &DiscreteOperators, spec: &ProblemSpec, u: &DVector<f64>) -> Result<(f64, f64)> {
    let ones = DVector::from_element(u.len(), 1.0);
    Ok((
        weighted_lp_norm(&ops.lumped_bulk, u, spec.p(), &ones)?,
        weighted_lp_norm(&ops.lumped_boundary, u, spec.q(), &ones)?,
    ))
}

/// `max_n |E(t_n) - E(0) + D(t_n)| / max(1, |E(0)|)`.
pub fn energy_identity_residual(samples: &[EnergySample]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Precondition("energy identity needs at least two samples".into()));
    }
    let e0 = samples[0].e;
    let scale = e0.abs().max(1.0);
    Ok(samples
        .iter()
        .map(|s| (s.e - e0 + s.dissipation_cum).abs() / scale)
        .fold(0.0, f64::max))
}

/// Running energy bookkeeping for one trajectory.
///
/// Two dissipation integrals are kept. `dissipation_cum` integrates the rate
/// `v . B(v)` with the trapezoid rule over accepted step endpoints; it is the
/// one reported in samples, and its identity residual is a genuine O(dt^2)
/// quadrature error. `dissipation_mid` uses the midpoint velocity the
/// integrator actually used, which makes the identity exact up to roundoff
/// for the midpoint scheme without sources.
pub struct EnergyMonitor<'a> {
    ops: &'a DiscreteOperators,
    spec: &'a ProblemSpec,
    weights: NodalWeights,
    cert: Option<GlobalCertificate>,
    e0: f64,
    last_rate: f64,
    dissipation_cum: f64,
    dissipation_mid: f64,
}

impl<'a> EnergyMonitor<'a> {
    pub fn new(
        ops: &'a DiscreteOperators,
        spec: &'a ProblemSpec,
        cert: Option<GlobalCertificate>,
        u0: &DVector<f64>,
        v0: &DVector<f64>,
    ) -> Result<Self> {
        let weights = NodalWeights::new(ops, spec);
        let e0 = energy_with(ops, spec, &weights, u0, v0)?.e;
        let last_rate = dissipation_rate(spec, &weights, v0);
        Ok(EnergyMonitor {
            ops,
            spec,
            weights,
            cert,
            e0,
            last_rate,
            dissipation_cum: 0.0,
            dissipation_mid: 0.0,
        })
    }

    pub fn initial_energy(&self) -> f64 {
        self.e0
    }

    pub fn dissipation_cum(&self) -> f64 {
        self.dissipation_cum
    }

    pub fn dissipation_mid(&self) -> f64 {
        self.dissipation_mid
    }

    /// Accounts for one accepted step.
    pub fn record_step(&mut self, v_new: &DVector<f64>, v_mid: &DVector<f64>, dt: f64) {
        let rate = dissipation_rate(self.spec, &self.weights, v_new);
        self.dissipation_cum += 0.5 * dt * (self.last_rate + rate);
        self.dissipation_mid += dt * dissipation_rate(self.spec, &self.weights, v_mid);
        self.last_rate = rate;
    }

    /// `|E - E0 + D_mid| / max(1, |E0|)` for the current state.
    pub fn midpoint_residual(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        let e = energy_with(self.ops, self.spec, &self.weights, u, v)?.e;
        Ok((e - self.e0 + self.dissipation_mid).abs() / self.e0.abs().max(1.0))
    }

    pub fn sample(&self, t: f64, u: &DVector<f64>, v: &DVector<f64>, dt: f64) -> Result<EnergySample> {
        let parts = energy_with(self.ops, self.spec, &self.weights, u, v)?;
        let (norm_lp, norm_lq_gamma1) = source_norms(self.ops, self.spec, u)?;
        let upsilon = match &self.cert {
            Some(c) => upsilon_with(self.ops, &self.weights, u, v, Some(c))?,
            None => f64::NAN,
        };
        Ok(EnergySample {
            t,
            kinetic: parts.kinetic,
            potential_quadratic: parts.potential_quadratic,
            j: parts.j,
            e: parts.e,
            dissipation_cum: self.dissipation_cum,
            identity_residual: (parts.e - self.e0 + self.dissipation_cum).abs(),
            norm_h1: crate::assembly::h1_norm(self.ops, u)?,
            norm_v_h0: crate::assembly::h0_norm(self.ops, v)?,
            norm_lp,
            norm_lq_gamma1,
            upsilon,
            dt,
        })
    }
}
