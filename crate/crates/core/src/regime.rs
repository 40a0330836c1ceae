//! Exponent arithmetic and hypothesis classification for a [`ProblemSpec`].
//!
//! Everything here is exact bookkeeping over the power-sum exponents: the
//! Sobolev critical exponents, the regularity exponents `l` and `lambda`,
//! the subcriticality window for the sources, and the two syntactic
//! certificates for finite-time blow-up (linear damping, superquadratic
//! nonnegative sources) and for global existence (sources dominated by the
//! damping or of sink type).

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DVector;

use crate::assembly::DiscreteOperators;
use crate::energy;
use crate::error::{Error, Result};
use crate::nonlin::{PowerSumSpec, ProblemSpec};

/// Extended real: a finite value or `+inf`. Serialized as `inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinity,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::Infinity => None,
        }
    }

    /// `1 + self / 2`
    pub fn half_plus_one(self) -> ExtReal {
        self.map(|x| 1.0 + 0.5 * x)
    }

    /// Division by a positive finite number.
    pub fn div(self, d: f64) -> ExtReal {
        self.map(|x| x / d)
    }

    pub fn max(self, other: ExtReal) -> ExtReal {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        if self <= other {
            self
        } else {
            other
        }
    }

    fn map(self, f: impl FnOnce(f64) -> f64) -> ExtReal {
        match self {
            ExtReal::Finite(x) => ExtReal::Finite(f(x)),
            ExtReal::Infinity => ExtReal::Infinity,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(x: f64) -> Self {
        ExtReal::Finite(x)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::Infinity, ExtReal::Infinity) => Some(Ordering::Equal),
            (ExtReal::Infinity, _) => Some(Ordering::Greater),
            (_, ExtReal::Infinity) => Some(Ordering::Less),
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::Infinity => f.write_str("inf"),
        }
    }
}

/// Critical exponents `(r_Omega, r_Gamma)` of `H^1(Omega) -> L^r` and
/// `H^1(Gamma) -> L^r` in dimension `n`.
pub fn critical_exponents(n: usize) -> Result<(ExtReal, ExtReal)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("dimension must be >= 2, got {n}")));
    }
    let nf = n as f64;
    let r_omega = if n >= 3 {
        ExtReal::Finite(2.0 * nf / (nf - 2.0))
    } else {
        ExtReal::Infinity
    };
    let r_gamma = if n >= 4 {
        ExtReal::Finite(2.0 * (nf - 1.0) / (nf - 3.0))
    } else {
        ExtReal::Infinity
    };
    Ok((r_omega, r_gamma))
}

fn check_damping_exponents(m: f64, mu: f64) -> Result<()> {
    if !(m > 1.0 && mu > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "damping exponents must be > 1, got m={m}, mu={mu}"
        )));
    }
    Ok(())
}

/// Regularity exponents `(l, lambda)`.
pub fn exponents_l_lambda(m: f64, mu: f64, n: usize) -> Result<(ExtReal, ExtReal)> {
    check_damping_exponents(m, mu)?;
    let (r_omega, r_gamma) = critical_exponents(n)?;
    let l = ExtReal::Finite(2.0)
        .min(ExtReal::from(m).max(r_omega).div(m - 1.0))
        .min(ExtReal::from(mu).max(r_gamma).div(mu - 1.0));
    let lambda = if ExtReal::from(m) <= r_omega && ExtReal::from(mu) <= r_gamma {
        ExtReal::Infinity
    } else {
        ExtReal::Finite((m / (m - 1.0)).min(mu / (mu - 1.0)))
    };
    Ok((l, lambda))
}

/// `p <= 1 + r_Omega/2` and `q <= 1 + r_Gamma/2`.
pub fn check_subcritical(p: f64, q: f64, n: usize) -> Result<bool> {
    if !(p >= 2.0 && q >= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "source exponents must be >= 2, got p={p}, q={q}"
        )));
    }
    let (r_omega, r_gamma) = critical_exponents(n)?;
    Ok(ExtReal::from(p) <= r_omega.half_plus_one() && ExtReal::from(q) <= r_gamma.half_plus_one())
}

/// `(basic, optimal)` regularity flags: `m <= r_Omega, mu <= r_Gamma` and
/// `m <= 1 + r_Omega/2, mu <= 1 + r_Gamma/2`.
pub fn check_regularity(m: f64, mu: f64, n: usize) -> Result<(bool, bool)> {
    check_damping_exponents(m, mu)?;
    let (r_omega, r_gamma) = critical_exponents(n)?;
    let (m, mu) = (ExtReal::from(m), ExtReal::from(mu));
    Ok((
        m <= r_omega && mu <= r_gamma,
        m <= r_omega.half_plus_one() && mu <= r_gamma.half_plus_one(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub reason: String,
}

fn reject<T>(reason: impl Into<String>) -> std::result::Result<T, Rejection> {
    Err(Rejection { reason: reason.into() })
}

/// Blow-up certificate: `f(u) u >= p_bar F(u) >= 0` and the boundary analog.
/// `None` marks an absent source, for which any exponent above 2 works.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlowupCertificate {
    pub p_bar: Option<f64>,
    pub q_bar: Option<f64>,
}

fn blowup_exponent(src: &PowerSumSpec, name: &str) -> std::result::Result<Option<f64>, Rejection> {
    if src.constant() != 0.0 {
        return reject(format!("constant term of {name} must vanish"));
    }
    let active: Vec<_> = src.active_terms().collect();
    let has_neg = active.iter().any(|t| t.coef < 0.0);
    let has_pos = active.iter().any(|t| t.coef > 0.0);
    if has_neg && has_pos && active.len() > 2 {
        return reject(format!("{name} has mixed-sign terms outside the two-term model family"));
    }
    if has_neg {
        return reject(format!("{name} has a negative coefficient"));
    }
    if let Some(t) = active.iter().find(|t| t.exponent <= 2.0) {
        return reject(format!("{name} exponent {} must exceed 2", t.exponent));
    }
    Ok(active.iter().map(|t| t.exponent).reduce(f64::min))
}

/// Accepts specs with linear damping and nonnegative superquadratic power sources.
pub fn check_blowup_hypotheses(spec: &ProblemSpec) -> std::result::Result<BlowupCertificate, Rejection> {
    if !spec.damping_bulk.is_linear() || !spec.damping_boundary.is_linear() {
        return reject("damping must be linear");
    }
    let p_bar = blowup_exponent(&spec.source_bulk, "f")?;
    let q_bar = blowup_exponent(&spec.source_boundary, "g")?;
    if p_bar.is_none() && q_bar.is_none() {
        return reject("(f, g) vanish identically: the negative-energy set is empty");
    }
    Ok(BlowupCertificate { p_bar, q_bar })
}

/// Global-existence certificate `(p1, q1)` with the constants of the
/// auxiliary functional: `F(u) <= C_p1 (1 + u^2 + alpha |u|^p1)` and the
/// boundary analog hold pointwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalCertificate {
    pub p1: f64,
    pub q1: f64,
    pub c_p1: f64,
    pub c_q1: f64,
}

impl GlobalCertificate {
    /// The trivial certificate used when only a norm-like functional is needed.
    pub fn quadratic() -> Self {
        GlobalCertificate { p1: 2.0, q1: 2.0, c_p1: 0.0, c_q1: 0.0 }
    }
}

fn global_exponent(
    src: &PowerSumSpec,
    damping_exp: f64,
    coef_inf: f64,
    names: (&str, &str, &str),
) -> std::result::Result<(f64, f64), Rejection> {
    let (src_name, damp_name, field_name) = names;
    let p1 = src
        .active_terms()
        .filter(|t| t.coef > 0.0)
        .map(|t| t.exponent)
        .fold(2.0, f64::max);
    let cap = damping_exp.max(2.0);
    if p1 > cap {
        return reject(format!(
            "positive {src_name} term with exponent {p1} exceeds max(2, {damp_name}) = {cap}"
        ));
    }
    if p1 > 2.0 && !(coef_inf > 0.0) {
        return reject(format!("ess inf {field_name} must be > 0 when the {src_name} exponent exceeds 2"));
    }
    let scale = if p1 > 2.0 { 1.0f64.max(1.0 / coef_inf) } else { 1.0 };
    let c = src
        .active_terms()
        .filter(|t| t.coef > 0.0)
        .map(|t| t.coef / t.exponent * if t.exponent > 2.0 { scale } else { 1.0 })
        .sum::<f64>()
        + 0.5 * src.constant().abs();
    Ok((p1, c))
}

/// Accepts when every positive source term is dominated by the damping (or is
/// at most quadratic) and the sink terms are arbitrary.
pub fn check_global_hypotheses(spec: &ProblemSpec) -> std::result::Result<GlobalCertificate, Rejection> {
    let (p1, c_p1) = global_exponent(&spec.source_bulk, spec.m(), spec.alpha_inf, ("f", "m", "alpha"))?;
    let (q1, c_q1) = global_exponent(&spec.source_boundary, spec.mu(), spec.beta_inf, ("g", "mu", "beta"))?;
    Ok(GlobalCertificate { p1, q1, c_p1, c_q1 })
}

/// Initial energy of `(u0, v0)`; negative values put the data in the blow-up set.
pub fn energy_sign(
    ops: &DiscreteOperators,
    spec: &ProblemSpec,
    u0: &DVector<f64>,
    v0: &DVector<f64>,
) -> Result<f64> {
    Ok(energy::energy(ops, spec, u0, v0)?.e)
}

#[derive(Clone, Debug)]
pub struct RegimeReport {
    pub dimension: usize,
    pub rod_model: bool,
    pub m: f64,
    pub mu: f64,
    pub p: f64,
    pub q: f64,
    pub r_omega: ExtReal,
    pub r_gamma: ExtReal,
    pub l: ExtReal,
    pub lambda: ExtReal,
    pub subcritical: bool,
    pub regularity_basic: bool,
    pub regularity_optimal: bool,
    /// `m > r_Omega` or `mu > r_Gamma`.
    pub supercritical_damping: bool,
    pub blowup: std::result::Result<BlowupCertificate, Rejection>,
    pub global: std::result::Result<GlobalCertificate, Rejection>,
    pub initial_energy: Option<f64>,
}

/// Full classification of a spec. `mesh_dim` only flags the 1D rod model.
pub fn classify(spec: &ProblemSpec, mesh_dim: usize) -> Result<RegimeReport> {
    let n = spec.dimension;
    let (m, mu, p, q) = (spec.m(), spec.mu(), spec.p(), spec.q());
    let (r_omega, r_gamma) = critical_exponents(n)?;
    let (l, lambda) = exponents_l_lambda(m, mu, n)?;
    let (regularity_basic, regularity_optimal) = check_regularity(m, mu, n)?;
    Ok(RegimeReport {
        dimension: n,
        rod_model: mesh_dim == 1,
        m,
        mu,
        p,
        q,
        r_omega,
        r_gamma,
        l,
        lambda,
        subcritical: check_subcritical(p, q, n)?,
        regularity_basic,
        regularity_optimal,
        supercritical_damping: !regularity_basic,
        blowup: check_blowup_hypotheses(spec),
        global: check_global_hypotheses(spec),
        initial_energy: None,
    })
}

fn opt_exp(x: Option<f64>) -> String {
    x.map_or_else(|| "absent".to_string(), |v| v.to_string())
}

impl RegimeReport {
    /// Flat `key=value` pairs in a fixed order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("dimension".into(), self.dimension.to_string()),
            ("rod_model".into(), self.rod_model.to_string()),
            ("m".into(), self.m.to_string()),
            ("mu".into(), self.mu.to_string()),
            ("p".into(), self.p.to_string()),
            ("q".into(), self.q.to_string()),
            ("r_omega".into(), self.r_omega.to_string()),
            ("r_gamma".into(), self.r_gamma.to_string()),
            ("l".into(), self.l.to_string()),
            ("lambda".into(), self.lambda.to_string()),
            ("subcritical".into(), self.subcritical.to_string()),
            ("regularity_basic".into(), self.regularity_basic.to_string()),
            ("regularity_optimal".into(), self.regularity_optimal.to_string()),
            ("supercritical_damping".into(), self.supercritical_damping.to_string()),
        ];
        match &self.blowup {
            Ok(c) => {
                kv.push(("blowup".into(), "accepted".into()));
                kv.push(("blowup.p_bar".into(), opt_exp(c.p_bar)));
                kv.push(("blowup.q_bar".into(), opt_exp(c.q_bar)));
            }
            Err(r) => {
                kv.push(("blowup".into(), "rejected".into()));
                kv.push(("blowup.reason".into(), r.reason.clone()));
            }
        }
        match &self.global {
            Ok(c) => {
                kv.push(("global".into(), "accepted".into()));
                kv.push(("global.p1".into(), c.p1.to_string()));
                kv.push(("global.q1".into(), c.q1.to_string()));
                kv.push(("global.c_p1".into(), c.c_p1.to_string()));
                kv.push(("global.c_q1".into(), c.c_q1.to_string()));
            }
            Err(r) => {
                kv.push(("global".into(), "rejected".into()));
                kv.push(("global.reason".into(), r.reason.clone()));
            }
        }
        if let Some(e) = self.initial_energy {
            kv.push(("initial_energy".into(), e.to_string()));
            let sign = match e.partial_cmp(&0.0) {
                Some(Ordering::Less) => "negative",
                Some(Ordering::Greater) => "positive",
                _ => "zero",
            };
            kv.push(("initial_energy.sign".into(), sign.into()));
        }
        kv
    }

    /// Short regime label: `blowup`, `global` or `unclassified`.
    pub fn label(&self) -> &'static str {
        match (&self.blowup, &self.global) {
            (Ok(_), _) => "blowup",
            (_, Ok(_)) => "global",
            _ => "unclassified",
        }
    }
}

impl fmt::Display for RegimeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dimension N = {}{}", self.dimension, if self.rod_model { " (rod model)" } else { "" })?;
        writeln!(f, "exponents: m = {}, mu = {}, p = {}, q = {}", self.m, self.mu, self.p, self.q)?;
        writeln!(f, "critical exponents: r_omega = {}, r_gamma = {}", self.r_omega, self.r_gamma)?;
        writeln!(f, "regularity exponents: l = {}, lambda = {}", self.l, self.lambda)?;
        writeln!(f, "subcritical sources: {}", self.subcritical)?;
        writeln!(f, "regularity: basic = {}, optimal = {}", self.regularity_basic, self.regularity_optimal)?;
        match &self.blowup {
            Ok(c) => writeln!(f, "blowup: accepted (p_bar={}, q_bar={})", opt_exp(c.p_bar), opt_exp(c.q_bar))?,
            Err(r) => writeln!(f, "blowup: rejected ({})", r.reason)?,
        }
        match &self.global {
            Ok(c) => writeln!(f, "global: accepted (p1={}, q1={})", c.p1, c.q1)?,
            Err(r) => writeln!(f, "global: rejected ({})", r.reason)?,
        }
        if let Some(e) = self.initial_energy {
            writeln!(f, "initial energy: {e}")?;
        }
        Ok(())
    }
}
