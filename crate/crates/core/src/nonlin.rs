//! Power-sum damping and source nonlinearities and their nodal (Nemitskii)
//! actions.
//!
//! A [`PowerSumSpec`] encodes `s -> sum_k c_k |s|^(e_k - 2) s + c0`. Damping
//! specs are monotone with `P(0) = 0`; source specs have exponents `>= 2`.

use nalgebra::DVector;

use crate::assembly::DiscreteOperators;
use crate::error::{check_len, Error, Result};
use crate::mesh::Mesh;

/// Floor on `|s|` used by the derivative of sub-quadratic terms at the kink.
pub const KINK_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Damping,
    Source,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerTerm {
    pub coef: f64,
    pub exponent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerSumSpec {
    terms: Vec<PowerTerm>,
    constant: f64,
    kind: Kind,
}

impl PowerSumSpec {
    pub fn new(kind: Kind, terms: Vec<PowerTerm>, constant: f64) -> Result<Self> {
        for t in &terms {
            if !t.coef.is_finite() || !t.exponent.is_finite() {
                return Err(Error::InvalidParameter("non-finite power term".into()));
            }
            match kind {
                Kind::Damping if t.exponent <= 1.0 => {
                    return Err(Error::InvalidParameter(format!(
                        "damping exponent must be > 1, got {}",
                        t.exponent
                    )))
                }
                Kind::Damping if t.coef < 0.0 => {
                    return Err(Error::InvalidParameter(format!(
                        "damping coefficient must be >= 0, got {}",
                        t.coef
                    )))
                }
                Kind::Source if t.exponent < 2.0 => {
                    return Err(Error::InvalidParameter(format!(
                        "source exponent must be >= 2, got {}",
                        t.exponent
                    )))
                }
                _ => {}
            }
        }
        if !constant.is_finite() || (kind == Kind::Damping && constant != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid constant term {constant} for {kind:?}"
            )));
        }
        Ok(PowerSumSpec { terms, constant, kind })
    }

    /// Builds from `(coef, exponent)` pairs.
    pub fn from_pairs(kind: Kind, pairs: &[(f64, f64)], constant: f64) -> Result<Self> {
        let terms = pairs
            .iter()
            .map(|&(coef, exponent)| PowerTerm { coef, exponent })
            .collect();
        Self::new(kind, terms, constant)
    }

    /// The identically zero nonlinearity.
    pub fn zero(kind: Kind) -> Self {
        PowerSumSpec { terms: vec![], constant: 0.0, kind }
    }

    /// `|s|^(e-2) s` with unit coefficient.
    pub fn power(kind: Kind, exponent: f64) -> Result<Self> {
        Self::from_pairs(kind, &[(1.0, exponent)], 0.0)
    }

    pub fn linear_damping() -> Self {
        PowerSumSpec {
            terms: vec![PowerTerm { coef: 1.0, exponent: 2.0 }],
            constant: 0.0,
            kind: Kind::Damping,
        }
    }

    pub fn terms(&self) -> &[PowerTerm] {
        &self.terms
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    /// Terms with a nonzero coefficient.
    pub fn active_terms(&self) -> impl Iterator<Item = &PowerTerm> {
        self.terms.iter().filter(|t| t.coef != 0.0)
    }

    /// True when the nonlinearity vanishes identically.
    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.active_terms().next().is_none()
    }

    /// Largest exponent among the active terms, `None` if there is none.
    pub fn max_exponent(&self) -> Option<f64> {
        self.active_terms().map(|t| t.exponent).reduce(f64::max)
    }

    /// True when the map is affine in `s`.
    pub fn is_linear(&self) -> bool {
        self.active_terms().all(|t| t.exponent == 2.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.coef * signed_power(s, t.exponent - 1.0)).sum::<f64>() + self.constant
    }

    /// Derivative almost everywhere; sub-quadratic terms are regularized at
    /// the origin with `|s| >= KINK_EPS`.
    pub fn eval_deriv(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let e = t.exponent;
                if e == 2.0 {
                    t.coef
                } else if e > 2.0 {
                    t.coef * (e - 1.0) * s.abs().powf(e - 2.0)
                } else {
                    t.coef * (e - 1.0) * s.abs().max(KINK_EPS).powf(e - 2.0)
                }
            })
            .sum()
    }

    /// Antiderivative vanishing at zero.
    pub fn primitive(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * s.abs().powf(t.exponent) / t.exponent)
            .sum::<f64>()
            + self.constant * s
    }
}

/// `|s|^k sgn(s)`, zero at the origin.
fn signed_power(s: f64, k: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else if k == 1.0 {
        s
    } else {
        s.abs().powf(k).copysign(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Bulk,
    Boundary,
}

/// Nonnegative nodal coefficient over the mesh nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    values: Vec<f64>,
    region: Region,
}

impl CoefficientField {
    pub fn new(values: Vec<f64>, region: Region) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "coefficient field values must be finite and >= 0, got {v}"
            )));
        }
        Ok(CoefficientField { values, region })
    }

    pub fn constant(mesh: &Mesh, value: f64, region: Region) -> Result<Self> {
        Self::new(vec![value; mesh.num_nodes()], region)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn region(&self) -> Region {
        self.region
    }

    /// Minimum over the nodes of the support region (all nodes for the bulk,
    /// `Gamma1` nodes for the boundary). Zero when the region is empty.
    pub fn essential_infimum(&self, mesh: &Mesh) -> f64 {
        let mask = match self.region {
            Region::Bulk => vec![true; mesh.num_nodes()],
            Region::Boundary => mesh.gamma1_mask(),
        };
        self.values
            .iter()
            .zip(mask)
            .filter_map(|(&v, m)| m.then_some(v))
            .reduce(f64::min)
            .unwrap_or(0.0)
    }
}

/// Damping and source data of one problem instance.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub damping_bulk: PowerSumSpec,
    pub alpha: CoefficientField,
    pub damping_boundary: PowerSumSpec,
    pub beta: CoefficientField,
    pub source_bulk: PowerSumSpec,
    pub source_boundary: PowerSumSpec,
    /// Space dimension used by the regime classifier (>= 2).
    pub dimension: usize,
    /// Essential infima of `alpha` and `beta` over their regions.
    pub alpha_inf: f64,
    pub beta_inf: f64,
}

impl ProblemSpec {
    pub fn new(
        mesh: &Mesh,
        damping_bulk: PowerSumSpec,
        alpha: CoefficientField,
        damping_boundary: PowerSumSpec,
        beta: CoefficientField,
        source_bulk: PowerSumSpec,
        source_boundary: PowerSumSpec,
        dimension: usize,
    ) -> Result<Self> {
        if damping_bulk.kind() != Kind::Damping || damping_boundary.kind() != Kind::Damping {
            return Err(Error::InvalidParameter("P and Q must be damping specs".into()));
        }
        if source_bulk.kind() != Kind::Source || source_boundary.kind() != Kind::Source {
            return Err(Error::InvalidParameter("f and g must be source specs".into()));
        }
        for field in [&alpha, &beta] {
            check_len(mesh.num_nodes(), field.values().len())?;
        }
        let alpha_inf = alpha.essential_infimum(mesh);
        let beta_inf = beta.essential_infimum(mesh);
        Ok(ProblemSpec {
            damping_bulk,
            alpha,
            damping_boundary,
            beta,
            source_bulk,
            source_boundary,
            dimension,
            alpha_inf,
            beta_inf,
        })
    }

    /// Undamped, source-free problem with unit coefficient fields.
    pub fn conservative(mesh: &Mesh) -> Self {
        Self::new(
            mesh,
            PowerSumSpec::zero(Kind::Damping),
            CoefficientField::constant(mesh, 1.0, Region::Bulk).unwrap(),
            PowerSumSpec::zero(Kind::Damping),
            CoefficientField::constant(mesh, 1.0, Region::Boundary).unwrap(),
            PowerSumSpec::zero(Kind::Source),
            PowerSumSpec::zero(Kind::Source),
            mesh.dim().max(2),
        )
        .unwrap()
    }

    pub fn with_damping(mut self, bulk: PowerSumSpec, boundary: PowerSumSpec) -> Self {
        self.damping_bulk = bulk;
        self.damping_boundary = boundary;
        self
    }

    pub fn with_sources(mut self, bulk: PowerSumSpec, boundary: PowerSumSpec) -> Self {
        self.source_bulk = bulk;
        self.source_boundary = boundary;
        self
    }

    /// Damping exponent `m` of `P` (2 when `P` vanishes).
    pub fn m(&self) -> f64 {
        self.damping_bulk.max_exponent().unwrap_or(2.0)
    }

    /// Damping exponent `mu` of `Q` (2 when `Q` vanishes).
    pub fn mu(&self) -> f64 {
        self.damping_boundary.max_exponent().unwrap_or(2.0)
    }

    /// Source exponent `p` of `f` (2 when `f` has no power terms).
    pub fn p(&self) -> f64 {
        self.source_bulk.max_exponent().unwrap_or(2.0)
    }

    /// Source exponent `q` of `g` (2 when `g` has no power terms).
    pub fn q(&self) -> f64 {
        self.source_boundary.max_exponent().unwrap_or(2.0)
    }

    pub fn sources_vanish(&self) -> bool {
        self.source_bulk.is_zero() && self.source_boundary.is_zero()
    }
}

/// `out_i = w_i field_i spec(vec_i)`.
pub fn nemitskii_force(
    weights: &DVector<f64>,
    spec: &PowerSumSpec,
    field: &DVector<f64>,
    vec: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len(weights.len(), vec.len())?;
    check_len(weights.len(), field.len())?;
    Ok(DVector::from_fn(vec.len(), |i, _| {
        let w = weights[i] * field[i];
        if w == 0.0 {
            0.0
        } else {
            w * spec.eval(vec[i])
        }
    }))
}

/// Per-dof weights `w * alpha`, `w * beta` and the bare source weights,
/// precomputed once per problem.
#[derive(Clone, Debug)]
pub struct NodalWeights {
    pub damp_bulk: DVector<f64>,
    pub damp_boundary: DVector<f64>,
    pub src_bulk: DVector<f64>,
    pub src_boundary: DVector<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl NodalWeights {
    pub fn new(ops: &DiscreteOperators, spec: &ProblemSpec) -> Self {
        let alpha = ops.restrict_nodal(spec.alpha.values());
        let beta = ops.restrict_nodal(spec.beta.values());
        NodalWeights {
            damp_bulk: ops.lumped_bulk.component_mul(&alpha),
            damp_boundary: ops.lumped_boundary.component_mul(&beta),
            src_bulk: ops.lumped_bulk.clone(),
            src_boundary: ops.lumped_boundary.clone(),
            alpha,
            beta,
        }
    }
}

/// Combined damping load `B_h(v)` on the free dofs.
pub fn damping_force(spec: &ProblemSpec, w: &NodalWeights, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| {
        let mut out = 0.0;
        if w.damp_bulk[i] != 0.0 {
            out += w.damp_bulk[i] * spec.damping_bulk.eval(v[i]);
        }
        if w.damp_boundary[i] != 0.0 {
            out += w.damp_boundary[i] * spec.damping_boundary.eval(v[i]);
        }
        out
    })
}

/// Diagonal of the Jacobian of [`damping_force`].
pub fn damping_jacobian(spec: &ProblemSpec, w: &NodalWeights, v: &DVector<f64>) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let mut out = 0.0;
            if w.damp_bulk[i] != 0.0 {
                out += w.damp_bulk[i] * spec.damping_bulk.eval_deriv(v[i]);
            }
            if w.damp_boundary[i] != 0.0 {
                out += w.damp_boundary[i] * spec.damping_boundary.eval_deriv(v[i]);
            }
            out
        })
        .collect()
}

/// Combined source load `F_h(u)`; also the gradient of the discrete potential `J`.
pub fn source_force(spec: &ProblemSpec, w: &NodalWeights, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| {
        let mut out = 0.0;
        if w.src_bulk[i] != 0.0 {
            out += w.src_bulk[i] * spec.source_bulk.eval(u[i]);
        }
        if w.src_boundary[i] != 0.0 {
            out += w.src_boundary[i] * spec.source_boundary.eval(u[i]);
        }
        out
    })
}

/// Diagonal of the Jacobian of [`source_force`].
pub fn source_jacobian(spec: &ProblemSpec, w: &NodalWeights, u: &DVector<f64>) -> Vec<f64> {
    (0..u.len())
        .map(|i| {
            let mut out = 0.0;
            if w.src_bulk[i] != 0.0 {
                out += w.src_bulk[i] * spec.source_bulk.eval_deriv(u[i]);
            }
            if w.src_boundary[i] != 0.0 {
                out += w.src_boundary[i] * spec.source_boundary.eval_deriv(u[i]);
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, weighted_lp_norm};
    use crate::mesh::{generate_annulus, generate_interval};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cubic_damping() -> PowerSumSpec {
        PowerSumSpec::power(Kind::Damping, 3.0).unwrap()
    }

    #[test]
    fn cubic_damping_values() {
        let p = cubic_damping();
        assert_eq!(p.eval(2.0), 4.0);
        assert_eq!(p.eval(-2.0), -4.0);
        assert_eq!(p.eval(0.0), 0.0);
        let h = 1e-6;
        let fd = (p.eval(2.0 + h) - p.eval(2.0 - h)) / (2.0 * h);
        assert_eq!(p.eval_deriv(2.0), 4.0);
        assert!((fd - 4.0).abs() < 1e-6);
    }

    #[test]
    fn derivative_at_origin() {
        let mixed = PowerSumSpec::from_pairs(Kind::Damping, &[(0.5, 2.0), (1.0, 3.0), (2.0, 5.0)], 0.0).unwrap();
        assert_eq!(mixed.eval_deriv(0.0), 0.5);
        let sub = PowerSumSpec::from_pairs(Kind::Damping, &[(1.0, 1.5)], 0.0).unwrap();
        let d = sub.eval_deriv(0.0);
        assert!(d.is_finite());
        assert!((d - 0.5 * KINK_EPS.powf(-0.5)).abs() / d < 1e-12);
        assert_eq!(sub.eval(0.0), 0.0);
    }

    #[test]
    fn quartic_primitive_and_blowup_inequality() {
        let f = PowerSumSpec::power(Kind::Source, 4.0).unwrap();
        assert_eq!(f.primitive(2.0), 4.0);
        assert_eq!(f.primitive(0.0), 0.0);
        for k in -50..=50 {
            let s = 0.37 * k as f64;
            let lhs = f.eval(s) * s;
            assert!((lhs - 4.0 * f.primitive(s)).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(PowerSumSpec::from_pairs(Kind::Damping, &[(1.0, 0.5)], 0.0).is_err());
        assert!(PowerSumSpec::from_pairs(Kind::Damping, &[(-1.0, 2.0)], 0.0).is_err());
        assert!(PowerSumSpec::from_pairs(Kind::Damping, &[(1.0, 2.0)], 1.0).is_err());
        assert!(PowerSumSpec::from_pairs(Kind::Source, &[(1.0, 1.5)], 0.0).is_err());
        assert!(PowerSumSpec::from_pairs(Kind::Source, &[(-1.0, 5.0), (0.0, 2.0)], 3.0).is_ok());
    }

    #[test]
    fn monotone_damping_on_random_pairs() {
        let p = PowerSumSpec::from_pairs(Kind::Damping, &[(0.3, 1.5), (1.0, 4.0)], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (a, b): (f64, f64) = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let (s, t) = (a.min(b), a.max(b));
            assert!(p.eval(t) - p.eval(s) >= 0.0);
        }
    }

    #[test]
    fn nemitskii_monotone_and_coercive() {
        let mesh = generate_annulus(0.3, 1.0, 3, 12).unwrap();
        let ops = assemble(&mesh).unwrap();
        let n = ops.num_dofs();
        let p = cubic_damping();
        let ones = DVector::from_element(n, 1.0);
        assert_eq!(nemitskii_force(&ops.lumped_bulk, &p, &ones, &DVector::zeros(n)).unwrap(), DVector::zeros(n));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let pv = nemitskii_force(&ops.lumped_bulk, &p, &ones, &v).unwrap();
            let pw = nemitskii_force(&ops.lumped_bulk, &p, &ones, &w).unwrap();
            assert!((pv.clone() - pw).dot(&(v.clone() - w)) >= 0.0);
            let lp = weighted_lp_norm(&ops.lumped_bulk, &v, 3.0, &ones).unwrap();
            assert!((pv.dot(&v) - lp.powi(3)).abs() <= 1e-10 * lp.powi(3));
        }
        assert!(nemitskii_force(&ops.lumped_bulk, &p, &ones, &DVector::zeros(n + 1)).is_err());
    }

    #[test]
    fn essential_infimum_by_region() {
        let mesh = generate_interval(1.0, 4).unwrap();
        let alpha = CoefficientField::new(vec![0.0, 2.0, 3.0, 4.0, 5.0], Region::Bulk).unwrap();
        let beta = CoefficientField::new(vec![0.0, 2.0, 3.0, 4.0, 5.0], Region::Boundary).unwrap();
        assert_eq!(alpha.essential_infimum(&mesh), 0.0);
        assert_eq!(beta.essential_infimum(&mesh), 5.0);
        assert!(CoefficientField::new(vec![-1.0], Region::Bulk).is_err());
    }

    fn damping_strategy() -> impl Strategy<Value = PowerSumSpec> {
        prop::collection::vec((0.0f64..3.0, 1.05f64..6.0), 1..4)
            .prop_map(|pairs| PowerSumSpec::from_pairs(Kind::Damping, &pairs, 0.0).unwrap())
    }

    proptest! {
        #[test]
        fn growth_envelope(p in damping_strategy(), s in -1e6f64..1e6) {
            let m = p.max_exponent().unwrap();
            let c: f64 = p.terms().iter().map(|t| t.coef.abs()).sum();
            prop_assert!(p.eval(s).abs() <= c * (1.0 + s.abs().powf(m - 1.0)) * (1.0 + 1e-12));
        }

        #[test]
        fn primitive_differentiates_to_eval(
            pairs in prop::collection::vec((-2.0f64..2.0, 2.0f64..6.0), 1..4),
            c0 in -1.0f64..1.0,
            s in -5.0f64..5.0,
        ) {
            let f = PowerSumSpec::from_pairs(Kind::Source, &pairs, c0).unwrap();
            let h = 1e-4;
            let defect = f.primitive(s + h) - f.primitive(s) - h * f.eval(s);
            // second-order Taylor remainder with |f'| bounded on [-5.1, 5.1]
            let bound: f64 = pairs.iter().map(|(c, e)| c.abs() * (e - 1.0) * 5.1f64.powf(e - 2.0)).sum();
            prop_assert!(defect.abs() <= 0.5 * bound * h * h + 1e-10);
        }
    }
}
