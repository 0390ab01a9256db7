//! Generalized Orlicz integrands `phi(x, t)` and their structural conditions.

mod blowup;
mod conditions;
mod regularize;
mod table;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::Point;

pub use blowup::{blowup_phi, recession_limit, BlowupPhi, RecessionReport};
pub use conditions::{
    ball_envelope, check_a0, check_cons1, check_dec, check_deriv_dec, check_deriv_inc, check_inc, check_sandwich,
    check_va1, BallEnvelope, ConditionVerdict, SampleSpec,
};
pub use regularize::{regularize, RegularizeOptions, RegularizedPhi};
pub use table::PhiTable;

/// `omega(r) = min(1, c * r^theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderModulus {
    pub c: f64,
    pub theta: f64,
}

impl HolderModulus {
    pub const ZERO: HolderModulus = HolderModulus { c: 0.0, theta: 1.0 };

    pub fn new(c: f64, theta: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Input(format!("modulus constant must be >= 0, got {c}")));
        }
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::Input(format!(
                "modulus exponent must lie in (0, 1], got {theta}"
            )));
        }
        Ok(HolderModulus { c, theta })
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        (self.c * r.powf(self.theta)).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEnvelope {
    pub p: f64,
    pub q: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub omega: HolderModulus,
}

impl GrowthEnvelope {
    pub fn new(p: f64, q: f64, l: f64, omega: HolderModulus) -> Result<Self> {
        let env = GrowthEnvelope { p, q, l, omega };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !(self.q >= self.p) || !self.q.is_finite() {
            return Err(Error::Input(format!(
                "growth exponents must satisfy 1 < p <= q, got p = {}, q = {}",
                self.p, self.q
            )));
        }
        if !(self.l >= 1.0) || !self.l.is_finite() {
            return Err(Error::Input(format!("L must be >= 1, got {}", self.l)));
        }
        HolderModulus::new(self.omega.c, self.omega.theta)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PhiFamily {
    /// `t^p`
    PowerLaw { p: f64 },
    /// `a(x) t^p`
    PerturbedOrlicz { a: Expr, p: f64 },
    /// `t^{p(x)}`
    VariableExponent { p: Expr },
    /// `t^p + a(x) t^q`
    DoublePhase { p: f64, q: f64, a: Expr },
    /// Autonomous, interpolated from samples.
    Tabulated(PhiTable),
}

impl PhiFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PhiFamily::PowerLaw { .. } => "power_law",
            PhiFamily::PerturbedOrlicz { .. } => "perturbed_orlicz",
            PhiFamily::VariableExponent { .. } => "variable_exponent",
            PhiFamily::DoublePhase { .. } => "double_phase",
            PhiFamily::Tabulated(_) => "tabulated",
        }
    }

    pub fn is_autonomous(&self) -> bool {
        match self {
            PhiFamily::PowerLaw { .. } | PhiFamily::Tabulated(_) => true,
            PhiFamily::PerturbedOrlicz { a, .. } => a.as_constant().is_some(),
            PhiFamily::VariableExponent { p } => p.as_constant().is_some(),
            PhiFamily::DoublePhase { a, .. } => a.as_constant().is_some(),
        }
    }
}

/// Axis-aligned box on which an integrand may be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl DomainBox {
    pub fn contains(&self, x: Point) -> bool {
        let tol = 1e-9 * (1.0 + (self.hi[0] - self.lo[0]).abs() + (self.hi[1] - self.lo[1]).abs());
        (0..2).all(|a| x[a] >= self.lo[a] - tol && x[a] <= self.hi[a] + tol)
    }
}

/// JSON descriptor: `{"family": ..., "params": {...}, "envelope": {...}?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    #[serde(flatten)]
    pub family: PhiFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<GrowthEnvelope>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiFunction {
    family: PhiFamily,
    envelope: GrowthEnvelope,
    domain: Option<DomainBox>,
}

/// Default modulus assumed for non-autonomous families when none is given.
pub const DEFAULT_OMEGA: HolderModulus = HolderModulus { c: 10.0, theta: 0.5 };

impl PhiFunction {
    pub fn power_law(p: f64) -> Result<Self> {
        PhiFunction::new(PhiFamily::PowerLaw { p }, None, None)
    }

    pub fn double_phase(p: f64, q: f64, a: &str, domain: Option<DomainBox>) -> Result<Self> {
        PhiFunction::new(
            PhiFamily::DoublePhase {
                p,
                q,
                a: Expr::parse(a)?,
            },
            None,
            domain,
        )
    }

    /// Builds an integrand; when `envelope` is `None` it is derived from the
    /// family, sampling coefficient fields on the domain (unit square if absent).
    pub fn new(family: PhiFamily, envelope: Option<GrowthEnvelope>, domain: Option<DomainBox>) -> Result<Self> {
        validate_family(&family)?;
        let envelope = match envelope {
            Some(e) => {
                e.validate()?;
                e
            }
            None => derive_envelope(&family, domain)?,
        };
        let phi = PhiFunction {
            family,
            envelope,
            domain,
        };
        phi.validate_coefficients()?;
        Ok(phi)
    }

    pub fn from_spec(spec: PhiSpec, domain: Option<DomainBox>) -> Result<Self> {
        PhiFunction::new(spec.family, spec.envelope, domain)
    }

    pub fn to_spec(&self) -> PhiSpec {
        PhiSpec {
            family: self.family.clone(),
            envelope: Some(self.envelope),
        }
    }

    pub fn family(&self) -> &PhiFamily {
        &self.family
    }

    pub fn envelope(&self) -> &GrowthEnvelope {
        &self.envelope
    }

    pub fn domain(&self) -> Option<DomainBox> {
        self.domain
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_envelope(mut self, envelope: GrowthEnvelope) -> Result<Self> {
        envelope.validate()?;
        self.envelope = envelope;
        Ok(self)
    }

    pub fn is_autonomous(&self) -> bool {
        self.family.is_autonomous()
    }

    /// The integrand frozen at `x`.
    pub fn local(&self, x: Point) -> Result<LocalPhi> {
        if let Some(d) = &self.domain {
            if !d.contains(x) {
                return Err(Error::Domain(format!("x = {x:?} lies outside the domain box")));
            }
        }
        Ok(match &self.family {
            PhiFamily::PowerLaw { p } => LocalPhi::Power { c: 1.0, p: *p },
            PhiFamily::PerturbedOrlicz { a, p } => LocalPhi::Power {
                c: coefficient(a, x)?,
                p: *p,
            },
            PhiFamily::VariableExponent { p } => {
                let px = p.eval(x)?;
                if !(px > 1.0) {
                    return Err(Error::Domain(format!("exponent p(x) = {px} <= 1 at {x:?}")));
                }
                LocalPhi::Power { c: 1.0, p: px }
            }
            PhiFamily::DoublePhase { p, q, a } => LocalPhi::DoublePhase {
                p: *p,
                q: *q,
                a: coefficient(a, x)?,
            },
            PhiFamily::Tabulated(t) => LocalPhi::Table(Arc::new(t.clone())),
        })
    }

    pub fn eval(&self, x: Point, t: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.local(x)?.value(t))
    }

    /// Right derivative in `t`; zero at `t = 0`.
    pub fn eval_deriv(&self, x: Point, t: f64) -> Result<f64> {
        check_t(t)?;
        Ok(self.local(x)?.deriv(t))
    }

    fn validate_coefficients(&self) -> Result<()> {
        let (lo, hi) = match self.domain {
            Some(d) => (d.lo, d.hi),
            None => ([0.0, 0.0], [1.0, 1.0]),
        };
        for p in sample_box(lo, hi, 17) {
            self.local(p)?;
        }
        Ok(())
    }
}

fn check_t(t: f64) -> Result<()> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::Domain(format!("t = {t} must be nonnegative")));
    }
    Ok(())
}

fn coefficient(a: &Expr, x: Point) -> Result<f64> {
    let v = a.eval(x)?;
    if v < 0.0 {
        return Err(Error::Domain(format!("coefficient a(x) = {v} < 0 at {x:?}")));
    }
    Ok(v)
}

fn validate_family(family: &PhiFamily) -> Result<()> {
    let bad = |msg: String| Err(Error::Input(msg));
    match family {
        PhiFamily::PowerLaw { p } | PhiFamily::PerturbedOrlicz { p, .. } if !(*p > 1.0 && p.is_finite()) => {
            bad(format!("exponent must exceed 1, got {p}"))
        }
        PhiFamily::DoublePhase { p, q, .. } if !(*p > 1.0 && *q >= *p && q.is_finite()) => {
            bad(format!("double phase needs 1 < p <= q, got p = {p}, q = {q}"))
        }
        _ => Ok(()),
    }
}

pub(crate) fn sample_box(lo: [f64; 2], hi: [f64; 2], n: usize) -> Vec<Point> {
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let s = i as f64 / (n - 1) as f64;
            let r = j as f64 / (n - 1) as f64;
            out.push([lo[0] + s * (hi[0] - lo[0]), lo[1] + r * (hi[1] - lo[1])]);
        }
    }
    out
}

fn derive_envelope(family: &PhiFamily, domain: Option<DomainBox>) -> Result<GrowthEnvelope> {
    let (lo, hi) = match domain {
        Some(d) => (d.lo, d.hi),
        None => ([0.0, 0.0], [1.0, 1.0]),
    };
    let pts = sample_box(lo, hi, 65);
    let omega = if family.is_autonomous() {
        HolderModulus::ZERO
    } else {
        DEFAULT_OMEGA
    };
    let range = |e: &Expr| -> Result<(f64, f64)> {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for &x in &pts {
            let v = e.eval(x)?;
            mn = mn.min(v);
            mx = mx.max(v);
        }
        Ok((mn, mx))
    };
    let env = match family {
        PhiFamily::PowerLaw { p } => GrowthEnvelope {
            p: *p,
            q: *p,
            l: 1.0,
            omega,
        },
        PhiFamily::PerturbedOrlicz { a, p } => {
            let (mn, mx) = range(a)?;
            if !(mn > 0.0) {
                return Err(Error::Input(format!(
                    "perturbed Orlicz coefficient must be positive, min sampled value {mn}"
                )));
            }
            GrowthEnvelope {
                p: *p,
                q: *p,
                l: mx.max(1.0 / mn).max(1.0),
                omega,
            }
        }
        PhiFamily::VariableExponent { p } => {
            let (mn, mx) = range(p)?;
            GrowthEnvelope {
                p: mn,
                q: mx,
                l: 1.0,
                omega,
            }
        }
        PhiFamily::DoublePhase { p, q, a } => {
            let (_, mx) = range(a)?;
            GrowthEnvelope {
                p: *p,
                q: *q,
                l: 1.0 + mx.max(0.0),
                omega,
            }
        }
        PhiFamily::Tabulated(t) => {
            let (p, q) = t.exponents();
            GrowthEnvelope {
                p,
                q,
                l: t.value(1.0).max(1.0 / t.value(1.0)).max(1.0),
                omega,
            }
        }
    };
    env.validate()?;
    Ok(env)
}

/// An integrand frozen at one point; cheap to evaluate in inner loops.
#[derive(Debug, Clone)]
pub enum LocalPhi {
    /// `c t^p`
    Power {
        c: f64,
        p: f64,
    },
    /// `t^p + a t^q`
    DoublePhase {
        p: f64,
        q: f64,
        a: f64,
    },
    Table(Arc<PhiTable>),
    Regularized(Arc<RegularizedPhi>),
}

impl LocalPhi {
    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            LocalPhi::Power { c, p } => c * pow(t, *p),
            LocalPhi::DoublePhase { p, q, a } => pow(t, *p) + a * pow(t, *q),
            LocalPhi::Table(tab) => tab.value(t),
            LocalPhi::Regularized(r) => r.value(t),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            LocalPhi::Power { c, p } => c * p * t.powf(p - 1.0),
            LocalPhi::DoublePhase { p, q, a } => p * t.powf(p - 1.0) + a * q * t.powf(q - 1.0),
            LocalPhi::Table(tab) => tab.deriv(t),
            LocalPhi::Regularized(r) => r.deriv(t),
        }
    }

    /// `(value, deriv)` sharing one power evaluation.
    #[inline]
    pub fn value_deriv(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return (0.0, 0.0);
        }
        match self {
            LocalPhi::Power { c, p } => {
                let tp = pow(t, *p);
                (c * tp, c * p * tp / t)
            }
            LocalPhi::DoublePhase { p, q, a } => {
                let tp = pow(t, *p);
                let tq = if *a == 0.0 { 0.0 } else { pow(t, *q) };
                (tp + a * tq, (p * tp + a * q * tq) / t)
            }
            LocalPhi::Table(tab) => (tab.value(t), tab.deriv(t)),
            LocalPhi::Regularized(r) => (r.value(t), r.deriv(t)),
        }
    }

    /// Second derivative for `t > 0`; `+inf` at `t = 0` when it blows up.
    pub fn second(&self, t: f64) -> f64 {
        match self {
            LocalPhi::Power { c, p } => {
                if t <= 0.0 {
                    return if *p < 2.0 {
                        f64::INFINITY
                    } else if *p == 2.0 {
                        2.0 * c
                    } else {
                        0.0
                    };
                }
                c * p * (p - 1.0) * t.powf(p - 2.0)
            }
            LocalPhi::DoublePhase { p, q, a } => {
                if t <= 0.0 {
                    return if *p < 2.0 {
                        f64::INFINITY
                    } else if *p == 2.0 {
                        2.0
                    } else {
                        0.0
                    };
                }
                p * (p - 1.0) * t.powf(p - 2.0) + a * q * (q - 1.0) * t.powf(q - 2.0)
            }
            LocalPhi::Table(tab) => tab.second(t),
            LocalPhi::Regularized(r) => r.second(t),
        }
    }

    /// Derivative divided by `t`, with the `t -> 0` limit where finite.
    pub fn deriv_over_t(&self, t: f64) -> f64 {
        if t > 0.0 {
            return self.deriv(t) / t;
        }
        self.second(0.0)
    }
}

/// `t^e`, avoiding `powf` for small integer exponents.
#[inline]
pub(crate) fn pow(t: f64, e: f64) -> f64 {
    if e == 2.0 {
        t * t
    } else if e == 3.0 {
        t * t * t
    } else if e == e.trunc() && e.abs() <= 16.0 {
        t.powi(e as i32)
    } else {
        t.powf(e)
    }
}

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}
