use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Autonomous integrand given by samples `(t_i, phi_i)`, interpolated linearly
/// in log-log coordinates and extended by `t^p` below and `t^q` above the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct PhiTable {
    t: Vec<f64>,
    phi: Vec<f64>,
    p: f64,
    q: f64,
    log_t: Vec<f64>,
    log_phi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    t: Vec<f64>,
    phi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
}

impl TryFrom<RawTable> for PhiTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        PhiTable::new(raw.t, raw.phi, raw.p, raw.q)
    }
}

impl From<PhiTable> for RawTable {
    fn from(t: PhiTable) -> Self {
        RawTable {
            t: t.t,
            phi: t.phi,
            p: Some(t.p),
            q: Some(t.q),
        }
    }
}

impl PhiTable {
    /// Extrapolation exponents default to the extreme secant slopes of the table.
    pub fn new(t: Vec<f64>, phi: Vec<f64>, p: Option<f64>, q: Option<f64>) -> Result<Self> {
        if t.len() != phi.len() || t.len() < 2 {
            return Err(Error::Input(
                "table needs at least two (t, phi) pairs of equal length".into(),
            ));
        }
        if t.iter().chain(&phi).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Input("table entries must be finite and positive".into()));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("table abscissae must be strictly increasing".into()));
        }
        if phi.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Input("table values must be nondecreasing".into()));
        }
        let log_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let log_phi: Vec<f64> = phi.iter().map(|v| v.ln()).collect();
        let slopes: Vec<f64> = (0..t.len() - 1)
            .map(|i| (log_phi[i + 1] - log_phi[i]) / (log_t[i + 1] - log_t[i]))
            .collect();
        let smin = slopes.iter().copied().fold(f64::INFINITY, f64::min);
        let smax = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p = p.unwrap_or(smin);
        let q = q.unwrap_or(smax);
        if !(p > 1.0 && q >= p && q.is_finite()) {
            return Err(Error::Input(format!(
                "table growth exponents must satisfy 1 < p <= q, got {p}, {q}"
            )));
        }
        Ok(PhiTable {
            t,
            phi,
            p,
            q,
            log_t,
            log_phi,
        })
    }

    pub fn from_fn(t: &[f64], f: impl Fn(f64) -> f64, p: Option<f64>, q: Option<f64>) -> Result<Self> {
        PhiTable::new(t.to_vec(), t.iter().map(|&s| f(s)).collect(), p, q)
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.p, self.q)
    }

    /// Segment index and local log-log slope for `t > 0`.
    fn segment(&self, t: f64) -> (f64, f64, f64) {
        let n = self.t.len();
        if t < self.t[0] {
            return (self.log_t[0], self.log_phi[0], self.p);
        }
        if t >= self.t[n - 1] {
            return (self.log_t[n - 1], self.log_phi[n - 1], self.q);
        }
        let i = self.t.partition_point(|&s| s <= t) - 1;
        let m = (self.log_phi[i + 1] - self.log_phi[i]) / (self.log_t[i + 1] - self.log_t[i]);
        (self.log_t[i], self.log_phi[i], m)
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (lt, lp, m) = self.segment(t);
        (lp + m * (t.ln() - lt)).exp()
    }

    /// Right derivative.
    pub fn deriv(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (_, _, m) = self.segment(t);
        m * self.value(t) / t
    }

    pub fn second(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return if self.p < 2.0 { f64::INFINITY } else { 0.0 };
        }
        let (_, _, m) = self.segment(t);
        m * (m - 1.0) * self.value(t) / (t * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orlicz::log_space;
    use approx::assert_relative_eq;

    #[test]
    fn reproduces_power_law_and_extrapolates() {
        let t = log_space(0.1, 10.0, 21);
        let tab = PhiTable::from_fn(&t, |s| s.powf(2.5), None, None).unwrap();
        assert_relative_eq!(tab.exponents().0, 2.5, max_relative = 1e-12);
        for s in [0.01, 0.37, 1.0, 4.2, 100.0] {
            assert_relative_eq!(tab.value(s), s.powf(2.5), max_relative = 1e-12);
            assert_relative_eq!(tab.deriv(s), 2.5 * s.powf(1.5), max_relative = 1e-12);
        }
    }

    #[test]
    fn monotone_between_nodes() {
        let t = vec![0.5, 1.0, 2.0, 4.0];
        let tab = PhiTable::new(t, vec![0.2, 1.0, 5.0, 30.0], None, None).unwrap();
        let grid = log_space(0.01, 100.0, 500);
        for w in grid.windows(2) {
            assert!(tab.value(w[1]) >= tab.value(w[0]));
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(PhiTable::new(vec![1.0], vec![1.0], None, None).is_err());
        assert!(PhiTable::new(vec![1.0, 0.5], vec![1.0, 2.0], None, None).is_err());
        assert!(PhiTable::new(vec![1.0, 2.0], vec![1.0, 1.5], None, None).is_err());
        let json = r#"{"t":[1,2,4],"phi":[1,4,16]}"#;
        let tab: PhiTable = serde_json::from_str(json).unwrap();
        assert_relative_eq!(tab.value(3.0), 9.0, max_relative = 1e-12);
    }
}
