use serde::{Deserialize, Serialize};

use super::{PhiFunction, PhiTable};
use crate::error::{Error, Result};
use crate::grid::Point;

/// `phi_j(x, t) = phi(x0 + r x, sigma t) / phi(x0, sigma)`.
#[derive(Debug, Clone)]
pub struct BlowupPhi {
    pub base: PhiFunction,
    pub center: Point,
    pub r: f64,
    pub sigma: f64,
    pub normalizer: f64,
}

pub fn blowup_phi(phi: &PhiFunction, center: Point, r: f64, sigma: f64) -> Result<BlowupPhi> {
    if !(r > 0.0) || !(sigma > 0.0) {
        return Err(Error::Input(format!(
            "blow-up needs r > 0 and sigma > 0, got r = {r}, sigma = {sigma}"
        )));
    }
    let normalizer = phi.eval(center, sigma)?;
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::DegenerateNormalizer { sigma });
    }
    Ok(BlowupPhi {
        base: phi.clone(),
        center,
        r,
        sigma,
        normalizer,
    })
}

impl BlowupPhi {
    pub fn map_point(&self, x: Point) -> Point {
        [self.center[0] + self.r * x[0], self.center[1] + self.r * x[1]]
    }

    pub fn eval(&self, x: Point, t: f64) -> Result<f64> {
        Ok(self.base.eval(self.map_point(x), self.sigma * t)? / self.normalizer)
    }

    pub fn eval_deriv(&self, x: Point, t: f64) -> Result<f64> {
        Ok(self.sigma * self.base.eval_deriv(self.map_point(x), self.sigma * t)? / self.normalizer)
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.base.envelope().p, self.base.envelope().q)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecessionReport {
    pub sigmas: Vec<f64>,
    /// `sup_t |phibar_{j+1} - phibar_j|` on the sample grid.
    pub increments: Vec<f64>,
    pub converged: bool,
    pub convex: bool,
    /// `(inc)_{p-1}` and `(dec)_{q-1}` of the finite-difference derivative.
    pub derivative_bounds: bool,
    /// `min phibar / min(t^p, t^q)` and `max phibar / max(t^p, t^q)` over all iterates.
    pub lower_ratio: f64,
    pub upper_ratio: f64,
    pub limit: PhiTable,
}

/// Tabulate `phibar_j(t) = phi(x0, t sigma_j) / phi(x0, sigma_j)` and report
/// Cauchy increments; the last iterate is returned as the limit.
pub fn recession_limit(
    phi: &PhiFunction,
    center: Point,
    sigmas: &[f64],
    t: &[f64],
    tol: f64,
) -> Result<RecessionReport> {
    if sigmas.is_empty() || t.len() < 3 {
        return Err(Error::Input("need at least one sigma and three t samples".into()));
    }
    if sigmas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("sigma sequence must be increasing".into()));
    }
    let (p, q) = (phi.envelope().p, phi.envelope().q);
    let mut prev: Option<Vec<f64>> = None;
    let mut increments = Vec::new();
    let mut lower_ratio = f64::INFINITY;
    let mut upper_ratio: f64 = 0.0;
    let mut last = Vec::new();
    for &s in sigmas {
        let b = blowup_phi(phi, center, 1.0, s)?;
        let l = phi.local(center)?;
        let vals: Vec<f64> = t.iter().map(|&x| l.value(x * s) / b.normalizer).collect();
        for (&x, &v) in t.iter().zip(&vals) {
            let (tp, tq) = (x.powf(p), x.powf(q));
            lower_ratio = lower_ratio.min(v / tp.min(tq));
            upper_ratio = upper_ratio.max(v / tp.max(tq));
        }
        if let Some(pv) = &prev {
            increments.push(pv.iter().zip(&vals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        prev = Some(vals.clone());
        last = vals;
    }
    let scale = last.iter().copied().fold(1.0, f64::max);
    let converged = increments.last().is_none_or(|&d| d <= tol * scale);

    let slopes: Vec<f64> = (0..t.len() - 1)
        .map(|i| (last[i + 1] - last[i]) / (t[i + 1] - t[i]))
        .collect();
    let convex = slopes.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    let mids: Vec<f64> = (0..t.len() - 1).map(|i| (t[i] * t[i + 1]).sqrt()).collect();
    let rtol = 1e-6;
    let mut derivative_bounds = true;
    for i in 0..slopes.len() - 1 {
        let lo_a = slopes[i] / mids[i].powf(p - 1.0);
        let lo_b = slopes[i + 1] / mids[i + 1].powf(p - 1.0);
        let hi_a = slopes[i] / mids[i].powf(q - 1.0);
        let hi_b = slopes[i + 1] / mids[i + 1].powf(q - 1.0);
        if lo_b < lo_a * (1.0 - rtol) || hi_b > hi_a * (1.0 + rtol) {
            derivative_bounds = false;
        }
    }
    let limit = PhiTable::new(t.to_vec(), last, Some(p), Some(q))?;
    Ok(RecessionReport {
        sigmas: sigmas.to_vec(),
        increments,
        converged,
        convex,
        derivative_bounds,
        lower_ratio,
        upper_ratio,
        limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::orlicz::{log_space, DomainBox, PhiFamily};
    use approx::assert_relative_eq;

    #[test]
    fn power_law_is_scale_invariant() {
        let pl = PhiFunction::power_law(2.7).unwrap();
        let b = blowup_phi(&pl, [0.0, 0.0], 0.125, 37.0).unwrap();
        for t in [0.0, 0.2, 1.0, 5.0] {
            assert_relative_eq!(b.eval([0.3, -0.4], t).unwrap(), t.powf(2.7), max_relative = 1e-14);
        }
        assert_eq!(b.eval([0.0, 0.0], 1.0).unwrap(), 1.0);
        let rep = recession_limit(&pl, [0.0, 0.0], &[1.0, 2.0, 4.0], &log_space(0.1, 10.0, 20), 1e-9).unwrap();
        assert!(rep.increments.iter().all(|&d| d < 1e-12));
        assert!(rep.converged && rep.convex && rep.derivative_bounds);
    }

    #[test]
    fn variable_exponent_freezes_at_center() {
        let dom = DomainBox {
            lo: [-1.0, -1.0],
            hi: [1.0, 1.0],
        };
        let ve = PhiFunction::new(
            PhiFamily::VariableExponent {
                p: Expr::parse("2 + 0.5 * abs(x1)").unwrap(),
            },
            None,
            Some(dom),
        )
        .unwrap();
        let t = 3.0;
        let mut last = f64::INFINITY;
        for j in 1..20 {
            let b = blowup_phi(&ve, [0.0, 0.0], 0.5f64.powi(j), 1.0).unwrap();
            let err = (b.eval([0.8, 0.0], t).unwrap() - t * t).abs();
            assert!(err <= last);
            last = err;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn degenerate_normalizer() {
        let tab = PhiTable::new(vec![1.0, 2.0], vec![1.0, 4.0], None, None).unwrap();
        let phi = PhiFunction::new(PhiFamily::Tabulated(tab), None, None).unwrap();
        assert!(blowup_phi(&phi, [0.0, 0.0], 1.0, 0.0).is_err());
        assert!(matches!(
            blowup_phi(&phi, [0.0, 0.0], 1.0, 1e-300),
            Err(Error::DegenerateNormalizer { .. })
        ));
    }

    #[test]
    fn double_phase_recession_is_the_top_power() {
        let dom = DomainBox {
            lo: [-1.0, -1.0],
            hi: [1.0, 1.0],
        };
        let dp = PhiFunction::double_phase(2.0, 3.0, "0.5 + abs(x1)", Some(dom)).unwrap();
        let sig: Vec<f64> = (0..=40).map(|j| 2f64.powi(j)).collect();
        let t = log_space(0.1, 10.0, 41);
        let rep = recession_limit(&dp, [0.0, 0.0], &sig, &t, 1e-6).unwrap();
        let err = t
            .iter()
            .map(|&s| (rep.limit.value(s) - s.powi(3)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert!(rep.converged && rep.convex && rep.derivative_bounds);
        assert!(rep.lower_ratio >= 0.99 / 1.5 && rep.upper_ratio <= 1.0 + 1e-12);
    }
}
