use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LocalPhi, PhiFunction};
use crate::error::{Error, Result};
use crate::grid::{Ball, Grid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizeOptions {
    /// Table range in `t`.
    pub t_min: f64,
    pub t_max: f64,
    pub points_per_decade: usize,
    /// Kernel half-width in decades of `t`.
    pub half_width: f64,
    pub rtol: f64,
}

impl Default for RegularizeOptions {
    fn default() -> Self {
        RegularizeOptions {
            t_min: 1e-6,
            t_max: 1e6,
            points_per_decade: 32,
            half_width: 0.25,
            rtol: 1e-3,
        }
    }
}

/// Autonomous surrogate on a ball.
///
/// `phi~'` is stored on a uniform log grid and interpolated as a power law in
/// every segment; `phi~` is its exact antiderivative, so value, derivative and
/// second derivative are mutually consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedPhi {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub ball: Ball,
    pub c_cmp: f64,
    pub p: f64,
    pub q: f64,
    log_t0: f64,
    dlog: f64,
    /// Per-segment exponent of `phi~'`.
    mu: Vec<f64>,
}

impl RegularizedPhi {
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.t.len();
        if t < self.t[0] {
            return (usize::MAX, self.p - 1.0);
        }
        if t >= self.t[n - 1] {
            return (n - 1, self.q - 1.0);
        }
        let i = (((t.ln() - self.log_t0) / self.dlog).floor() as usize).min(n - 2);
        // guard rounding at segment ends
        let i = if t < self.t[i] {
            i - 1
        } else if t >= self.t[i + 1] {
            i + 1
        } else {
            i
        };
        (i, self.mu[i])
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (i, m) = self.locate(t);
        if i == usize::MAX {
            return self.value[0] * (t / self.t[0]).powf(m + 1.0);
        }
        let ti = self.t[i];
        self.value[i] + self.d1[i] * ti / (m + 1.0) * ((t / ti).powf(m + 1.0) - 1.0)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (i, m) = self.locate(t);
        let i = if i == usize::MAX { 0 } else { i };
        self.d1[i] * (t / self.t[i]).powf(m)
    }

    pub fn second(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return if self.p < 2.0 { f64::INFINITY } else { 0.0 };
        }
        let (_, m) = self.locate(t);
        m * self.deriv(t) / t
    }

    pub fn local(&self) -> LocalPhi {
        LocalPhi::Regularized(std::sync::Arc::new(self.clone()))
    }

    /// Largest deviation of `t phi~'' / phi~'` outside `[p - 1, q - 1]` over the table.
    pub fn slope_violation(&self) -> f64 {
        self.t
            .iter()
            .zip(self.d1.iter().zip(&self.d2))
            .map(|(t, (a, b))| {
                let e = t * b / a;
                (self.p - 1.0 - e).max(e - (self.q - 1.0))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Build `phi~` on `ball` from the lower envelope of `phi_t` over the grid
/// nodes in the doubled ball, mollified geometrically in `log t`.
pub fn regularize(phi: &PhiFunction, grid: &Grid, ball: &Ball, opts: &RegularizeOptions) -> Result<RegularizedPhi> {
    let env = phi.envelope();
    let (p, q) = (env.p, env.q);
    let big = ball.scaled(2.0);
    let nodes: Vec<Point> = grid
        .nodes_in_ball(&big)
        .into_iter()
        .map(|k| grid.node_coord(k))
        .collect();
    if nodes.is_empty() {
        return Err(Error::DegenerateBall {
            center: ball.center,
            radius: ball.radius,
        });
    }
    let loc: Vec<LocalPhi> = nodes.iter().map(|&x| phi.local(x)).collect::<Result<_>>()?;

    let ppd = opts.points_per_decade.max(4);
    let dlog = std::f64::consts::LN_10 / ppd as f64;
    let half = ((opts.half_width * ppd as f64).round() as usize).max(1);
    let log_lo = opts.t_min.ln();
    let n = ((opts.t_max.ln() - log_lo) / dlog).round() as usize + 1;
    if n < 3 {
        return Err(Error::Input("regularization table too short".into()));
    }
    // extended grid with `half` margin points on each side
    let ext: Vec<f64> = (0..n + 2 * half)
        .map(|i| (log_lo + (i as f64 - half as f64) * dlog).exp())
        .collect();
    let log_d: Vec<f64> = ext
        .par_iter()
        .map(|&t| loc.iter().map(|l| l.deriv(t)).fold(f64::INFINITY, f64::min).ln())
        .collect();
    if log_d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Regularization(
            "derivative envelope vanishes or overflows on the table".into(),
        ));
    }

    let weights: Vec<f64> = {
        let raw: Vec<f64> = (0..=2 * half)
            .map(|k| bump((k as f64 - half as f64) / (half as f64 + 1.0)))
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / s).collect()
    };
    let log_m: Vec<f64> = (0..n)
        .map(|i| weights.iter().enumerate().map(|(k, w)| w * log_d[i + k]).sum())
        .collect();

    let t: Vec<f64> = (0..n).map(|i| ext[i + half]).collect();
    let d1: Vec<f64> = log_m.iter().map(|v| v.exp()).collect();
    let mu: Vec<f64> = (0..n - 1).map(|i| (log_m[i + 1] - log_m[i]) / dlog).collect();
    let node_slope = |i: usize| -> f64 {
        if i == 0 {
            mu[0]
        } else if i == n - 1 {
            mu[n - 2]
        } else {
            0.5 * (mu[i - 1] + mu[i])
        }
    };
    let d2: Vec<f64> = (0..n).map(|i| node_slope(i) * d1[i] / t[i]).collect();

    let mut value = Vec::with_capacity(n);
    value.push(d1[0] * t[0] / p);
    for i in 0..n - 1 {
        let m = mu[i];
        let seg = d1[i] * t[i] / (m + 1.0) * ((t[i + 1] / t[i]).powf(m + 1.0) - 1.0);
        value.push(value[i] + seg);
    }

    let mut reg = RegularizedPhi {
        t,
        value,
        d1,
        d2,
        ball: *ball,
        c_cmp: 0.0,
        p,
        q,
        log_t0: log_lo,
        dlog,
        mu,
    };

    let tol = opts.rtol;
    let viol = reg.slope_violation();
    if viol > tol {
        return Err(Error::Regularization(format!(
            "t phi~''/phi~' leaves [p-1, q-1] by {viol:.3e}; check (inc)/(dec) of phi_t on the ball"
        )));
    }
    let convex = reg
        .value
        .windows(3)
        .zip(reg.t.windows(3))
        .map(|(v, s)| {
            let l = (v[1] - v[0]) / (s[1] - s[0]);
            let r = (v[2] - v[1]) / (s[2] - s[1]);
            (l - r) / l.abs().max(f64::MIN_POSITIVE)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    if convex > tol {
        return Err(Error::Regularization(format!(
            "table is not convex (relative defect {convex:.3e})"
        )));
    }

    let inner: Vec<&LocalPhi> = nodes
        .iter()
        .zip(&loc)
        .filter(|(x, _)| ball.contains(**x))
        .map(|(_, l)| l)
        .collect();
    let cmp_set: Vec<&LocalPhi> = if inner.is_empty() { loc.iter().collect() } else { inner };
    reg.c_cmp = reg
        .t
        .par_iter()
        .zip(reg.value.par_iter())
        .map(|(&s, &v)| cmp_set.iter().map(|l| v / (l.value(s) + 1.0)).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::orlicz::{DomainBox, PhiFamily};
    use approx::assert_relative_eq;

    fn grid() -> Grid {
        Grid::unit_square(5)
    }

    #[test]
    fn power_law_is_its_own_regularization() {
        let pl = PhiFunction::power_law(2.5).unwrap();
        let reg = regularize(&pl, &grid(), &Ball::new([0.5, 0.5], 0.2), &RegularizeOptions::default()).unwrap();
        for s in [1e-3, 0.3, 1.0, 7.0, 1e3] {
            assert_relative_eq!(reg.value(s), s.powf(2.5), max_relative = 1e-9);
            assert_relative_eq!(reg.deriv(s), 2.5 * s.powf(1.5), max_relative = 1e-9);
        }
        assert!(reg.c_cmp <= 1.0 + 1e-9);
    }

    #[test]
    fn double_phase_on_small_ball() {
        let dom = DomainBox {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        };
        let dp = PhiFunction::double_phase(2.0, 3.0, "abs(x1 - 0.5)", Some(dom)).unwrap();
        let ball = Ball::new([0.5, 0.5], 0.25);
        let reg = regularize(&dp, &grid(), &ball, &RegularizeOptions::default()).unwrap();
        assert!(reg.slope_violation() <= 1e-3);
        assert!(reg.c_cmp.is_finite() && reg.c_cmp > 0.0);
        let g = grid();
        for k in g.nodes_in_ball(&ball) {
            let x = g.node_coord(k);
            for &s in reg.t.iter().step_by(17) {
                assert!(reg.value(s) <= reg.c_cmp * (dp.eval(x, s).unwrap() + 1.0) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn variable_exponent_crossing_is_smoothed() {
        let dom = DomainBox {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        };
        let ve = PhiFunction::new(
            PhiFamily::VariableExponent {
                p: Expr::parse("2 + x1").unwrap(),
            },
            None,
            Some(dom),
        )
        .unwrap();
        let reg = regularize(&ve, &grid(), &Ball::new([0.5, 0.5], 0.2), &RegularizeOptions::default()).unwrap();
        assert!(reg.slope_violation() <= 1e-3);
        // exact antiderivative: value differences match integrated derivative
        let (a, b) = (0.8, 1.3);
        let m = 2000;
        let h = (b - a) / m as f64;
        let integral: f64 = (0..m).map(|i| reg.deriv(a + (i as f64 + 0.5) * h) * h).sum();
        assert_relative_eq!(reg.value(b) - reg.value(a), integral, max_relative = 1e-6);
    }
}
