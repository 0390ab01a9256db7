use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orlicz::{LocalPhi, PhiFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exact1dKind {
    Zero,
    Linear,
    /// Slope `slope_star` away from a dead interval `[lo + m_left, hi - m_right]`.
    Cone {
        m_left: f64,
        m_right: f64,
    },
}

/// Exact 1D minimizer on `[lo, hi]` for an autonomous integrand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exact1d {
    pub kind: Exact1dKind,
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
    pub slope_star: f64,
    /// `|g(s) s - G(s) - lambda|` at `slope_star`.
    pub slope_residual: f64,
    pub energy: f64,
    /// Measure of the positivity set.
    pub positive_length: f64,
}

impl Exact1d {
    pub fn eval(&self, x: f64) -> f64 {
        let len = self.hi - self.lo;
        match self.kind {
            Exact1dKind::Zero => 0.0,
            Exact1dKind::Linear => self.a + (self.b - self.a) * (x - self.lo) / len,
            Exact1dKind::Cone { m_left, m_right } => {
                let left = if m_left > 0.0 {
                    self.a * (1.0 - (x - self.lo) / m_left)
                } else {
                    0.0
                };
                let right = if m_right > 0.0 {
                    self.b * (1.0 - (self.hi - x) / m_right)
                } else {
                    0.0
                };
                left.max(right).max(0.0)
            }
        }
    }

    /// Ends of the dead interval, when there is one.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            Exact1dKind::Cone { m_left, m_right } => {
                let mut out = Vec::new();
                if m_left > 0.0 {
                    out.push(self.lo + m_left);
                }
                if m_right > 0.0 {
                    out.push(self.hi - m_right);
                }
                out
            }
            _ => Vec::new(),
        }
    }

    /// Largest slope magnitude of the minimizer.
    pub fn max_slope(&self) -> f64 {
        match self.kind {
            Exact1dKind::Zero => 0.0,
            Exact1dKind::Linear => (self.b - self.a).abs() / (self.hi - self.lo),
            Exact1dKind::Cone { .. } => self.slope_star,
        }
    }
}

/// The slope `s > 0` with `G'(s) s - G(s) = lambda`, by bisection.
pub fn free_boundary_slope(g: &LocalPhi, lambda: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::Input(format!("lambda must be positive, got {lambda}")));
    }
    let h = |s: f64| g.deriv(s) * s - g.value(s) - lambda;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut guard = 0;
    while h(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(Error::Solver("free-boundary slope not bracketed".into()));
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
    Ok((s, h(s).abs()))
}

/// Global minimizer of `int_lo^hi G(|u'|) + lambda chi_{u>0}` with `u(lo) = a`,
/// `u(hi) = b`, among linear profiles and profiles with a dead interval.
pub fn solve_1d_exact(phi: &PhiFunction, lambda: f64, lo: f64, hi: f64, a: f64, b: f64) -> Result<Exact1d> {
    if a < 0.0 || b < 0.0 {
        return Err(Error::Domain(format!(
            "boundary values must be nonnegative, got a = {a}, b = {b}"
        )));
    }
    if !(hi > lo) {
        return Err(Error::Input("empty interval".into()));
    }
    if !phi.is_autonomous() {
        return Err(Error::Precondition(
            "the 1D oracle needs an autonomous integrand".into(),
        ));
    }
    let g = phi.local([lo, 0.0])?;
    let (s, res) = free_boundary_slope(&g, lambda)?;
    let len = hi - lo;
    let base = Exact1d {
        kind: Exact1dKind::Zero,
        lo,
        hi,
        a,
        b,
        slope_star: s,
        slope_residual: res,
        energy: 0.0,
        positive_length: 0.0,
    };
    if a == 0.0 && b == 0.0 {
        return Ok(base);
    }
    let mut candidates = Vec::new();
    let slope = (b - a).abs() / len;
    candidates.push(Exact1d {
        kind: Exact1dKind::Linear,
        energy: g.value(slope) * len + lambda * len,
        positive_length: len,
        ..base.clone()
    });
    let (m1, m2) = (a / s, b / s);
    if m1 + m2 <= len {
        let per_unit = g.value(s) + lambda;
        candidates.push(Exact1d {
            kind: Exact1dKind::Cone {
                m_left: m1,
                m_right: m2,
            },
            energy: per_unit * (m1 + m2),
            positive_length: m1 + m2,
            ..base.clone()
        });
    }
    let best = candidates
        .into_iter()
        .reduce(|x, y| {
            let tie = (x.energy - y.energy).abs() <= 1e-12 * x.energy.abs().max(y.energy.abs());
            if tie {
                if y.positive_length < x.positive_length {
                    y
                } else {
                    x
                }
            } else if y.energy < x.energy {
                y
            } else {
                x
            }
        })
        .expect("nonempty candidate list");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent brute force: energy of two-sided profiles on a breakpoint
    /// grid, refined by golden-section search on the best cell.
    fn brute(phi: &PhiFunction, lambda: f64, a: f64, b: f64) -> f64 {
        let g = phi.local([0.0, 0.0]).unwrap();
        // profile: linear from a to 0 on [0, x1], zero on [x1, x2], linear from 0 to b on [x2, 1]
        let energy = |x1: f64, x2: f64| -> f64 {
            let mut e = 0.0;
            if x1 > 0.0 {
                e += (g.value(a / x1) + if a > 0.0 { lambda } else { 0.0 }) * x1;
            } else if a > 0.0 {
                return f64::INFINITY;
            }
            if 1.0 - x2 > 0.0 {
                e += (g.value(b / (1.0 - x2)) + if b > 0.0 { lambda } else { 0.0 }) * (1.0 - x2);
            } else if b > 0.0 {
                return f64::INFINITY;
            }
            e
        };
        let lin = g.value((b - a).abs()) + lambda;
        let n = 400;
        let mut best = lin;
        for i in 0..=n {
            for j in i..=n {
                let (x1, x2) = (i as f64 / n as f64, j as f64 / n as f64);
                best = best.min(energy(x1, x2));
            }
        }
        best
    }

    #[test]
    fn documented_cases() {
        let g2 = PhiFunction::power_law(2.0).unwrap();
        let sol = solve_1d_exact(&g2, 1.0, 0.0, 1.0, 0.0, 0.5).unwrap();
        assert!(matches!(sol.kind, Exact1dKind::Cone { .. }));
        assert_abs_diff_eq!(sol.slope_star, 1.0, epsilon = 1e-12);
        assert!(sol.slope_residual <= 1e-10);
        assert_abs_diff_eq!(sol.energy, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.breakpoints()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.eval(0.75), 0.25, epsilon = 1e-12);
        assert!((sol.energy - brute(&g2, 1.0, 0.0, 0.5)).abs() < 1e-3);

        let lin = solve_1d_exact(&g2, 1.0, 0.0, 1.0, 0.0, 2.0).unwrap();
        assert_eq!(lin.kind, Exact1dKind::Linear);
        assert_abs_diff_eq!(lin.energy, 5.0, epsilon = 1e-12);

        let z = solve_1d_exact(&g2, 3.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(z.kind, Exact1dKind::Zero);
        assert_eq!(z.energy, 0.0);
        assert!(matches!(
            solve_1d_exact(&g2, 1.0, 0.0, 1.0, -0.1, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn agrees_with_brute_force() {
        for (p, lambda, a, b) in [
            (2.0, 1.0, 0.2, 0.3),
            (3.0, 0.5, 0.0, 0.9),
            (1.5, 2.0, 0.4, 0.1),
            (2.5, 0.2, 0.7, 0.6),
        ] {
            let phi = PhiFunction::power_law(p).unwrap();
            let sol = solve_1d_exact(&phi, lambda, 0.0, 1.0, a, b).unwrap();
            let bf = brute(&phi, lambda, a, b);
            assert!(sol.energy <= bf + 1e-12, "p={p}: {} vs {bf}", sol.energy);
            assert!(bf - sol.energy <= 2e-2 * bf, "p={p}: {} vs {bf}", sol.energy);
            // power law: g(s)s - G(s) = (p-1) s^p
            assert_abs_diff_eq!((p - 1.0) * sol.slope_star.powf(p), lambda, epsilon = 1e-10);
        }
    }
}
