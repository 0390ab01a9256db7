use serde::{Deserialize, Serialize};

use super::assembly::{Assembly, Scratch, Smoothing};
use crate::error::{Error, Result};
use crate::grid::{embed, restrict, Ball, Field};
use crate::orlicz::{LocalPhi, RegularizedPhi};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirichletOptions {
    /// Stop when the gradient norm falls below `gtol` times its initial value
    /// (or that of a flat guess, if larger).
    pub gtol: f64,
    pub max_iter: usize,
    /// Gradient regularization, relative to data oscillation / box size.
    pub delta: f64,
    pub multilevel: bool,
    pub coarsest_cells: usize,
}

impl Default for DirichletOptions {
    fn default() -> Self {
        DirichletOptions {
            gtol: 1e-10,
            max_iter: 20_000,
            delta: 1e-8,
            multilevel: true,
            coarsest_cells: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Replacement {
    pub field: Field,
    pub iterations: usize,
    /// Final gradient norm relative to the initial one.
    pub residual: f64,
    pub converged: bool,
}

/// Minimize `sum phi(|grad w|) |c|` with `w` fixed on the field's masked nodes.
/// The result is clamped to the range of the fixed nodes adjacent to free ones.
pub fn solve_dirichlet(phi: &LocalPhi, field: &Field, opts: &DirichletOptions) -> Result<Replacement> {
    let grid = field.grid();
    let fixed = field.fixed();
    let free: Vec<usize> = (0..fixed.len()).filter(|&k| !fixed[k]).collect();
    let (lo, hi) = boundary_range(field);
    let mut v = field.values().to_vec();
    if free.is_empty() || !lo.is_finite() {
        return Ok(Replacement {
            field: field.clone(),
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }

    if opts.multilevel {
        if let Some(coarse) = grid.coarsen(1) {
            if coarse.cell_counts()[0] >= opts.coarsest_cells
                && (grid.dim() == 1 || coarse.cell_counts()[1] >= opts.coarsest_cells)
            {
                let cf = field.inject(&coarse)?;
                if cf.fixed().iter().any(|b| !b) {
                    let sol = solve_dirichlet(phi, &cf, opts)?;
                    for &k in &free {
                        v[k] = sol.field.at(grid.node_coord(k));
                    }
                }
            }
        }
    }

    let extent = (0..grid.dim()).map(|a| grid.hi()[a] - grid.lo()[a]).fold(0.0, f64::max);
    let osc = (hi - lo).max(lo.abs().max(hi.abs()) * 1e-12).max(f64::MIN_POSITIVE);
    let sm = Smoothing {
        eps: 0.0,
        delta: opts.delta * osc / extent,
    };
    let asm = Assembly::new(grid.clone(), vec![phi.clone(); grid.num_cells()], 0.0);
    // gradient scale of a flat guess, so that an exact initial guess is not
    // measured against its own roundoff
    let mut flat = v.clone();
    for &k in &free {
        flat[k] = 0.5 * (lo + hi);
    }
    let mut g = vec![0.0; v.len()];
    asm.energy_grad(&flat, fixed, &sm, &mut g, &mut Scratch::default());
    let g_flat = dot(&g, &g).sqrt();
    let (iterations, residual, converged) = ncg(&asm, &mut v, fixed, &sm, g_flat, opts);
    for &k in &free {
        v[k] = v[k].clamp(lo, hi);
    }
    Ok(Replacement {
        field: Field::new(grid.clone(), v)?.with_mask(fixed.to_vec())?,
        iterations,
        residual,
        converged,
    })
}

/// Range of the fixed nodes adjacent (8-neighbourhood) to free nodes.
fn boundary_range(field: &Field) -> (f64, f64) {
    let g = field.grid();
    let n = g.n();
    let fixed = field.fixed();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..fixed.len() {
        if fixed[k] {
            continue;
        }
        let (i, j) = g.node_ij(k);
        let jr = if g.dim() == 2 {
            j.saturating_sub(1)..=(j + 1).min(n[1] - 1)
        } else {
            0..=0
        };
        for jj in jr {
            for ii in i.saturating_sub(1)..=(i + 1).min(n[0] - 1) {
                let m = g.node_index(ii, jj);
                if fixed[m] {
                    lo = lo.min(field.values()[m]);
                    hi = hi.max(field.values()[m]);
                }
            }
        }
    }
    (lo, hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Polak-Ribiere+ nonlinear conjugate gradients with a secant line search on
/// the directional derivative.
/// Stops once the gradient norm is below `gtol` times the larger of its
/// initial value and `g_ref`.
fn ncg(
    asm: &Assembly,
    v: &mut [f64],
    fixed: &[bool],
    sm: &Smoothing,
    g_ref: f64,
    opts: &DirichletOptions,
) -> (usize, f64, bool) {
    let n = v.len();
    let mut scratch = Scratch::default();
    let mut g = vec![0.0; n];
    let mut g_try = vec![0.0; n];
    let mut x_try = vec![0.0; n];
    asm.energy_grad(v, fixed, sm, &mut g, &mut scratch);
    let gnorm0 = dot(&g, &g).sqrt();
    if gnorm0 == 0.0 {
        return (0, 0.0, true);
    }
    let g0 = gnorm0.max(g_ref);
    let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut gg = gnorm0 * gnorm0;
    let mut alpha_prev: Option<f64> = None;
    let mut it = 0;
    let mut gnorm = gnorm0;
    while it < opts.max_iter {
        if gnorm <= opts.gtol * g0 {
            return (it, gnorm / g0, true);
        }
        it += 1;
        let mut s0 = dot(&g, &d);
        if s0 >= 0.0 {
            for k in 0..n {
                d[k] = -g[k];
            }
            s0 = -gg;
        }
        let dmax = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        // secant search for a zero of s(a) = grad E(v + a d) . d
        let mut a_lo = 0.0;
        let mut s_lo = s0;
        let mut a = alpha_prev.unwrap_or(1e-3 * vmax / dmax);
        let mut a_hi = f64::INFINITY;
        let mut s_hi = f64::NAN;
        let mut accepted = None;
        for _ in 0..40 {
            for k in 0..n {
                x_try[k] = v[k] + a * d[k];
            }
            asm.energy_grad(&x_try, fixed, sm, &mut g_try, &mut scratch);
            let s = dot(&g_try, &d);
            if s.abs() <= 0.1 * s0.abs() {
                accepted = Some(a);
                break;
            }
            if s < 0.0 {
                a_lo = a;
                s_lo = s;
            } else {
                a_hi = a;
                s_hi = s;
            }
            a = if a_hi.is_finite() {
                let sec = a_lo - s_lo * (a_hi - a_lo) / (s_hi - s_lo);
                if sec > a_lo && sec < a_hi && sec.is_finite() {
                    sec
                } else {
                    0.5 * (a_lo + a_hi)
                }
            } else {
                let sec = a_lo - s_lo * (a - 0.0) / (s - s0).max(f64::MIN_POSITIVE);
                if s > s0 && sec.is_finite() {
                    sec.min(10.0 * a).max(2.0 * a)
                } else {
                    4.0 * a
                }
            };
        }
        let Some(a) = accepted.or((a_lo > 0.0).then_some(a_lo)) else {
            return (it, gnorm / g0, false);
        };
        if accepted.is_none() {
            for k in 0..n {
                x_try[k] = v[k] + a * d[k];
            }
            asm.energy_grad(&x_try, fixed, sm, &mut g_try, &mut scratch);
        }
        alpha_prev = Some(a);
        v.copy_from_slice(&x_try);
        let gg_new = dot(&g_try, &g_try);
        let beta = ((gg_new - dot(&g_try, &g)) / gg).max(0.0);
        for k in 0..n {
            d[k] = -g_try[k] + beta * d[k];
        }
        std::mem::swap(&mut g, &mut g_try);
        gg = gg_new;
        gnorm = gg.sqrt();
    }
    (it, gnorm / g0, gnorm <= opts.gtol * g0)
}

/// Replace `u` inside `ball` by the minimizer of the regularized energy with
/// `u`'s values outside the ball.
pub fn harmonic_replacement(
    reg: &RegularizedPhi,
    u: &Field,
    ball: &Ball,
    opts: &DirichletOptions,
) -> Result<Replacement> {
    let sub = restrict(u, ball, 8)?;
    if sub.field.fixed().iter().all(|&b| b) {
        return Err(Error::DegenerateBall {
            center: ball.center,
            radius: ball.radius,
        });
    }
    let sol = solve_dirichlet(&reg.local(), &sub.field, opts)?;
    let mut out = u.clone();
    let solved = crate::grid::SubField {
        field: sol.field,
        offset: sub.offset,
    };
    embed(&solved, &mut out)?;
    Ok(Replacement {
        field: out,
        iterations: sol.iterations,
        residual: sol.residual,
        converged: sol.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::orlicz::{regularize, PhiFunction, RegularizeOptions};

    fn reg_p2(g: &Grid, ball: &Ball) -> RegularizedPhi {
        regularize(
            &PhiFunction::power_law(2.0).unwrap(),
            g,
            ball,
            &RegularizeOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn constant_and_linear_data() {
        let g = Grid::unit_square(6);
        let ball = Ball::new([0.5, 0.5], 0.3);
        let reg = reg_p2(&g, &ball);
        let noisy = |base: &dyn Fn([f64; 2]) -> f64| {
            Field::from_fn(&g, |x| {
                let bump = if ball.contains(x) {
                    (x[0] * 37.0).sin() * 0.3
                } else {
                    0.0
                };
                base(x) + bump
            })
        };
        let c = noisy(&|_| 0.7);
        let w = harmonic_replacement(&reg, &c, &ball, &DirichletOptions::default()).unwrap();
        assert!(w.field.values().iter().all(|&v| v == 0.7));

        let lin = |x: [f64; 2]| 0.3 + 2.0 * x[0] - x[1];
        let l = noisy(&lin);
        let w = harmonic_replacement(&reg, &l, &ball, &DirichletOptions::default()).unwrap();
        let err = (0..g.num_nodes())
            .map(|k| (w.field.values()[k] - lin(g.node_coord(k))).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn maximum_principle_with_double_phase() {
        let g = Grid::unit_square(5);
        let dom = crate::orlicz::DomainBox {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        };
        let dp = PhiFunction::double_phase(2.0, 3.0, "abs(x1 - 0.5)", Some(dom)).unwrap();
        let ball = Ball::new([0.5, 0.5], 0.35);
        let reg = regularize(&dp, &g, &ball, &RegularizeOptions::default()).unwrap();
        let u = Field::from_fn(&g, |x| (6.0 * x[0]).sin() * x[1] + x[0] * x[0]);
        let w = harmonic_replacement(&reg, &u, &ball, &DirichletOptions::default()).unwrap();
        let trace = crate::grid::boundary_trace(&u, &ball);
        let lo = trace.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let hi = trace.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
        for k in g.nodes_in_ball(&ball) {
            let v = w.field.values()[k];
            assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
        assert!(w.converged, "residual {}", w.residual);
    }
}
