use serde::{Deserialize, Serialize};

use super::{avg, check_ball, CellData, EstimateReport};
use crate::error::{Error, Result};
use crate::grid::{gradient, integrate, norm, Ball, Field};
use crate::orlicz::{PhiFunction, RegularizedPhi};
use crate::solver::{harmonic_replacement, DirichletOptions};

fn mean_of_cells(u: &Field, data: &CellData, ball: &Ball) -> Result<f64> {
    avg(u.grid(), &data.center_values, ball)
}

/// `int_B phi(x, |grad u|)`, the modular used by the smallness preconditions.
fn modular(u: &Field, phi_grad: &[f64], ball: &Ball) -> f64 {
    let g = u.grid();
    let picked: Vec<f64> = g.cells_in_ball(ball).iter().map(|&c| phi_grad[c]).collect();
    crate::grid::pairwise_sum(&picked) * g.cell_measure()
}

/// Caccioppoli ratio on `ball = B_{2r}(x0)`: the average of `phi(x, |grad u|)`
/// on `B_r` against the oscillation term on `B_{2r}` plus `lambda`.
pub fn caccioppoli_ratio(phi: &PhiFunction, lambda: f64, u: &Field, ball: &Ball) -> Result<EstimateReport> {
    let grid = u.grid();
    check_ball(grid, ball)?;
    if ball.radius > 1.0 {
        return Err(Error::Precondition(format!("need 2r <= 1, got 2r = {}", ball.radius)));
    }
    let data = CellData::new(Some(phi), u)?;
    let inner = ball.scaled(0.5);
    let lhs = avg(grid, &data.phi_grad(), &inner)?;
    let mean = mean_of_cells(u, &data, ball)?;
    let osc: Vec<f64> = data
        .phis
        .iter()
        .zip(&data.center_values)
        .map(|(p, &v)| p.value((v - mean).abs() / ball.radius))
        .collect();
    let rhs = avg(grid, &osc, ball)? + lambda;
    let mut rep = EstimateReport::new("caccioppoli", grid)
        .with_phi(phi)
        .with_lambda(lambda);
    rep.push("", inner.radius, lhs, rhs, true);
    Ok(rep)
}

/// Reverse Hoelder comparison on `ball = B_r(x0)`:
/// `(avg_{B_r} phi^{1+s0})^{1/(1+s0)}` against `(avg_{B_2r} phi^t)^{1/t} + lambda + 1`.
pub fn reverse_holder(
    phi: &PhiFunction,
    lambda: f64,
    u: &Field,
    ball: &Ball,
    s0: f64,
    t: f64,
) -> Result<EstimateReport> {
    let grid = u.grid();
    check_ball(grid, ball)?;
    if !(s0 > 0.0) || !(t > 0.0 && t <= 1.0) {
        return Err(Error::Input(format!(
            "need s0 > 0 and t in (0, 1], got s0 = {s0}, t = {t}"
        )));
    }
    let data = CellData::new(Some(phi), u)?;
    let pg = data.phi_grad();
    let outer = ball.scaled(2.0);
    let m = modular(u, &pg, &outer);
    if m > 1.0 {
        return Err(Error::Precondition(format!(
            "reverse Hoelder needs int_B2r phi(x, |grad u|) <= 1, got {m}"
        )));
    }
    let hi: Vec<f64> = pg.iter().map(|v| v.powf(1.0 + s0)).collect();
    let lo: Vec<f64> = pg.iter().map(|v| v.powf(t)).collect();
    let lhs = avg(grid, &hi, ball)?.powf(1.0 / (1.0 + s0));
    let rhs = avg(grid, &lo, &outer)?.powf(1.0 / t) + lambda + 1.0;
    let mut rep = EstimateReport::new("reverse_holder", grid)
        .with_phi(phi)
        .with_lambda(lambda);
    rep.push("", ball.radius, lhs, rhs, true);
    rep.scalars.insert("modular".into(), m);
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallRadius {
    pub r0: f64,
    /// `int phi(x, |grad u|)^{1+s0}` over the region.
    pub modular: f64,
    pub omega_bound: bool,
    pub measure_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Largest dyadic radius `r0 <= 1/2` with `omega(2 r0) <= 1/L` and
/// `|B_{2 r0}| <= min(1/(2L), 2^{-2(1+s0)/s0} M^{-(2+s0)/s0})`, where `M` is
/// the higher modular of `u` over `region` (whole grid when `None`).
pub fn small_radius(phi: &PhiFunction, u: &Field, region: Option<&Ball>, s0: f64) -> Result<SmallRadius> {
    if !(s0 > 0.0) {
        return Err(Error::Input(format!("s0 must be positive, got {s0}")));
    }
    let grid = u.grid();
    let data = CellData::new(Some(phi), u)?;
    let pg = data.phi_grad();
    let hi: Vec<f64> = pg.iter().map(|v| v.powf(1.0 + s0)).collect();
    let m = match region {
        Some(b) => {
            let picked: Vec<f64> = grid.cells_in_ball(b).iter().map(|&c| hi[c]).collect();
            crate::grid::pairwise_sum(&picked) * grid.cell_measure()
        }
        None => integrate(grid, &hi),
    };
    let env = phi.envelope();
    let l = env.l;
    let gain = 2f64.powf(-2.0 * (1.0 + s0) / s0);
    let mass = if m > 0.0 {
        gain * m.powf(-(2.0 + s0) / s0)
    } else {
        f64::INFINITY
    };
    let measure_bound = (1.0 / (2.0 * l)).min(mass);
    let dim = grid.dim();
    const FLOOR: i32 = 60;
    let ok =
        |r: f64| env.omega.eval(2.0 * r) <= 1.0 / l && Ball::new([0.0, 0.0], 2.0 * r).measure(dim) <= measure_bound;
    for k in 1..=FLOOR {
        let r = 2f64.powi(-k);
        if ok(r) {
            return Ok(SmallRadius {
                r0: r,
                modular: m,
                omega_bound: true,
                measure_bound,
                warning: None,
            });
        }
    }
    let r = 2f64.powi(-FLOOR);
    Ok(SmallRadius {
        r0: r,
        modular: m,
        omega_bound: env.omega.eval(2.0 * r) <= 1.0 / l,
        measure_bound,
        warning: Some(format!(
            "no dyadic radius down to 2^-{FLOOR} satisfies the smallness conditions"
        )),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonParams {
    pub lambda: f64,
    /// Almost-minimality exponent.
    pub beta: f64,
    pub s0: f64,
    /// Radius from `small_radius`; balls above it are flagged, not rejected.
    pub r0: Option<f64>,
}

impl Default for ComparisonParams {
    fn default() -> Self {
        ComparisonParams {
            lambda: 1.0,
            beta: 1.0,
            s0: super::S0_DEFAULT,
            r0: None,
        }
    }
}

/// Compare `u` with its regularized harmonic replacement `v_r` on `ball`:
/// `avg_{B_r} |grad u - grad v_r|` against
/// `(omega(2r)^{p/(2q^2)} + r^{min(beta, gamma)/(2q)}) (avg_{B_2r} |grad u| + lambda + 1)`.
pub fn comparison_estimate(
    phi: &PhiFunction,
    u: &Field,
    ball: &Ball,
    reg: &RegularizedPhi,
    params: &ComparisonParams,
) -> Result<EstimateReport> {
    let grid = u.grid();
    check_ball(grid, ball)?;
    let w = harmonic_replacement(reg, u, ball, &DirichletOptions::default())?;
    let gu = gradient(u);
    let gw = gradient(&w.field);
    let diff: Vec<f64> = gu
        .iter()
        .zip(&gw)
        .map(|(a, b)| norm([a[0] - b[0], a[1] - b[1]]))
        .collect();
    let lhs = avg(grid, &diff, ball)?;
    let nrm: Vec<f64> = gu.iter().map(|&g| norm(g)).collect();
    let outer = ball.scaled(2.0);
    let env = phi.envelope();
    let (p, q) = (env.p, env.q);
    let d = grid.dim() as f64;
    let s0 = params.s0;
    let gamma = (d * s0 * s0 / (4.0 * (2.0 + s0))).min(1.0);
    let r = ball.radius;
    let eta = env.omega.eval(2.0 * r).powf(p / (2.0 * q * q)) + r.powf(params.beta.min(gamma) / (2.0 * q));
    let rhs = eta * (avg(grid, &nrm, &outer)? + params.lambda + 1.0);
    let mut rep = EstimateReport::new("comparison", grid)
        .with_phi(phi)
        .with_lambda(params.lambda);
    rep.push("", r, lhs, rhs, true);
    rep.scalars.insert("gamma".into(), gamma);
    rep.scalars.insert("replacement_residual".into(), w.residual);
    if !w.converged {
        rep.warnings.push(format!(
            "harmonic replacement did not converge (residual {:.3e})",
            w.residual
        ));
    }
    if let Some(r0) = params.r0 {
        let small = r <= r0;
        rep.scalars
            .insert("within_small_radius".into(), if small { 1.0 } else { 0.0 });
        if !small {
            rep.warnings.push(format!("radius {r} exceeds the small radius {r0}"));
        }
    }
    Ok(rep)
}

/// Poincare-type check on `ball`: `avg phi(x, |u - mean|/(2r))` against
/// `(avg phi(x, |grad u|)^{1/s})^s + 1`.
pub fn poincare_check(phi: &PhiFunction, u: &Field, ball: &Ball, s: f64) -> Result<EstimateReport> {
    let grid = u.grid();
    check_ball(grid, ball)?;
    let p = phi.envelope().p;
    let d = grid.dim() as f64;
    let s_max = if grid.dim() == 1 { f64::INFINITY } else { d / (d - 1.0) };
    if !(s >= 1.0 && s <= p && s < s_max) {
        return Err(Error::Input(format!("need 1 <= s <= p and s < d/(d-1), got s = {s}")));
    }
    let data = CellData::new(Some(phi), u)?;
    let pg = data.phi_grad();
    let m = modular(u, &pg, ball);
    if m > 1.0 {
        return Err(Error::Precondition(format!(
            "Poincare check needs int_B phi(x, |grad u|) <= 1, got {m}"
        )));
    }
    let mean = mean_of_cells(u, &data, ball)?;
    let osc: Vec<f64> = data
        .phis
        .iter()
        .zip(&data.center_values)
        .map(|(ph, &v)| ph.value((v - mean).abs() / (2.0 * ball.radius)))
        .collect();
    let lhs = avg(grid, &osc, ball)?;
    let root: Vec<f64> = pg.iter().map(|v| v.powf(1.0 / s)).collect();
    let rhs = avg(grid, &root, ball)?.powf(s) + 1.0;
    let mut rep = EstimateReport::new("poincare", grid).with_phi(phi);
    rep.push("", ball.radius, lhs, rhs, true);
    rep.scalars.insert("modular".into(), m);
    Ok(rep)
}
