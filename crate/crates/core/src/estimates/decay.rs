use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{avg, check_ball, fit_loglog, EstimateReport, FIT_TOL};
use crate::error::{Error, Result};
use crate::grid::{gradient, norm, Ball, Field, Point};
use crate::solver::positivity_threshold;

fn sorted_radii(radii: &[f64]) -> Result<Vec<f64>> {
    if radii.len() < 3 {
        return Err(Error::Input(format!(
            "decay fits need at least 3 radii, got {}",
            radii.len()
        )));
    }
    let mut r = radii.to_vec();
    if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Input("radii must be positive".into()));
    }
    r.sort_by(f64::total_cmp);
    r.dedup();
    if r.len() < 3 {
        return Err(Error::Input("decay fits need at least 3 distinct radii".into()));
    }
    Ok(r)
}

/// Fit `log avg_{B_rho} |grad u|` against `log rho`; passes when the slope is
/// at least `-sigma - FIT_TOL`.
pub fn morrey_decay(u: &Field, center: Point, radii: &[f64], sigma: f64) -> Result<EstimateReport> {
    let grid = u.grid();
    let radii = sorted_radii(radii)?;
    check_ball(grid, &Ball::new(center, radii[0]))?;
    let nrm: Vec<f64> = gradient(u).into_iter().map(norm).collect();
    let mut rep = EstimateReport::new("morrey", grid);
    let mut means = Vec::new();
    for &r in &radii {
        let m = avg(grid, &nrm, &Ball::new(center, r))?;
        means.push(m);
    }
    let bound = -sigma - FIT_TOL;
    let used: Vec<(f64, f64)> = radii
        .iter()
        .zip(&means)
        .filter(|(_, &m)| m > 0.0)
        .map(|(&r, &m)| (r, m))
        .collect();
    let slope = if used.len() == radii.len() {
        let (r, m): (Vec<f64>, Vec<f64>) = used.into_iter().unzip();
        let fit = fit_loglog(&r, &m)?;
        rep.fit = Some(fit);
        fit.slope
    } else if used.is_empty() {
        0.0
    } else {
        rep.warnings
            .push("gradient vanishes on some balls; slope not fitted".into());
        0.0
    };
    for (i, (&r, &m)) in radii.iter().zip(&means).enumerate() {
        // rhs: the fitted power law's prediction at this radius
        let pred = rep.fit.map_or(m, |f| (f.intercept + f.slope * r.ln()).exp());
        rep.push(format!("rho{i}"), r, m, pred, true);
    }
    rep.scalars.insert("slope".into(), slope);
    rep.scalars.insert("sigma".into(), sigma);
    rep.pass &= slope >= bound;
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderSeminorm {
    pub value: f64,
    pub pairs: usize,
    pub exhaustive: bool,
}

/// `max |u(x) - u(y)| / |x - y|^alpha` over node pairs in `region` (all nodes
/// when `None`). All pairs are used when their number is within `budget`,
/// otherwise `budget` pairs are drawn with the first node stratified over the
/// node list.
pub fn holder_seminorm(
    u: &Field,
    alpha: f64,
    region: Option<&Ball>,
    budget: usize,
    seed: u64,
) -> Result<HolderSeminorm> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Input(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let grid = u.grid();
    let nodes: Vec<usize> = match region {
        Some(b) => grid.nodes_in_ball(b),
        None => (0..grid.num_nodes()).collect(),
    };
    let pts: Vec<(Point, f64)> = nodes.iter().map(|&k| (grid.node_coord(k), u.values()[k])).collect();
    let n = pts.len();
    let quotient = |a: usize, b: usize| {
        let (x, ux) = pts[a];
        let (y, uy) = pts[b];
        let d = norm([x[0] - y[0], x[1] - y[1]]);
        if d == 0.0 {
            0.0
        } else {
            (ux - uy).abs() / d.powf(alpha)
        }
    };
    let total = n * n.saturating_sub(1) / 2;
    if total <= budget {
        let value = (0..n)
            .map(|a| ((a + 1)..n).map(|b| quotient(a, b)).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        return Ok(HolderSeminorm {
            value,
            pairs: total,
            exhaustive: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut value: f64 = 0.0;
    for i in 0..budget {
        let lo = i * n / budget;
        let hi = ((i + 1) * n / budget).max(lo + 1).min(n);
        let a = rng.gen_range(lo..hi);
        let b = rng.gen_range(0..n);
        value = value.max(quotient(a, b));
    }
    Ok(HolderSeminorm {
        value,
        pairs: budget,
        exhaustive: false,
    })
}

/// Gradient excess `avg_{B_rho} |grad u - (grad u)_{B_rho}|` on balls inside
/// the positivity set; the fitted slope must be at least `alpha_min - FIT_TOL`.
pub fn gradient_excess_decay(u: &Field, center: Point, radii: &[f64], alpha_min: f64) -> Result<EstimateReport> {
    let grid = u.grid();
    let radii = sorted_radii(radii)?;
    let largest = Ball::new(center, *radii.last().expect("nonempty"));
    check_ball(grid, &largest)?;
    let tau = positivity_threshold(u.values());
    let cells = grid.cells_in_ball(&largest);
    for &c in &cells {
        let (corners, m) = grid.cell_corners(c);
        if corners[..m].iter().any(|&k| u.values()[k] <= tau) {
            return Err(Error::Precondition(format!(
                "ball of radius {} at {center:?} touches the zero set",
                largest.radius
            )));
        }
    }
    let g = gradient(u);
    let mut rep = EstimateReport::new("gradient_excess", grid);
    let mut excess = Vec::new();
    let mut scale: f64 = 0.0;
    for &r in &radii {
        let ball = Ball::new(center, r);
        let gx: Vec<f64> = g.iter().map(|v| v[0]).collect();
        let gy: Vec<f64> = g.iter().map(|v| v[1]).collect();
        let mean = [avg(grid, &gx, &ball)?, avg(grid, &gy, &ball)?];
        let dev: Vec<f64> = g.iter().map(|v| norm([v[0] - mean[0], v[1] - mean[1]])).collect();
        excess.push(avg(grid, &dev, &ball)?);
        scale = scale.max(norm(mean));
    }
    let flat = excess.iter().all(|&e| e <= 1e-12 * scale.max(f64::MIN_POSITIVE));
    let slope = if flat {
        rep.warnings.push("gradient excess vanishes at every radius".into());
        f64::INFINITY
    } else if excess.iter().any(|&e| e <= 0.0) {
        rep.warnings
            .push("gradient excess vanishes on some balls; slope not fitted".into());
        f64::INFINITY
    } else {
        let fit = fit_loglog(&radii, &excess)?;
        rep.fit = Some(fit);
        fit.slope
    };
    for (i, (&r, &e)) in radii.iter().zip(&excess).enumerate() {
        let pred = rep.fit.map_or(e, |f| (f.intercept + f.slope * r.ln()).exp());
        rep.push(format!("rho{i}"), r, e, pred, true);
    }
    if slope.is_finite() {
        rep.scalars.insert("slope".into(), slope);
    }
    rep.scalars.insert("alpha_min".into(), alpha_min);
    rep.pass &= slope >= alpha_min - FIT_TOL;
    Ok(rep)
}
