use serde::{Deserialize, Serialize};

use super::{check_ball, EstimateReport, LIP_TOL};
use crate::error::{Error, Result};
use crate::grid::{gradient, norm, Ball, Field, Point};
use crate::solver::positivity_threshold;

/// Interior nodes with `u <= tau` that have an edge neighbour with `u > tau`,
/// in node order.
pub fn free_boundary_points(u: &Field) -> Vec<Point> {
    let grid = u.grid();
    let tau = positivity_threshold(u.values());
    let v = u.values();
    let mut out = Vec::new();
    for k in 0..grid.num_nodes() {
        if v[k] > tau || grid.is_domain_boundary(k) {
            continue;
        }
        let (i, j) = grid.node_ij(k);
        let mut nbrs = vec![grid.node_index(i - 1, j), grid.node_index(i + 1, j)];
        if grid.dim() == 2 {
            nbrs.push(grid.node_index(i, j - 1));
            nbrs.push(grid.node_index(i, j + 1));
        }
        if nbrs.iter().any(|&m| v[m] > tau) {
            out.push(grid.node_coord(k));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthOptions {
    pub k_max: usize,
    /// `r_0`; defaults to the largest dyadic radius whose ball stays in the box.
    pub base_radius: Option<f64>,
    /// Normalization `M` in `S_k <= C M r_k`.
    pub m: f64,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        GrowthOptions {
            k_max: 5,
            base_radius: None,
            m: 1.0,
        }
    }
}

/// `S_k = sup_{B_{r_k}(x0)} u` with `r_k = r_0 2^{-k}`; reports the smallest
/// `C` with `S_k <= C M r_k` for every `k`, and which branch of
/// `S_{k+1} <= max(C M r_{k+1}, S_k / 2)` is active at each step.
pub fn growth_dichotomy(u: &Field, x0: Point, opts: &GrowthOptions) -> Result<EstimateReport> {
    let grid = u.grid();
    let h = grid.h_max();
    let r0 = match opts.base_radius {
        Some(r) => r,
        None => {
            let mut dist = f64::INFINITY;
            for a in 0..grid.dim() {
                dist = dist.min(x0[a] - grid.lo()[a]).min(grid.hi()[a] - x0[a]);
            }
            if !(dist > 0.0) {
                return Err(Error::Input(format!("{x0:?} is not an interior point")));
            }
            2f64.powf(dist.log2().floor())
        }
    };
    check_ball(grid, &Ball::new(x0, r0))?;
    if !(opts.m > 0.0) {
        return Err(Error::Input(format!(
            "normalization M must be positive, got {}",
            opts.m
        )));
    }
    let mut rep = EstimateReport::new("growth_dichotomy", grid);
    let mut radii = Vec::new();
    for k in 0..=opts.k_max {
        let r = r0 * 2f64.powi(-(k as i32));
        if r < 2.0 * h * (1.0 - 1e-12) {
            rep.warnings
                .push(format!("k_max truncated to {} (radius below 2h)", k.saturating_sub(1)));
            break;
        }
        radii.push(r);
    }
    if radii.is_empty() {
        return Err(Error::Input(format!("base radius {r0} is below 2h")));
    }
    let sups: Vec<f64> = radii
        .iter()
        .map(|&r| {
            grid.nodes_in_closed_ball(&Ball::new(x0, r))
                .into_iter()
                .map(|k| u.values()[k])
                .fold(0.0, f64::max)
        })
        .collect();
    let c = radii
        .iter()
        .zip(&sups)
        .map(|(&r, &s)| s / (opts.m * r))
        .fold(0.0, f64::max);
    let mut halving = 0;
    for k in 0..radii.len() {
        rep.push(format!("k{k}"), radii[k], sups[k], c * opts.m * radii[k], true);
        if k + 1 < radii.len() {
            let (s0, s1) = (sups[k], sups[k + 1]);
            if s0 > 0.0 {
                rep.scalars.insert(format!("step_ratio_k{k}"), s1 / s0);
            }
            if s1 <= 0.5 * s0 {
                halving += 1;
            }
        }
    }
    rep.scalars.insert("C".into(), c);
    rep.scalars.insert("M".into(), opts.m);
    rep.scalars.insert("base_radius".into(), r0);
    rep.scalars.insert("halving_steps".into(), halving as f64);
    rep.pass &= c.is_finite();
    Ok(rep)
}

/// Largest cell gradient over `region` at two resolutions; passes when it
/// grows by at most `lip_tol` (relative) from `coarse` to `fine`.
pub fn lipschitz_certificate(
    coarse: &Field,
    fine: &Field,
    region: Option<&Ball>,
    lip_tol: Option<f64>,
) -> Result<EstimateReport> {
    let tol = lip_tol.unwrap_or(LIP_TOL);
    let (gc, gf) = (coarse.grid(), fine.grid());
    if gc.dim() != gf.dim() || gc.lo() != gf.lo() || gc.hi() != gf.hi() {
        return Err(Error::GridMismatch(
            "Lipschitz certificate needs two grids of one box".into(),
        ));
    }
    let max_grad = |u: &Field| -> Result<f64> {
        let g = u.grid();
        let cells: Vec<usize> = match region {
            Some(b) => g.cells_in_ball(b),
            None => (0..g.num_cells()).collect(),
        };
        if cells.is_empty() {
            return Err(Error::Input("Lipschitz certificate region contains no cells".into()));
        }
        let grad = gradient(u);
        Ok(cells.iter().map(|&c| norm(grad[c])).fold(0.0, f64::max))
    };
    let a = max_grad(coarse)?;
    let b = max_grad(fine)?;
    let mut rep = EstimateReport::new("lipschitz", gf);
    let r = region.map_or(0.0, |b| b.radius);
    rep.push("coarse", r, a, a, true);
    rep.push("fine", r, b, a, true);
    let growth = if a > 0.0 {
        b / a - 1.0
    } else if b > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    rep.scalars.insert("h_coarse".into(), gc.h_max());
    rep.scalars.insert("growth".into(), growth);
    rep.pass &= growth <= tol;
    Ok(rep)
}
