use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Ball, Grid};

/// Dyadic maximal function at the nodes: the largest average of `|f|` over
/// cells centered in `B_rho(x)`, for `rho = 2h, 4h, ...` up to `r_max`.
pub fn maximal_function(grid: &Grid, f: &[f64], r_max: f64) -> Result<Vec<f64>> {
    if f.len() != grid.num_cells() {
        return Err(Error::GridMismatch(format!(
            "cell field has {} values for {} cells",
            f.len(),
            grid.num_cells()
        )));
    }
    let h = grid.h_max();
    let mut radii = Vec::new();
    let mut rho = 2.0 * h;
    while rho <= r_max * (1.0 + 1e-12) {
        radii.push(rho);
        rho *= 2.0;
    }
    if radii.is_empty() {
        return Err(Error::Input(format!("r_max = {r_max} is below 2h = {}", 2.0 * h)));
    }
    let cc = grid.cell_counts();
    // per-row prefix sums of |f|
    let mut prefix = vec![0.0; (cc[0] + 1) * cc[1]];
    for j in 0..cc[1] {
        let base = j * (cc[0] + 1);
        for i in 0..cc[0] {
            prefix[base + i + 1] = prefix[base + i] + f[grid.cell_index(i, j)].abs();
        }
    }
    let out = (0..grid.num_nodes())
        .into_par_iter()
        .map(|k| {
            let x = grid.node_coord(k);
            radii
                .iter()
                .map(|&r| ball_mean(grid, &prefix, Ball::new(x, r)))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(out)
}

fn ball_mean(grid: &Grid, prefix: &[f64], ball: Ball) -> f64 {
    let cc = grid.cell_counts();
    let h = grid.h();
    let lo = grid.lo();
    let inside = |i: usize, j: usize| ball.distance(grid.cell_center(grid.cell_index(i, j))) < ball.radius;
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..cc[1] {
        let yc = grid.cell_center(grid.cell_index(0, j))[1];
        let dy = yc - ball.center[1];
        if dy.abs() >= ball.radius {
            continue;
        }
        let w = (ball.radius * ball.radius - dy * dy).sqrt();
        let guess_lo = ((ball.center[0] - w - lo[0]) / h[0] - 0.5).floor() + 1.0;
        let guess_hi = ((ball.center[0] + w - lo[0]) / h[0] - 0.5).ceil() - 1.0;
        let mut a = guess_lo.clamp(0.0, (cc[0] - 1) as f64) as usize;
        let mut b = guess_hi.clamp(0.0, (cc[0] - 1) as f64) as usize;
        while a > 0 && inside(a - 1, j) {
            a -= 1;
        }
        while a < cc[0] && !inside(a, j) {
            a += 1;
        }
        if a == cc[0] {
            continue;
        }
        while b + 1 < cc[0] && inside(b + 1, j) {
            b += 1;
        }
        while b > a && !inside(b, j) {
            b -= 1;
        }
        let base = j * (cc[0] + 1);
        sum += prefix[base + b + 1] - prefix[base + a];
        count += b + 1 - a;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
