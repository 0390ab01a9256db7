use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EstimateReport;
use crate::error::{Error, Result};
use crate::grid::{gradient, Ball, Field, Grid, Point};
use crate::orlicz::{log_space, recession_limit, LocalPhi, PhiFunction, PhiTable};
use crate::solver::positivity_threshold;

/// How the blow-up normalizations `sigma_j` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SigmaRule {
    /// `sigma_j = max(1, S_{j+1} / r_j)` with `S_k = sup_{B_{r_k}(x0)} u`.
    Auto,
    Constant {
        value: f64,
    },
    /// `sigma_j = 2^{j rate}`.
    Power {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlowupOptions {
    pub j_min: usize,
    pub j_max: usize,
    pub sigma: SigmaRule,
    pub lambda: f64,
    /// Cells per axis of the reference grid on `[-1, 1]^d`.
    pub reference_cells: usize,
    pub bump_radius: f64,
    /// `log2` of the largest sigma used to tabulate the recession function.
    pub recession_log2_sigma: u32,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        BlowupOptions {
            j_min: 1,
            j_max: 5,
            sigma: SigmaRule::Auto,
            lambda: 1.0,
            reference_cells: 32,
            bump_radius: 0.25,
            recession_log2_sigma: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlowupRun {
    pub x0: Point,
    pub j: Vec<usize>,
    pub r: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `v_j(y) = u(x0 + r_j y) / (sigma_j r_j)` on the reference grid.
    pub fields: Vec<Field>,
    pub phi_inf: PhiTable,
    /// `sup_{B_1} |v_{j+1} - v_j|`.
    pub increments: Vec<f64>,
    /// Relative weak Euler-Lagrange residual of each `v_j` for `phi_inf`.
    pub residuals: Vec<f64>,
    /// Scaled positivity weight `lambda / phi(x0, sigma_j)`.
    pub weights: Vec<f64>,
    /// `phi(x0, sigma_j) r_j`, which should tend to zero.
    pub sigma_monitor: Vec<f64>,
}

impl BlowupRun {
    pub fn limit(&self) -> Option<&Field> {
        self.fields.last()
    }
}

fn sup_on_ball(u: &Field, x0: Point, r: f64) -> f64 {
    u.grid()
        .nodes_in_closed_ball(&Ball::new(x0, r))
        .into_iter()
        .map(|k| u.values()[k])
        .fold(0.0, f64::max)
}

/// Blow-up sequence of `u` at `x0` with `r_j = 2^{-j}`, its recession
/// integrand and the Euler-Lagrange residual of each rescaling.
pub fn blowup_run(
    phi: &PhiFunction,
    u: &Field,
    x0: Point,
    opts: &BlowupOptions,
) -> Result<(BlowupRun, EstimateReport)> {
    let grid = u.grid();
    if !grid.contains(x0) {
        return Err(Error::Input(format!("{x0:?} lies outside the grid")));
    }
    if opts.j_max < opts.j_min || opts.reference_cells < 4 || !(opts.bump_radius > 0.0) {
        return Err(Error::Input("invalid blow-up options".into()));
    }
    let dim = grid.dim();
    let h = grid.h_max();
    let mut rep = EstimateReport::new("blowup", grid)
        .with_phi(phi)
        .with_lambda(opts.lambda);

    let sig_t = log_space(1e-4, 1e4, 161);
    let sigmas: Vec<f64> = (0..=opts.recession_log2_sigma)
        .step_by(4)
        .map(|k| 2f64.powi(k as i32))
        .collect();
    let rec = recession_limit(phi, x0, &sigmas, &sig_t, 1e-3)?;
    let phi_inf = rec.limit.clone();
    let local_inf = LocalPhi::Table(Arc::new(phi_inf.clone()));
    let base = phi.local(x0)?;

    let m = opts.reference_cells;
    let reference = if dim == 2 {
        Grid::new_2d([-1.0, -1.0], [1.0, 1.0], [m + 1, m + 1])?
    } else {
        Grid::new_1d(-1.0, 1.0, m + 1)?
    };
    let mut run = BlowupRun {
        x0,
        j: Vec::new(),
        r: Vec::new(),
        sigma: Vec::new(),
        fields: Vec::new(),
        phi_inf,
        increments: Vec::new(),
        residuals: Vec::new(),
        weights: Vec::new(),
        sigma_monitor: Vec::new(),
    };
    for j in opts.j_min..=opts.j_max {
        let r = 2f64.powi(-(j as i32));
        if r < 4.0 * h * (1.0 - 1e-12) {
            rep.warnings.push(format!("stopped at j = {j}: r_j below 4h"));
            break;
        }
        let fits = (0..dim).all(|a| x0[a] - r >= grid.lo()[a] - 1e-12 && x0[a] + r <= grid.hi()[a] + 1e-12);
        if !fits {
            rep.warnings
                .push(format!("skipped j = {j}: the cube of side 2 r_j leaves the box"));
            continue;
        }
        let sigma = match opts.sigma {
            SigmaRule::Auto => (sup_on_ball(u, x0, 0.5 * r) / r).max(1.0),
            SigmaRule::Constant { value } => value,
            SigmaRule::Power { rate } => 2f64.powf(j as f64 * rate),
        };
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Input(format!("sigma_j must be positive, got {sigma}")));
        }
        let v = Field::from_fn(&reference, |y| {
            let mut x = x0;
            for a in 0..dim {
                x[a] += r * y[a];
            }
            u.at(x) / (sigma * r)
        });
        let norm_val = base.value(sigma);
        if norm_val <= 0.0 {
            return Err(Error::DegenerateNormalizer { sigma });
        }
        run.j.push(j);
        run.r.push(r);
        run.sigma.push(sigma);
        run.weights.push(opts.lambda / norm_val);
        run.sigma_monitor.push(norm_val * r);
        run.residuals
            .push(el_residual(&local_inf, &v, opts.bump_radius, &mut rep.warnings, j));
        run.fields.push(v);
    }
    if run.fields.is_empty() {
        return Err(Error::Input("no admissible blow-up radius".into()));
    }
    let unit = Ball::new([0.0, 0.0], 1.0);
    let inner = reference.nodes_in_closed_ball(&unit);
    for w in run.fields.windows(2) {
        let d = inner
            .iter()
            .map(|&k| (w[1].values()[k] - w[0].values()[k]).abs())
            .fold(0.0, f64::max);
        run.increments.push(d);
    }
    let mut monotone = true;
    for i in 0..run.fields.len() {
        let prev = if i == 0 { run.residuals[0] } else { run.residuals[i - 1] };
        let ok = i == 0 || run.residuals[i] <= prev * (1.0 + 1e-9) + 1e-14;
        monotone &= ok;
        rep.push(format!("j{}", run.j[i]), run.r[i], run.residuals[i], prev, ok);
    }
    let weights_down = run.weights.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    rep.scalars
        .insert("residual_monotone".into(), if monotone { 1.0 } else { 0.0 });
    rep.scalars
        .insert("weights_nonincreasing".into(), if weights_down { 1.0 } else { 0.0 });
    rep.scalars
        .insert("recession_converged".into(), if rec.converged { 1.0 } else { 0.0 });
    if let Some(&d) = run.increments.last() {
        rep.scalars.insert("last_increment".into(), d);
    }
    rep.pass &= weights_down;
    Ok((run, rep))
}

/// `max_c |sum A(grad v) . grad eta_c| / sum |A(grad v)| |grad eta_c|` over
/// nodal bumps `eta_c` supported in the positivity set, where
/// `A(xi) = phi'(|xi|) xi / |xi|`.
fn el_residual(phi: &LocalPhi, v: &Field, rho: f64, warnings: &mut Vec<String>, j: usize) -> f64 {
    let g = v.grid();
    let dim = g.dim();
    let tau = positivity_threshold(v.values());
    let grad = gradient(v);
    let flux: Vec<[f64; 2]> = grad
        .iter()
        .map(|&xi| {
            let n = crate::grid::norm(xi);
            if n == 0.0 {
                [0.0, 0.0]
            } else {
                let a = phi.deriv(n) / n;
                [a * xi[0], a * xi[1]]
            }
        })
        .collect();
    let lattice: Vec<f64> = {
        let mut c = -1.0 + rho;
        let mut out = Vec::new();
        while c <= 1.0 - rho + 1e-12 {
            out.push(c);
            c += rho;
        }
        out
    };
    let centers: Vec<Point> = if dim == 2 {
        lattice
            .iter()
            .flat_map(|&y| lattice.iter().map(move |&x| [x, y]))
            .collect()
    } else {
        lattice.iter().map(|&x| [x, 0.0]).collect()
    };
    let mut worst: Option<f64> = None;
    let mut eta = vec![0.0; g.num_nodes()];
    for c in centers {
        let ball = Ball::new(c, rho);
        let cells = g.cells_in_ball(&ball.scaled(1.0 + g.h_max() / rho));
        let admissible = cells.iter().all(|&cell| {
            let (corners, m) = g.cell_corners(cell);
            corners[..m].iter().all(|&k| v.values()[k] > tau)
        });
        if cells.is_empty() || !admissible {
            continue;
        }
        eta.iter_mut().for_each(|e| *e = 0.0);
        for k in g.nodes_in_ball(&ball) {
            let d = ball.distance(g.node_coord(k)) / rho;
            eta[k] = (1.0 - d * d).powi(2);
        }
        let ge = crate::grid::gradient_of(g, &eta);
        let mut num = 0.0;
        let mut den = 0.0;
        for &cell in &cells {
            let (a, e) = (flux[cell], ge[cell]);
            num += a[0] * e[0] + a[1] * e[1];
            den += crate::grid::norm(a) * crate::grid::norm(e);
        }
        if den > 0.0 {
            let r = (num / den).abs();
            worst = Some(worst.map_or(r, |w: f64| w.max(r)));
        }
    }
    worst.unwrap_or_else(|| {
        warnings.push(format!("j = {j}: no test bump fits in the positivity set"));
        0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_is_scale_invariant() {
        let g = Grid::unit_square(7);
        let u = Field::from_fn(&g, |x| (x[0] - 0.5).max(0.0));
        let opts = BlowupOptions {
            sigma: SigmaRule::Constant { value: 1.0 },
            ..Default::default()
        };
        let (run, rep) = blowup_run(&PhiFunction::power_law(2.0).unwrap(), &u, [0.5, 0.5], &opts).unwrap();
        assert!(run.increments.iter().all(|&d| d < 1e-12), "{:?}", run.increments);
        assert!(run.residuals.iter().all(|&r| r < 1e-10), "{:?}", run.residuals);
        let v = run.limit().unwrap();
        assert_eq!(v.at([0.0, 0.0]), 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn residual_decays_for_perturbed_cone() {
        let g = Grid::unit_square(8);
        let u = Field::from_fn(&g, |x| {
            let s = (x[0] - 0.5).max(0.0);
            s + 2.0 * s * s
        });
        let (run, rep) = blowup_run(
            &PhiFunction::power_law(2.0).unwrap(),
            &u,
            [0.5, 0.5],
            &BlowupOptions::default(),
        )
        .unwrap();
        assert!(rep.scalars["residual_monotone"] == 1.0, "{:?}", run.residuals);
        assert!(run.residuals[0] > run.residuals.last().unwrap() * 4.0);
        assert!(run.sigma.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn weights_decrease_for_growing_sigma() {
        let g = Grid::unit_square(6);
        let u = Field::from_fn(&g, |x| (x[0] - 0.5).max(0.0));
        let phi = PhiFunction::double_phase(2.0, 3.0, "1 + x1", None).unwrap();
        let opts = BlowupOptions {
            sigma: SigmaRule::Power { rate: 1.0 / 3.0 },
            j_max: 3,
            ..Default::default()
        };
        let (run, rep) = blowup_run(&phi, &u, [0.5, 0.5], &opts).unwrap();
        assert!(run.weights.windows(2).all(|w| w[1] < w[0]));
        assert!(rep.pass);
    }
}
