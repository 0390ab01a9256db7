use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replacement::{harmonic_replacement, DirichletOptions};
use super::{positivity_threshold, Functional};
use crate::error::{Error, Result};
use crate::grid::{Ball, Field};
use crate::orlicz::{regularize, RegularizeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompetitorSpec {
    pub harmonic: bool,
    /// Shifts relative to the sup of `u` on the ball.
    pub truncations: Vec<f64>,
    pub mollify: bool,
    pub random: usize,
    /// Random amplitude relative to the sup of `u` on the ball.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for CompetitorSpec {
    fn default() -> Self {
        CompetitorSpec {
            harmonic: true,
            truncations: vec![1e-3, 1e-2, 0.1],
            mollify: true,
            random: 4,
            amplitude: 1e-2,
            seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallCert {
    pub ball: Ball,
    pub energy_u: f64,
    pub worst_competitor: String,
    pub worst_energy: f64,
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmostMinCert {
    pub kappa: f64,
    pub beta: f64,
    pub balls: Vec<BallCert>,
    pub worst_ratio: f64,
    pub pass: bool,
}

/// `F(v; B)`: exact energy of the cells having a corner inside `ball`.
pub fn local_energy(functional: &Functional, v: &[f64], ball: &Ball, tau: f64) -> f64 {
    let asm = functional.assembly_ref();
    let grid = functional.grid();
    let mut cells: Vec<usize> = Vec::new();
    let mut buf = Vec::new();
    for k in grid.nodes_in_ball(ball) {
        asm.cells_of_node(k, &mut buf);
        cells.extend_from_slice(&buf);
    }
    cells.sort_unstable();
    cells.dedup();
    let e: Vec<f64> = cells.iter().map(|&c| asm.cell_exact(v, c, tau)).collect();
    crate::grid::pairwise_sum(&e)
}

/// Compare `u` against competitors agreeing with it outside each ball; passes
/// when `F(u; B_r) <= (1 + kappa r^beta) F(w; B_r)` for all of them.
pub fn check_almost_min(
    functional: &Functional,
    u: &Field,
    kappa: f64,
    beta: f64,
    balls: &[Ball],
    spec: &CompetitorSpec,
) -> Result<AlmostMinCert> {
    if !functional.grid().same_nodes(u.grid()) {
        return Err(Error::GridMismatch("field and functional use different grids".into()));
    }
    let grid = functional.grid();
    let tau = positivity_threshold(u.values());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for ball in balls {
        let inside: Vec<usize> = grid
            .nodes_in_ball(ball)
            .into_iter()
            .filter(|&k| !u.fixed()[k])
            .collect();
        let e_u = local_energy(functional, u.values(), ball, tau);
        let bound = 1.0 + kappa * ball.radius.powf(beta);
        let sup = inside.iter().map(|&k| u.values()[k]).fold(0.0, f64::max);
        let mut comps: Vec<(String, Vec<f64>)> = Vec::new();
        if spec.harmonic && !inside.is_empty() {
            let reg = regularize(functional.phi(), grid, ball, &RegularizeOptions::default())?;
            let w = harmonic_replacement(&reg, u, ball, &DirichletOptions::default())?;
            let vals = w.field.values().iter().map(|v| v.max(0.0)).collect();
            comps.push(("harmonic".into(), vals));
        }
        for &s in &spec.truncations {
            let mut v = u.values().to_vec();
            for &k in &inside {
                v[k] = (v[k] - s * sup).max(0.0);
            }
            comps.push((format!("truncation_{s}"), v));
        }
        if spec.mollify && grid.dim() == 2 {
            let mut v = u.values().to_vec();
            let n = grid.n();
            for &k in &inside {
                let (i, j) = grid.node_ij(k);
                let mut s = 0.0;
                let mut c = 0.0;
                for jj in j.saturating_sub(1)..=(j + 1).min(n[1] - 1) {
                    for ii in i.saturating_sub(1)..=(i + 1).min(n[0] - 1) {
                        s += u.values()[grid.node_index(ii, jj)];
                        c += 1.0;
                    }
                }
                v[k] = s / c;
            }
            comps.push(("mollified".into(), v));
        }
        for r in 0..spec.random {
            let mut v = u.values().to_vec();
            for &k in &inside {
                let xi: f64 = rng.gen_range(-1.0..=1.0);
                v[k] = (v[k] + spec.amplitude * sup.max(f64::MIN_POSITIVE) * xi).max(0.0);
            }
            comps.push((format!("random_{r}"), v));
        }
        let mut worst = (String::from("none"), f64::INFINITY, 0.0f64);
        for (name, v) in &comps {
            let e_w = local_energy(functional, v, ball, tau);
            let ratio = if e_u == 0.0 {
                0.0
            } else if e_w == 0.0 {
                f64::INFINITY
            } else {
                e_u / e_w
            };
            if ratio > worst.2 || worst.0 == "none" {
                worst = (name.clone(), e_w, ratio);
            }
        }
        let pass = worst.2 <= bound * (1.0 + 1e-12);
        out.push(BallCert {
            ball: *ball,
            energy_u: e_u,
            worst_competitor: worst.0,
            worst_energy: worst.1,
            ratio: worst.2,
            bound,
            pass,
        });
    }
    let worst_ratio = out.iter().map(|b| b.ratio).fold(0.0, f64::max);
    Ok(AlmostMinCert {
        kappa,
        beta,
        pass: out.iter().all(|b| b.pass),
        balls: out,
        worst_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::orlicz::PhiFunction;
    use crate::solver::{minimize, SolveOptions};

    #[test]
    fn zero_field_passes_trivially() {
        let g = Grid::unit_square(5);
        let f = Functional::new(PhiFunction::power_law(2.0).unwrap(), 1.0, g.clone()).unwrap();
        let u = Field::constant(&g, 0.0);
        let cert = check_almost_min(
            &f,
            &u,
            0.0,
            1.0,
            &[Ball::new([0.5, 0.5], 0.2)],
            &CompetitorSpec::default(),
        )
        .unwrap();
        assert!(cert.pass);
        assert_eq!(cert.balls[0].energy_u, 0.0);
    }

    #[test]
    fn minimizer_passes_and_bumped_minimizer_fails() {
        let g = Grid::unit_square(5);
        let f = Functional::new(PhiFunction::power_law(2.0).unwrap(), 1.0, g.clone()).unwrap();
        let data = Field::from_fn(&g, |x| (x[0] - 0.5).max(0.0));
        let m = minimize(&f, &data, &SolveOptions::default()).unwrap();
        let balls = [Ball::new([0.75, 0.5], 0.15), Ball::new([0.5, 0.5], 0.2)];
        let cert = check_almost_min(&f, &m.field, 0.0, 1.0, &balls, &CompetitorSpec::default()).unwrap();
        assert!(cert.pass, "{cert:?}");

        let ball = Ball::new([0.75, 0.5], 0.15);
        let bumped = |amp: f64| {
            let mut v = m.field.clone();
            for k in g.nodes_in_ball(&ball) {
                let x = g.node_coord(k);
                let d = ball.distance(x) / ball.radius;
                v.values_mut()[k] += amp * (1.0 - d * d);
            }
            v
        };
        let small = bumped(0.01);
        let kappa = 1.0;
        let ok = check_almost_min(&f, &small, kappa, 1.0, &[ball], &CompetitorSpec::default()).unwrap();
        assert!(ok.pass, "{ok:?}");
        let big = bumped(0.1);
        let bad = check_almost_min(&f, &big, kappa, 1.0, &[ball], &CompetitorSpec::default()).unwrap();
        assert!(!bad.pass, "{bad:?}");
    }
}
