use super::config::ExperimentConfig;
use crate::error::Result;
use crate::grid::Ball;
use crate::orlicz::{check_a0, check_cons1, check_dec, check_inc, check_va1, ConditionVerdict, SampleSpec};

/// `(inc)_p`, `(dec)_q`, `(A0)`, `(cons1)` and `(VA1)` with the integrand's
/// envelope, sampled on the coarsest grid of the config. `(VA1)` uses balls of
/// radius 1/4, 1/8 and 1/16 centred on a 4 x 4 lattice.
pub fn check_phi(cfg: &ExperimentConfig) -> Result<Vec<ConditionVerdict>> {
    let phi = cfg.phi()?;
    let grid = cfg.domain.grid(cfg.resolutions[0])?;
    let spec = SampleSpec::for_grid(&grid);
    let env = *phi.envelope();
    let b = cfg.domain.to_box();
    let at = |a: usize, k: usize| b.lo[a] + (k as f64 + 0.5) / 4.0 * (b.hi[a] - b.lo[a]);
    let ys: Vec<f64> = if cfg.domain.dim() == 2 {
        (0..4).map(|j| at(1, j)).collect()
    } else {
        vec![0.0]
    };
    let mut balls = Vec::new();
    for r in [0.25, 0.125, 0.0625] {
        for &y in &ys {
            for i in 0..4 {
                balls.push(Ball::new([at(0, i), y], r));
            }
        }
    }
    Ok(vec![
        check_inc(&phi, env.p, &spec)?,
        check_dec(&phi, env.q, &spec)?,
        check_a0(&phi, env.l, &spec)?,
        check_cons1(&phi, &spec)?,
        check_va1(&phi, &env.omega, &balls, &grid, &spec.t, spec.rtol)?,
    ])
}
