//! Discrete minimization of `F(v) = sum phi(x, |grad v|) + lambda chi_{v>0}`,
//! harmonic replacement, the exact 1D oracle and almost-minimality checks.

mod almost_min;
pub(crate) mod assembly;
mod exact1d;
mod minimize;
mod replacement;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::orlicz::{LocalPhi, PhiFunction};

pub use almost_min::{check_almost_min, local_energy, AlmostMinCert, BallCert, CompetitorSpec};
pub use exact1d::{free_boundary_slope, solve_1d_exact, Exact1d, Exact1dKind};
pub use minimize::{minimize, LevelLog, Minimized, PolishLog, SolveLog, StageLog};
pub use replacement::{harmonic_replacement, solve_dirichlet, DirichletOptions, Replacement};

/// Relative positivity threshold: a node is positive when it exceeds
/// `TAU_REL * sup v`.
pub const TAU_REL: f64 = 1e-10;

pub fn positivity_threshold(values: &[f64]) -> f64 {
    let sup = values.iter().copied().fold(0.0, f64::max);
    TAU_REL * sup
}

#[derive(Debug, Clone)]
pub struct Functional {
    phi: PhiFunction,
    lambda: f64,
    grid: Grid,
    asm: assembly::Assembly,
}

impl Functional {
    pub fn new(phi: PhiFunction, lambda: f64, grid: Grid) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Input(format!("lambda must be positive, got {lambda}")));
        }
        let cells = cell_integrands(&phi, &grid)?;
        let asm = assembly::Assembly::new(grid.clone(), cells, lambda);
        Ok(Functional { phi, lambda, grid, asm })
    }

    pub fn phi(&self) -> &PhiFunction {
        &self.phi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub(crate) fn assembly_ref(&self) -> &assembly::Assembly {
        &self.asm
    }

    /// Same integrand and lambda on another grid.
    pub fn on_grid(&self, grid: Grid) -> Result<Functional> {
        Functional::new(self.phi.clone(), self.lambda, grid)
    }
}

pub(crate) fn cell_integrands(phi: &PhiFunction, grid: &Grid) -> Result<Vec<LocalPhi>> {
    (0..grid.num_cells()).map(|c| phi.local(grid.cell_center(c))).collect()
}

/// Exact discrete energy.
pub fn energy(functional: &Functional, field: &Field) -> Result<f64> {
    if !functional.grid.same_nodes(field.grid()) {
        return Err(Error::GridMismatch("field and functional use different grids".into()));
    }
    if let Some(k) = field.values().iter().position(|&v| v < 0.0) {
        return Err(Error::Precondition(format!(
            "energy needs a nonnegative field; node {k} has value {}",
            field.values()[k]
        )));
    }
    let tau = positivity_threshold(field.values());
    Ok(functional.assembly_ref().energy_exact(field.values(), tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// First and last chi smoothing width, relative to the boundary-data sup.
    pub eps_start: f64,
    pub eps_min: f64,
    /// First and last gradient regularization, relative to data sup / box size.
    pub delta_start: f64,
    pub delta_min: f64,
    pub stages: usize,
    /// Relative energy decrease below which a stage stops.
    pub gtol: f64,
    pub max_iter: usize,
    pub polish_sweeps: usize,
    /// Shifts `s` (relative to the data sup) for the competitors `max(u - s, 0)`.
    pub truncation_shifts: Vec<f64>,
    /// Solve on nested coarser grids first.
    pub multilevel: bool,
    pub coarsest_cells: usize,
    /// Continuation stages repeated on each finer level.
    pub fine_stages: usize,
    pub seed: u64,
    pub record_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            eps_start: 0.1,
            eps_min: 1e-6,
            delta_start: 1e-2,
            delta_min: 1e-8,
            stages: 7,
            gtol: 1e-8,
            max_iter: 4000,
            polish_sweeps: 50,
            truncation_shifts: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1],
            multilevel: true,
            coarsest_cells: 16,
            fine_stages: 3,
            seed: 0x5EED,
            record_trace: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.eps_start, "eps_start")?;
        pos(self.eps_min, "eps_min")?;
        pos(self.delta_start, "delta_start")?;
        pos(self.delta_min, "delta_min")?;
        pos(self.gtol, "gtol")?;
        if self.stages >= 2 && (self.eps_min >= self.eps_start || self.delta_min >= self.delta_start) {
            return Err(Error::Input(
                "continuation schedules must be strictly decreasing".into(),
            ));
        }
        if self.stages == 0 || self.max_iter == 0 {
            return Err(Error::Input("stages and max_iter must be positive".into()));
        }
        Ok(())
    }

    /// `(eps, delta)` per stage, before scaling.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        let s = self.stages;
        (0..s)
            .map(|k| {
                let f = if s == 1 { 1.0 } else { k as f64 / (s - 1) as f64 };
                (
                    self.eps_start * (self.eps_min / self.eps_start).powf(f),
                    self.delta_start * (self.delta_min / self.delta_start).powf(f),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn documented_energies() {
        let g = Grid::unit_square(7);
        let f = Functional::new(PhiFunction::power_law(2.0).unwrap(), 1.0, g.clone()).unwrap();
        assert_eq!(energy(&f, &Field::constant(&g, 0.0)).unwrap(), 0.0);
        let cone = Field::from_fn(&g, |x| (x[0] - 0.5).max(0.0));
        let e = energy(&f, &cone).unwrap();
        assert!((e - 1.0).abs() <= 2.0 * g.h()[0], "{e}");

        let g1 = Grid::unit_interval(8);
        let f1 = Functional::new(PhiFunction::power_law(2.0).unwrap(), 1.0, g1.clone()).unwrap();
        let b = 0.7;
        let lin = Field::from_fn(&g1, |x| b * x[0]);
        assert_abs_diff_eq!(energy(&f1, &lin).unwrap(), b * b + 1.0, epsilon = 1e-12);

        let neg = Field::from_fn(&g1, |x| x[0] - 0.5);
        assert!(matches!(energy(&f1, &neg), Err(Error::Precondition(_))));
        assert!(Functional::new(PhiFunction::power_law(2.0).unwrap(), -1.0, g1).is_err());
    }

    #[test]
    fn schedules_decrease() {
        let o = SolveOptions::default();
        o.validate().unwrap();
        let s = o.schedule();
        assert_eq!(s.len(), 7);
        assert!(s.windows(2).all(|w| w[1].0 < w[0].0 && w[1].1 < w[0].1));
        assert!((s[0].0 - 0.1).abs() < 1e-15 && (s[6].1 - 1e-8).abs() < 1e-20);
    }
}
