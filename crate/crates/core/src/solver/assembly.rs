//! Cell-wise energy and gradient assembly shared by all discrete solvers.

use rayon::prelude::*;

use crate::grid::{pairwise_sum, Grid};
use crate::orlicz::LocalPhi;

/// Smoothing parameters: `chi_eps(v) = min(v/eps, 1)` and `sqrt(|g|^2 + delta^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Smoothing {
    pub eps: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct CellOut {
    energy: f64,
    flux: [f64; 2],
    chi: [f64; 4],
}

/// Discrete energy `sum_c [phi_c(|grad v|_c) + lambda chi_c] |c|` on one grid.
#[derive(Debug, Clone)]
pub(crate) struct Assembly {
    pub grid: Grid,
    pub phis: Vec<LocalPhi>,
    pub lambda: f64,
    h: [f64; 2],
    measure: f64,
    n0: usize,
    cells: [usize; 2],
    dim: usize,
}

#[derive(Debug, Default)]
pub(crate) struct Scratch {
    out: Vec<CellOut>,
    energies: Vec<f64>,
}

impl Assembly {
    pub fn new(grid: Grid, phis: Vec<LocalPhi>, lambda: f64) -> Self {
        assert_eq!(phis.len(), grid.num_cells());
        Assembly {
            h: grid.h(),
            measure: grid.cell_measure(),
            n0: grid.n()[0],
            cells: grid.cell_counts(),
            dim: grid.dim(),
            grid,
            phis,
            lambda,
        }
    }

    #[inline]
    fn base(&self, c: usize) -> usize {
        let i = c % self.cells[0];
        let j = c / self.cells[0];
        i + j * self.n0
    }

    /// Corner node indices; entries past `ncorners()` repeat the first corner.
    #[inline]
    pub fn corners(&self, c: usize) -> [usize; 4] {
        let k = self.base(c);
        if self.dim == 2 {
            [k, k + 1, k + self.n0, k + self.n0 + 1]
        } else {
            [k, k + 1, k, k]
        }
    }

    #[inline]
    pub fn ncorners(&self) -> usize {
        if self.dim == 2 {
            4
        } else {
            2
        }
    }

    #[inline]
    pub fn cell_gradient(&self, v: &[f64], c: usize) -> [f64; 2] {
        let k = self.base(c);
        let gx = (v[k + 1] - v[k]) / self.h[0];
        let gy = if self.dim == 2 {
            (v[k + self.n0] - v[k]) / self.h[1]
        } else {
            0.0
        };
        [gx, gy]
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    fn cell_smoothed(&self, v: &[f64], c: usize, sm: &Smoothing, with_grad: bool) -> CellOut {
        let g = self.cell_gradient(v, c);
        let rho2 = g[0] * g[0] + g[1] * g[1] + sm.delta * sm.delta;
        let rho = rho2.sqrt();
        let (val, der) = self.phis[c].value_deriv(rho);
        let mut out = CellOut {
            energy: val * self.measure,
            ..Default::default()
        };
        if with_grad && rho > 0.0 {
            let a = der / rho * self.measure;
            out.flux = [a * g[0], a * g[1]];
        }
        if self.lambda > 0.0 && sm.eps > 0.0 {
            let nc = self.ncorners();
            let corners = self.corners(c);
            let mut s = [0.0f64; 4];
            for m in 0..nc {
                s[m] = (v[corners[m]].max(0.0) / sm.eps).min(1.0);
            }
            let mut prod = 1.0;
            for m in 0..nc {
                prod *= 1.0 - s[m];
            }
            let lm = self.lambda * self.measure;
            out.energy += lm * (1.0 - prod);
            if with_grad {
                for m in 0..nc {
                    if s[m] < 1.0 {
                        let mut others = 1.0;
                        for o in 0..nc {
                            if o != m {
                                others *= 1.0 - s[o];
                            }
                        }
                        out.chi[m] = lm * others / sm.eps;
                    }
                }
            }
        }
        out
    }

    /// Smoothed energy; fills `grad` (zero at `fixed` nodes).
    pub fn energy_grad(
        &self,
        v: &[f64],
        fixed: &[bool],
        sm: &Smoothing,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> f64 {
        let nc = self.phis.len();
        scratch.out.resize(nc, CellOut::default());
        scratch
            .out
            .par_iter_mut()
            .enumerate()
            .with_min_len(1024)
            .for_each(|(c, o)| *o = self.cell_smoothed(v, c, sm, true));
        let out = &scratch.out;
        let (cx, cy) = (self.cells[0], self.cells[1]);
        let (h0, h1) = (self.h[0], self.h[1]);
        let n0 = self.n0;
        let dim = self.dim;
        grad.par_iter_mut().enumerate().with_min_len(1024).for_each(|(k, gk)| {
            if fixed[k] {
                *gk = 0.0;
                return;
            }
            let i = k % n0;
            let j = k / n0;
            let mut s = 0.0;
            if dim == 1 {
                if i < cx {
                    let o = &out[i];
                    s += -o.flux[0] / h0 + o.chi[0];
                }
                if i >= 1 {
                    let o = &out[i - 1];
                    s += o.flux[0] / h0 + o.chi[1];
                }
            } else {
                if i < cx && j < cy {
                    let o = &out[i + j * cx];
                    s += -o.flux[0] / h0 - o.flux[1] / h1 + o.chi[0];
                }
                if i >= 1 && j < cy {
                    let o = &out[i - 1 + j * cx];
                    s += o.flux[0] / h0 + o.chi[1];
                }
                if i < cx && j >= 1 {
                    let o = &out[i + (j - 1) * cx];
                    s += o.flux[1] / h1 + o.chi[2];
                }
                if i >= 1 && j >= 1 {
                    s += out[i - 1 + (j - 1) * cx].chi[3];
                }
            }
            *gk = s;
        });
        scratch.energies.clear();
        scratch.energies.extend(out.iter().map(|o| o.energy));
        pairwise_sum(&scratch.energies)
    }

    pub fn energy_smoothed(&self, v: &[f64], sm: &Smoothing, scratch: &mut Scratch) -> f64 {
        let nc = self.phis.len();
        scratch.energies.resize(nc, 0.0);
        scratch
            .energies
            .par_iter_mut()
            .enumerate()
            .with_min_len(1024)
            .for_each(|(c, e)| *e = self.cell_smoothed(v, c, sm, false).energy);
        pairwise_sum(&scratch.energies)
    }

    /// Exact cell energy: positive cell iff some corner exceeds `tau`.
    #[inline]
    pub fn cell_exact(&self, v: &[f64], c: usize, tau: f64) -> f64 {
        let g = self.cell_gradient(v, c);
        let mut e = self.phis[c].value((g[0] * g[0] + g[1] * g[1]).sqrt());
        if self.lambda > 0.0 {
            let corners = self.corners(c);
            if corners[..self.ncorners()].iter().any(|&k| v[k] > tau) {
                e += self.lambda;
            }
        }
        e * self.measure
    }

    pub fn energy_exact(&self, v: &[f64], tau: f64) -> f64 {
        let e: Vec<f64> = (0..self.phis.len())
            .into_par_iter()
            .with_min_len(1024)
            .map(|c| self.cell_exact(v, c, tau))
            .collect();
        pairwise_sum(&e)
    }

    /// Cells having node `k` as a corner.
    pub fn cells_of_node(&self, k: usize, out: &mut Vec<usize>) {
        out.clear();
        let i = k % self.n0;
        let j = k / self.n0;
        let (cx, cy) = (self.cells[0], self.cells[1]);
        if self.dim == 1 {
            if i < cx {
                out.push(i);
            }
            if i >= 1 {
                out.push(i - 1);
            }
            return;
        }
        if i < cx && j < cy {
            out.push(i + j * cx);
        }
        if i >= 1 && j < cy {
            out.push(i - 1 + j * cx);
        }
        if i < cx && j >= 1 {
            out.push(i + (j - 1) * cx);
        }
        if i >= 1 && j >= 1 {
            out.push(i - 1 + (j - 1) * cx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Field;

    fn setup(lambda: f64) -> (Assembly, Field) {
        let g = Grid::unit_square(3);
        let phis = vec![LocalPhi::DoublePhase { p: 2.0, q: 3.0, a: 0.7 }; g.num_cells()];
        let u = Field::from_fn(&g, |x| (x[0] - 0.3).max(0.0) * (1.0 + x[1]) + 0.05 * x[1]);
        (Assembly::new(g, phis, lambda), u)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (asm, u) = setup(1.3);
        let sm = Smoothing { eps: 0.2, delta: 1e-2 };
        let free = vec![false; u.values().len()];
        let mut grad = vec![0.0; u.values().len()];
        let mut sc = Scratch::default();
        let e0 = asm.energy_grad(u.values(), &free, &sm, &mut grad, &mut sc);
        assert!((e0 - asm.energy_smoothed(u.values(), &sm, &mut sc)).abs() < 1e-14);
        let mut v = u.values().to_vec();
        for k in [10, 20, 40, 50] {
            let h = 1e-7;
            v[k] += h;
            let ep = asm.energy_smoothed(&v, &sm, &mut sc);
            v[k] -= 2.0 * h;
            let em = asm.energy_smoothed(&v, &sm, &mut sc);
            v[k] += h;
            let fd = (ep - em) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "node {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn one_dimensional_gradient() {
        let g = Grid::unit_interval(4);
        let phis = vec![LocalPhi::Power { c: 1.0, p: 2.5 }; g.num_cells()];
        let asm = Assembly::new(g.clone(), phis, 1.0);
        let u = Field::from_fn(&g, |x| (x[0] - 0.4).max(0.0) + 0.1 * x[0] * x[0]);
        let sm = Smoothing { eps: 0.05, delta: 1e-3 };
        let free = vec![false; g.num_nodes()];
        let mut grad = vec![0.0; g.num_nodes()];
        let mut sc = Scratch::default();
        asm.energy_grad(u.values(), &free, &sm, &mut grad, &mut sc);
        let mut v = u.values().to_vec();
        for k in 1..g.num_nodes() - 1 {
            let h = 1e-7;
            v[k] += h;
            let ep = asm.energy_smoothed(&v, &sm, &mut sc);
            v[k] -= 2.0 * h;
            let em = asm.energy_smoothed(&v, &sm, &mut sc);
            v[k] += h;
            let fd = (ep - em) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "node {k}: {fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn exact_energy_sums_cells() {
        let (asm, u) = setup(1.0);
        let total: f64 = (0..asm.phis.len()).map(|c| asm.cell_exact(u.values(), c, 1e-12)).sum();
        assert!((total - asm.energy_exact(u.values(), 1e-12)).abs() < 1e-13);
    }
}
