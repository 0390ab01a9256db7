use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assembly::{Assembly, Scratch, Smoothing};
use super::{cell_integrands, Functional, SolveOptions, TAU_REL};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub eps: f64,
    pub delta: f64,
    pub iterations: usize,
    pub start_energy: f64,
    pub end_energy: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolishLog {
    pub sweeps: usize,
    pub moves: usize,
    pub truncations: usize,
    pub energy_before: f64,
    pub energy_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLog {
    pub cells: [usize; 2],
    pub stages: Vec<StageLog>,
    pub polish: PolishLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveLog {
    pub levels: Vec<LevelLog>,
    /// Exact energy of the last smoothed iterate on the finest grid.
    pub smoothed_energy: f64,
    pub final_energy: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Minimized {
    pub field: Field,
    pub log: SolveLog,
}

/// Continuation on smoothed energies followed by an exact-energy polish.
///
/// `data` supplies the Dirichlet values on its fixed nodes and the initial
/// guess elsewhere.
pub fn minimize(functional: &Functional, data: &Field, opts: &SolveOptions) -> Result<Minimized> {
    opts.validate()?;
    let grid = functional.grid();
    if !grid.same_nodes(data.grid()) {
        return Err(Error::GridMismatch(
            "boundary data and functional use different grids".into(),
        ));
    }
    let fixed = data.fixed();
    if let Some(k) = (0..fixed.len()).find(|&k| fixed[k] && data.values()[k] < 0.0) {
        return Err(Error::Precondition(format!(
            "boundary data must be nonnegative; node {k} has {}",
            data.values()[k]
        )));
    }
    let scale = (0..fixed.len())
        .filter(|&k| fixed[k])
        .map(|k| data.values()[k])
        .fold(0.0, f64::max);
    if scale == 0.0 {
        let mut field = data.clone();
        for (k, v) in field.values_mut().iter_mut().enumerate() {
            if !fixed[k] {
                *v = 0.0;
            }
        }
        let log = SolveLog {
            levels: Vec::new(),
            smoothed_energy: 0.0,
            final_energy: 0.0,
            converged: true,
        };
        return Ok(Minimized { field, log });
    }

    let extent = (0..grid.dim()).map(|a| grid.hi()[a] - grid.lo()[a]).fold(0.0, f64::max);
    let gscale = scale / extent;
    let tau = TAU_REL * scale;

    // coarse-to-fine hierarchy
    let mut grids: Vec<Grid> = vec![grid.clone()];
    if opts.multilevel {
        let mut k = 1;
        while let Some(g) = grid.coarsen(k) {
            if g.cell_counts()[0] < opts.coarsest_cells {
                break;
            }
            grids.push(g);
            k += 1;
        }
    }
    grids.reverse();

    let schedule = opts.schedule();
    let mut levels = Vec::new();
    let mut prev: Option<Field> = None;
    let mut smoothed_energy = f64::NAN;
    let mut converged = true;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (li, g) in grids.iter().enumerate() {
        let finest = li + 1 == grids.len();
        let level_data = if finest { data.clone() } else { data.inject(g)? };
        let coarse_asm;
        let asm = if finest {
            functional.assembly_ref()
        } else {
            coarse_asm = Assembly::new(g.clone(), cell_integrands(functional.phi(), g)?, functional.lambda());
            &coarse_asm
        };
        let mut v = level_data.values().to_vec();
        let lfixed = level_data.fixed().to_vec();
        if let Some(pf) = &prev {
            for k in 0..v.len() {
                if !lfixed[k] {
                    v[k] = pf.at(g.node_coord(k));
                }
            }
        }
        for k in 0..v.len() {
            if !lfixed[k] {
                v[k] = v[k].max(0.0);
            }
        }
        let first = if li == 0 {
            0
        } else {
            schedule.len().saturating_sub(opts.fine_stages)
        };
        let mut stages = Vec::new();
        let mut scratch = Scratch::default();
        for &(e, d) in &schedule[first..] {
            let sm = Smoothing {
                eps: e * scale,
                delta: d * gscale,
            };
            let log = spg_stage(asm, &mut v, &lfixed, &sm, opts, &mut scratch);
            if finest && !log.converged {
                converged = false;
            }
            stages.push(log);
        }
        if finest {
            smoothed_energy = asm.energy_exact(&v, tau);
        }
        let polish = polish(asm, &mut v, &lfixed, tau, scale, opts, &mut rng);
        levels.push(LevelLog {
            cells: g.cell_counts(),
            stages,
            polish,
        });
        prev = Some(Field::new(g.clone(), v)?.with_mask(lfixed)?);
    }
    let field = prev.expect("at least one level");
    let final_energy = levels.last().map(|l| l.polish.energy_after).unwrap_or(0.0);
    Ok(Minimized {
        field,
        log: SolveLog {
            levels,
            smoothed_energy,
            final_energy,
            converged,
        },
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spectral projected gradient with monotone Armijo backtracking, `v >= 0`
/// on free nodes.
fn spg_stage(
    asm: &Assembly,
    v: &mut [f64],
    fixed: &[bool],
    sm: &Smoothing,
    opts: &SolveOptions,
    scratch: &mut Scratch,
) -> StageLog {
    let n = v.len();
    let mut g = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut e = asm.energy_grad(v, fixed, sm, &mut g, scratch);
    let start = e;
    let mut trace = opts.record_trace.then(|| vec![e]);
    let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let h = asm.grid.h_max();
    let mut alpha = if gmax > 0.0 {
        0.1 * h * asm.grid.cell_measure().sqrt().max(h) / gmax
    } else {
        1.0
    };
    alpha = alpha.max(1e-300);
    let mut small = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut dmax: f64 = 0.0;
        for k in 0..n {
            d[k] = if fixed[k] {
                0.0
            } else {
                (v[k] - alpha * g[k]).max(0.0) - v[k]
            };
            dmax = dmax.max(d[k].abs());
        }
        let gd = dot(&g, &d);
        if dmax == 0.0 || gd >= 0.0 {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut e_new;
        loop {
            for k in 0..n {
                trial[k] = v[k] + t * d[k];
            }
            e_new = asm.energy_smoothed(&trial, sm, scratch);
            if e_new <= e + 1e-4 * t * gd {
                break;
            }
            let denom = 2.0 * (e_new - e - gd * t);
            let tq = if denom > 0.0 { -gd * t * t / denom } else { 0.5 * t };
            t = tq.clamp(0.1 * t, 0.5 * t);
            if t < 1e-16 {
                break;
            }
        }
        if !(e_new <= e) {
            // no descent possible at this resolution of the line search
            converged = true;
            break;
        }
        let e_acc = asm.energy_grad(&trial, fixed, sm, &mut g_new, scratch);
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..n {
            let s = trial[k] - v[k];
            ss += s * s;
            sy += s * (g_new[k] - g[k]);
        }
        alpha = if sy > 0.0 {
            (ss / sy).clamp(1e-300, 1e300)
        } else {
            alpha * 4.0
        };
        v.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        let dec = e - e_acc;
        e = e_acc;
        if let Some(tr) = trace.as_mut() {
            tr.push(e);
        }
        if dec <= opts.gtol * e.abs().max(f64::MIN_POSITIVE) {
            small += 1;
            if small >= 3 {
                converged = true;
                break;
            }
        } else {
            small = 0;
        }
    }
    StageLog {
        eps: sm.eps,
        delta: sm.delta,
        iterations,
        start_energy: start,
        end_energy: e,
        converged,
        trace,
    }
}

/// Gradient of each local cell as an affine function `a + v e` of node `k`'s value.
struct NodeStencil {
    cells: Vec<(usize, [f64; 2], [f64; 2])>,
    /// Values of nodes the stencil differences against.
    neighbours: Vec<f64>,
    /// For each cell, whether some other corner is positive.
    other_pos: Vec<bool>,
}

fn stencil(asm: &Assembly, v: &mut [f64], k: usize, tau: f64, cells: &mut Vec<usize>) -> NodeStencil {
    asm.cells_of_node(k, cells);
    let h = asm.grid.h();
    let keep = v[k];
    v[k] = 0.0;
    let mut out = NodeStencil {
        cells: Vec::with_capacity(4),
        neighbours: Vec::with_capacity(4),
        other_pos: Vec::with_capacity(4),
    };
    let nc = asm.ncorners();
    for &c in cells.iter() {
        let corners = asm.corners(c);
        let pos = corners[..nc].iter().position(|&m| m == k).expect("node is a corner");
        let a = asm.cell_gradient(v, c);
        let e = match (nc, pos) {
            (_, 0) => {
                out.neighbours.push(v[corners[1]]);
                if nc == 4 {
                    out.neighbours.push(v[corners[2]]);
                    [-1.0 / h[0], -1.0 / h[1]]
                } else {
                    [-1.0 / h[0], 0.0]
                }
            }
            (_, 1) => {
                out.neighbours.push(v[corners[0]]);
                [1.0 / h[0], 0.0]
            }
            (4, 2) => {
                out.neighbours.push(v[corners[0]]);
                [0.0, 1.0 / h[1]]
            }
            _ => [0.0, 0.0],
        };
        out.other_pos.push(
            corners[..nc]
                .iter()
                .enumerate()
                .any(|(m, &node)| m != pos && v[node] > tau),
        );
        out.cells.push((c, a, e));
    }
    v[k] = keep;
    out
}

impl NodeStencil {
    fn convex(&self, asm: &Assembly, x: f64) -> f64 {
        self.cells
            .iter()
            .map(|&(c, a, e)| {
                let g = [a[0] + x * e[0], a[1] + x * e[1]];
                asm.phis[c].value((g[0] * g[0] + g[1] * g[1]).sqrt())
            })
            .sum::<f64>()
            * asm.measure()
    }

    fn convex_d(&self, asm: &Assembly, x: f64) -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for &(c, a, e) in &self.cells {
            let g = [a[0] + x * e[0], a[1] + x * e[1]];
            let rho = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let ee = e[0] * e[0] + e[1] * e[1];
            if ee == 0.0 {
                continue;
            }
            let phi = &asm.phis[c];
            if rho == 0.0 {
                d2 += phi.second(0.0).min(1e300) * ee;
                continue;
            }
            let ge = (g[0] * e[0] + g[1] * e[1]) / rho;
            let w = phi.deriv(rho) / rho;
            d1 += w * ge * rho;
            d2 += phi.second(rho) * ge * ge + w * (ee - ge * ge);
        }
        (d1 * asm.measure(), d2 * asm.measure())
    }

    fn chi(&self, asm: &Assembly, positive: bool) -> f64 {
        let count = if positive {
            self.cells.len()
        } else {
            self.other_pos.iter().filter(|&&b| b).count()
        };
        asm.lambda * asm.measure() * count as f64
    }

    /// Minimizer of the convex part over the neighbour bracket.
    fn argmin(&self, asm: &Assembly, start: f64, scale: f64) -> f64 {
        let mut lo = self.neighbours.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = self.neighbours.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return start;
        }
        if hi - lo <= 1e-15 * scale {
            return lo;
        }
        let mut x = start.clamp(lo, hi);
        for _ in 0..60 {
            let (d1, d2) = self.convex_d(asm, x);
            if d1 > 0.0 {
                hi = x;
            } else if d1 < 0.0 {
                lo = x;
            } else {
                return x;
            }
            let newton = x - d1 / d2;
            let next = if d2 > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 1e-15 * scale.max(x.abs()) || hi - lo <= 1e-15 * scale {
                return next;
            }
            x = next;
        }
        x
    }
}

/// Exact-energy coordinate moves on a worklist, then the truncation family.
fn polish(
    asm: &Assembly,
    v: &mut [f64],
    fixed: &[bool],
    tau: f64,
    scale: f64,
    opts: &SolveOptions,
    rng: &mut ChaCha8Rng,
) -> PolishLog {
    let before = asm.energy_exact(v, tau);
    let n = v.len();
    let mut order: Vec<usize> = (0..n).filter(|&k| !fixed[k]).collect();
    order.shuffle(rng);
    let mut active = vec![false; n];
    let mut next = vec![false; n];
    let mut cells = Vec::with_capacity(4);
    let mut sweeps = 0;
    let mut moves = 0;
    let mut truncations = 0;
    let thr = 1e-12 * before.abs().max(f64::MIN_POSITIVE);
    let n0 = asm.grid.n()[0];
    let n1 = asm.grid.n()[1];
    let dim = asm.grid.dim();
    let neighbourhood = |k: usize| {
        let (i, j) = (k % n0, k / n0);
        let jr = if dim == 2 {
            j.saturating_sub(1)..=(j + 1).min(n1 - 1)
        } else {
            0..=0
        };
        jr.flat_map(move |jj| (i.saturating_sub(1)..=(i + 1).min(n0 - 1)).map(move |ii| ii + jj * n0))
    };
    // only nodes next to the discrete free boundary are visited
    let mark_interface = |v: &[f64], active: &mut [bool]| {
        for k in 0..n {
            let pk = v[k] > tau;
            if neighbourhood(k).any(|m| (v[m] > tau) != pk) {
                for m in neighbourhood(k) {
                    active[m] = !fixed[m];
                }
            }
        }
    };
    mark_interface(v, &mut active);
    'outer: loop {
        while sweeps < opts.polish_sweeps {
            sweeps += 1;
            let mut any = false;
            for &k in &order {
                if !active[k] {
                    continue;
                }
                let st = stencil(asm, v, k, tau, &mut cells);
                let cur = v[k];
                let e_cur = st.convex(asm, cur) + st.chi(asm, cur > tau);
                let x = st.argmin(asm, cur, scale).max(0.0);
                let e_pos = if x > tau {
                    st.convex(asm, x) + st.chi(asm, true)
                } else {
                    f64::INFINITY
                };
                let e_zero = st.convex(asm, 0.0) + st.chi(asm, false);
                let (best, val) = if e_pos < e_zero { (e_pos, x) } else { (e_zero, 0.0) };
                if best < e_cur - thr && val != cur {
                    v[k] = val;
                    moves += 1;
                    any = true;
                    if (val > tau) != (cur > tau) {
                        for m in neighbourhood(k) {
                            next[m] = !fixed[m];
                        }
                    }
                }
            }
            std::mem::swap(&mut active, &mut next);
            next.iter_mut().for_each(|b| *b = false);
            if !any {
                break;
            }
        }
        // level-set competitors: plain shifts max(u - s, 0) and shifts
        // rescaled so the top level is kept, (max(u - s, 0)) M / (M - s)
        let current = asm.energy_exact(v, tau);
        let top = v.iter().copied().fold(0.0, f64::max);
        let mut trial = v.to_vec();
        let eval = |shift: f64, rescale: bool, out: &mut Vec<f64>| -> f64 {
            let f = if rescale { top / (top - shift) } else { 1.0 };
            for k in 0..n {
                out[k] = if fixed[k] { v[k] } else { (v[k] - shift).max(0.0) * f };
            }
            asm.energy_exact(out, tau)
        };
        let mut best: (f64, Option<(f64, bool)>) = (current, None);
        for &s in &opts.truncation_shifts {
            let e = eval(s * scale, false, &mut trial);
            if e < best.0 - thr {
                best = (e, Some((s * scale, false)));
            }
        }
        if top > 0.0 {
            let m = 32;
            let mut scan = (f64::INFINITY, 0);
            for i in 1..m {
                let e = eval(top * i as f64 / m as f64, true, &mut trial);
                if e < scan.0 {
                    scan = (e, i);
                }
            }
            // golden-section refinement on the bracketing interval
            let (mut a, mut b) = (
                top * (scan.1 - 1) as f64 / m as f64,
                top * (scan.1 + 1) as f64 / m as f64,
            );
            let gr = 0.5 * (5f64.sqrt() - 1.0);
            let mut c = b - gr * (b - a);
            let mut d = a + gr * (b - a);
            let mut fc = eval(c, true, &mut trial);
            let mut fd = eval(d, true, &mut trial);
            for _ in 0..40 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - gr * (b - a);
                    fc = eval(c, true, &mut trial);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + gr * (b - a);
                    fd = eval(d, true, &mut trial);
                }
            }
            for (e, sh) in [(scan.0, top * scan.1 as f64 / m as f64), (fc, c), (fd, d)] {
                if e < best.0 - thr {
                    best = (e, Some((sh, true)));
                }
            }
        }
        match best.1 {
            Some((shift, rescale)) if truncations < 5 => {
                truncations += 1;
                eval(shift, rescale, &mut trial);
                v.copy_from_slice(&trial);
                active.iter_mut().for_each(|b| *b = false);
                mark_interface(v, &mut active);
                if sweeps >= opts.polish_sweeps {
                    break 'outer;
                }
            }
            _ => break 'outer,
        }
    }
    let after = asm.energy_exact(v, tau);
    debug_assert!(after <= before * (1.0 + 1e-12) + 1e-300, "{after} > {before}");
    PolishLog {
        sweeps,
        moves,
        truncations,
        energy_before: before,
        energy_after: after,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orlicz::PhiFunction;

    #[test]
    fn zero_data_gives_zero() {
        let g = Grid::unit_square(4);
        let f = Functional::new(PhiFunction::power_law(2.0).unwrap(), 1.0, g.clone()).unwrap();
        let data = Field::from_fn(&g, |x| if x[0] > 0.0 && x[0] < 1.0 { 0.3 } else { 0.0 });
        let data = {
            let mut d = data;
            let fixed = d.fixed().to_vec();
            for (k, v) in d.values_mut().iter_mut().enumerate() {
                if fixed[k] {
                    *v = 0.0;
                }
            }
            d
        };
        let m = minimize(&f, &data, &SolveOptions::default()).unwrap();
        assert!(m.field.values().iter().all(|&v| v == 0.0));
        assert_eq!(m.log.final_energy, 0.0);
    }

    #[test]
    fn one_dimensional_cone() {
        let g = Grid::unit_interval(7);
        let f = Functional::new(PhiFunction::power_law(2.0).unwrap(), 1.0, g.clone()).unwrap();
        let data = Field::from_fn(&g, |x| 0.5 * x[0]);
        let opts = SolveOptions {
            record_trace: true,
            ..Default::default()
        };
        let m = minimize(&f, &data, &opts).unwrap();
        let h = g.h()[0];
        for (k, &v) in m.field.values().iter().enumerate() {
            let x = g.node_coord(k)[0];
            assert!((v - (x - 0.5).max(0.0)).abs() <= 2.0 * h, "x = {x}: {v}");
        }
        assert!((m.log.final_energy - 1.0).abs() <= 3.0 * h);
        assert!(m.log.final_energy <= m.log.smoothed_energy + 1e-15);
        for level in &m.log.levels {
            for st in &level.stages {
                let tr = st.trace.as_ref().unwrap();
                assert!(tr.windows(2).all(|w| w[1] <= w[0]));
            }
        }
        let fixed = m.field.fixed();
        for k in 0..fixed.len() {
            if fixed[k] {
                assert_eq!(m.field.values()[k], data.values()[k]);
            }
        }
    }
}
