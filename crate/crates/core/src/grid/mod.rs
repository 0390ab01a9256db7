//! Uniform grids on boxes in one or two dimensions.
//!
//! Nodes are stored row-major with `x1` running fastest. Cell `(i, j)` has
//! lower-left corner at node `(i, j)`; its gradient is the forward difference
//! on that corner's stencil.

mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_field_binary, write_cell_csv, write_field_binary, write_field_csv};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    n: [usize; 2],
}

impl Grid {
    pub fn new(dim: usize, lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Input(format!("dimension must be 1 or 2, got {dim}")));
        }
        for axis in 0..dim {
            if n[axis] < 3 {
                return Err(Error::Input(format!("need at least 3 nodes per axis, got {}", n[axis])));
            }
            if !(hi[axis] > lo[axis]) || !lo[axis].is_finite() || !hi[axis].is_finite() {
                return Err(Error::Input(format!(
                    "empty box on axis {axis}: [{}, {}]",
                    lo[axis], hi[axis]
                )));
            }
        }
        let (lo, hi, n) = if dim == 1 {
            ([lo[0], 0.0], [hi[0], 0.0], [n[0], 1])
        } else {
            (lo, hi, n)
        };
        Ok(Grid { dim, lo, hi, n })
    }

    pub fn new_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Grid::new(1, [lo, 0.0], [hi, 0.0], [n, 1])
    }

    pub fn new_2d(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Grid::new(2, lo, hi, n)
    }

    /// `2^level` cells per axis.
    pub fn dyadic(dim: usize, lo: [f64; 2], hi: [f64; 2], level: u32) -> Result<Self> {
        let n = (1usize << level) + 1;
        Grid::new(dim, lo, hi, [n, n])
    }

    pub fn unit_square(level: u32) -> Self {
        Grid::dyadic(2, [0.0, 0.0], [1.0, 1.0], level).expect("valid unit square")
    }

    pub fn unit_interval(level: u32) -> Self {
        Grid::dyadic(1, [0.0, 0.0], [1.0, 0.0], level).expect("valid unit interval")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> [f64; 2] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 2] {
        self.hi
    }

    pub fn n(&self) -> [usize; 2] {
        self.n
    }

    pub fn h(&self) -> [f64; 2] {
        let h0 = (self.hi[0] - self.lo[0]) / (self.n[0] - 1) as f64;
        let h1 = if self.dim == 2 {
            (self.hi[1] - self.lo[1]) / (self.n[1] - 1) as f64
        } else {
            1.0
        };
        [h0, h1]
    }

    /// Largest spacing over the active axes.
    pub fn h_max(&self) -> f64 {
        let h = self.h();
        if self.dim == 2 {
            h[0].max(h[1])
        } else {
            h[0]
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn cell_counts(&self) -> [usize; 2] {
        if self.dim == 2 {
            [self.n[0] - 1, self.n[1] - 1]
        } else {
            [self.n[0] - 1, 1]
        }
    }

    pub fn num_cells(&self) -> usize {
        let c = self.cell_counts();
        c[0] * c[1]
    }

    /// Lebesgue measure of one cell.
    pub fn cell_measure(&self) -> f64 {
        let h = self.h();
        if self.dim == 2 {
            h[0] * h[1]
        } else {
            h[0]
        }
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i + j * self.n[0]
    }

    pub fn node_ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    pub fn node_coord(&self, idx: usize) -> Point {
        let (i, j) = self.node_ij(idx);
        self.coord_ij(i, j)
    }

    pub fn coord_ij(&self, i: usize, j: usize) -> Point {
        let h = self.h();
        if self.dim == 2 {
            [self.lo[0] + i as f64 * h[0], self.lo[1] + j as f64 * h[1]]
        } else {
            [self.lo[0] + i as f64 * h[0], 0.0]
        }
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i + j * self.cell_counts()[0]
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        let cx = self.cell_counts()[0];
        (c % cx, c / cx)
    }

    pub fn cell_center(&self, c: usize) -> Point {
        let (i, j) = self.cell_ij(c);
        let h = self.h();
        if self.dim == 2 {
            [
                self.lo[0] + (i as f64 + 0.5) * h[0],
                self.lo[1] + (j as f64 + 0.5) * h[1],
            ]
        } else {
            [self.lo[0] + (i as f64 + 0.5) * h[0], 0.0]
        }
    }

    /// Node indices of the corners of cell `c` (two in 1D, four in 2D).
    pub fn cell_corners(&self, c: usize) -> ([usize; 4], usize) {
        let (i, j) = self.cell_ij(c);
        if self.dim == 2 {
            (
                [
                    self.node_index(i, j),
                    self.node_index(i + 1, j),
                    self.node_index(i, j + 1),
                    self.node_index(i + 1, j + 1),
                ],
                4,
            )
        } else {
            let a = self.node_index(i, 0);
            ([a, a + 1, a, a], 2)
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        let tol = 1e-12 * self.h_max();
        (0..self.dim).all(|a| x[a] >= self.lo[a] - tol && x[a] <= self.hi[a] + tol)
    }

    pub fn is_domain_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.node_ij(idx);
        if i == 0 || i + 1 == self.n[0] {
            return true;
        }
        self.dim == 2 && (j == 0 || j + 1 == self.n[1])
    }

    /// Index range `[lo, hi]` per axis of nodes that can lie within `radius` of `center`.
    pub(crate) fn index_window(&self, center: Point, radius: f64) -> [(usize, usize); 2] {
        let h = self.h();
        let mut out = [(0usize, 0usize); 2];
        for a in 0..2 {
            if a >= self.dim {
                out[a] = (0, 0);
                continue;
            }
            let lo = ((center[a] - radius - self.lo[a]) / h[a]).floor() - 1.0;
            let hi = ((center[a] + radius - self.lo[a]) / h[a]).ceil() + 1.0;
            let max = (self.n[a] - 1) as f64;
            out[a] = (lo.clamp(0.0, max) as usize, hi.clamp(0.0, max) as usize);
        }
        out
    }

    /// Nodes with `|x - center| < radius`.
    pub fn nodes_in_ball(&self, ball: &Ball) -> Vec<usize> {
        self.nodes_within(ball, false)
    }

    /// Nodes with `|x - center| <= radius` (up to rounding).
    pub fn nodes_in_closed_ball(&self, ball: &Ball) -> Vec<usize> {
        self.nodes_within(ball, true)
    }

    fn nodes_within(&self, ball: &Ball, closed: bool) -> Vec<usize> {
        let w = self.index_window(ball.center, ball.radius);
        let slack = 1e-9 * self.h_max();
        let mut out = Vec::new();
        for j in w[1].0..=w[1].1 {
            for i in w[0].0..=w[0].1 {
                let d = ball.distance(self.coord_ij(i, j));
                let inside = if closed {
                    d <= ball.radius + slack
                } else {
                    d < ball.radius
                };
                if inside {
                    out.push(self.node_index(i, j));
                }
            }
        }
        out
    }

    /// Cells whose centers satisfy `|x_c - center| < radius`.
    pub fn cells_in_ball(&self, ball: &Ball) -> Vec<usize> {
        let w = self.index_window(ball.center, ball.radius);
        let cc = self.cell_counts();
        let mut out = Vec::new();
        let jmax = if self.dim == 2 { w[1].1.min(cc[1] - 1) } else { 0 };
        for j in w[1].0..=jmax {
            for i in w[0].0..=w[0].1.min(cc[0] - 1) {
                let c = self.cell_index(i, j);
                if ball.distance(self.cell_center(c)) < ball.radius {
                    out.push(c);
                }
            }
        }
        out
    }

    /// Subsampled grid keeping every `2^k`-th node; requires divisibility.
    pub fn coarsen(&self, k: u32) -> Option<Grid> {
        let f = 1usize << k;
        let mut n = self.n;
        for a in 0..self.dim {
            if !(self.n[a] - 1).is_multiple_of(f) || (self.n[a] - 1) / f < 2 {
                return None;
            }
            n[a] = (self.n[a] - 1) / f + 1;
        }
        Some(Grid {
            dim: self.dim,
            lo: self.lo,
            hi: self.hi,
            n,
        })
    }

    /// Same box, twice as many cells per axis.
    pub fn refine(&self) -> Grid {
        let mut n = self.n;
        for a in 0..self.dim {
            n[a] = 2 * (self.n[a] - 1) + 1;
        }
        Grid { n, ..self.clone() }
    }

    pub fn same_nodes(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.lo == other.lo && self.hi == other.hi
    }

    /// Bilinear (linear in 1D) interpolation of nodal values at `x`; clamps to the box.
    pub fn interpolate(&self, values: &[f64], x: Point) -> f64 {
        let h = self.h();
        let locate = |a: usize| -> (usize, f64) {
            let s = ((x[a] - self.lo[a]) / h[a]).clamp(0.0, (self.n[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.n[a] - 2);
            (i, s - i as f64)
        };
        let (i, fx) = locate(0);
        if self.dim == 1 {
            let a = values[i];
            let b = values[i + 1];
            return a + fx * (b - a);
        }
        let (j, fy) = locate(1);
        let v00 = values[self.node_index(i, j)];
        let v10 = values[self.node_index(i + 1, j)];
        let v01 = values[self.node_index(i, j + 1)];
        let v11 = values[self.node_index(i + 1, j + 1)];
        (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
    }
}

/// Open Euclidean ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn distance(&self, x: Point) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn contains(&self, x: Point) -> bool {
        self.distance(x) < self.radius
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball {
            center: self.center,
            radius: self.radius * factor,
        }
    }

    /// Lebesgue measure of the ball in dimension `dim`.
    pub fn measure(&self, dim: usize) -> f64 {
        if dim == 1 {
            2.0 * self.radius
        } else {
            std::f64::consts::PI * self.radius * self.radius
        }
    }

    /// Whether the closed ball lies inside the grid's box.
    pub fn inside_box(&self, grid: &Grid) -> bool {
        (0..grid.dim()).all(|a| {
            self.center[a] - self.radius >= grid.lo()[a] - 1e-12 && self.center[a] + self.radius <= grid.hi()[a] + 1e-12
        })
    }
}

/// Nodal scalar values plus a mask of nodes that solvers must not modify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
    fixed: Vec<bool>,
}

impl Field {
    /// Domain-boundary nodes are fixed.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::Input(format!(
                "expected {} nodal values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at node {k}")));
        }
        let fixed = (0..grid.num_nodes()).map(|k| grid.is_domain_boundary(k)).collect();
        Ok(Field { grid, values, fixed })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.num_nodes()).map(|k| f(grid.node_coord(k))).collect();
        Field::new(grid.clone(), values).expect("closure must produce finite values")
    }

    pub fn try_from_fn<E>(grid: &Grid, f: impl Fn(Point) -> std::result::Result<f64, E>) -> std::result::Result<Self, E>
    where
        E: From<Error>,
    {
        let values = (0..grid.num_nodes())
            .map(|k| f(grid.node_coord(k)))
            .collect::<std::result::Result<Vec<_>, E>>()?;
        Ok(Field::new(grid.clone(), values)?)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Field::from_fn(grid, |_| c)
    }

    pub fn with_mask(mut self, fixed: Vec<bool>) -> Result<Self> {
        if fixed.len() != self.values.len() {
            return Err(Error::Input("mask length does not match node count".into()));
        }
        self.fixed = fixed;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn at(&self, x: Point) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn sup_distance(&self, other: &Field) -> Result<f64> {
        if !self.grid.same_nodes(&other.grid) {
            return Err(Error::GridMismatch("fields live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Sample onto a coarser grid whose nodes are a subset of this one's.
    pub fn inject(&self, coarse: &Grid) -> Result<Field> {
        let f = self.grid.refinement_factor(coarse)?;
        let mut values = Vec::with_capacity(coarse.num_nodes());
        let mut fixed = Vec::with_capacity(coarse.num_nodes());
        for j in 0..coarse.n()[1] {
            for i in 0..coarse.n()[0] {
                let jf = if self.grid.dim == 2 { j * f } else { 0 };
                let k = self.grid.node_index(i * f, jf);
                values.push(self.values[k]);
                fixed.push(self.fixed[k]);
            }
        }
        Ok(Field {
            grid: coarse.clone(),
            values,
            fixed,
        })
    }
}

impl Grid {
    fn refinement_factor(&self, coarse: &Grid) -> Result<usize> {
        if self.dim != coarse.dim || self.lo != coarse.lo || self.hi != coarse.hi {
            return Err(Error::GridMismatch("grids cover different boxes".into()));
        }
        let f = (self.n[0] - 1) / (coarse.n[0] - 1);
        let ok = (0..self.dim).all(|a| (coarse.n[a] - 1) * f == self.n[a] - 1);
        if f == 0 || !ok {
            return Err(Error::GridMismatch("grid is not a dyadic coarsening".into()));
        }
        Ok(f)
    }
}

/// Per-cell forward-difference gradients.
pub fn gradient(field: &Field) -> Vec<[f64; 2]> {
    gradient_of(field.grid(), field.values())
}

pub fn gradient_of(grid: &Grid, values: &[f64]) -> Vec<[f64; 2]> {
    let h = grid.h();
    (0..grid.num_cells())
        .map(|c| {
            let (i, j) = grid.cell_ij(c);
            let k = grid.node_index(i, j);
            let gx = (values[k + 1] - values[k]) / h[0];
            let gy = if grid.dim() == 2 {
                (values[grid.node_index(i, j + 1)] - values[k]) / h[1]
            } else {
                0.0
            };
            [gx, gy]
        })
        .collect()
}

pub fn norm(g: [f64; 2]) -> f64 {
    (g[0] * g[0] + g[1] * g[1]).sqrt()
}

/// Pairwise (cascade) summation; fixed association order for reproducibility.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Cell quadrature: `sum value * |cell|`.
pub fn integrate(grid: &Grid, cell_values: &[f64]) -> f64 {
    pairwise_sum(cell_values) * grid.cell_measure()
}

fn mean_over(values: &[f64], idx: &[usize]) -> Option<f64> {
    if idx.is_empty() {
        return None;
    }
    let picked: Vec<f64> = idx.iter().map(|&k| values[k]).collect();
    Some(pairwise_sum(&picked) / idx.len() as f64)
}

/// Discrete average of nodal values over the nodes inside `ball`.
pub fn ball_average_nodes(grid: &Grid, values: &[f64], ball: &Ball) -> Result<f64> {
    mean_over(values, &grid.nodes_in_ball(ball)).ok_or(Error::DegenerateBall {
        center: ball.center,
        radius: ball.radius,
    })
}

/// Discrete average of per-cell values over cells centered inside `ball`.
pub fn ball_average_cells(grid: &Grid, cell_values: &[f64], ball: &Ball) -> Result<f64> {
    mean_over(cell_values, &grid.cells_in_ball(ball)).ok_or(Error::DegenerateBall {
        center: ball.center,
        radius: ball.radius,
    })
}

/// A field restricted to the bounding box of a ball, with the nodes outside
/// the ball marked fixed. `offset` locates the sub-grid inside its parent.
#[derive(Debug, Clone)]
pub struct SubField {
    pub field: Field,
    pub offset: [usize; 2],
}

/// Restrict to the smallest node window holding the ball and its boundary
/// layer; `align` rounds the window so that each axis spans a multiple of
/// `align` cells where the parent grid allows it.
pub fn restrict(field: &Field, ball: &Ball, align: usize) -> Result<SubField> {
    let grid = field.grid();
    let inside = grid.nodes_in_ball(ball);
    if inside.is_empty() {
        return Err(Error::DegenerateBall {
            center: ball.center,
            radius: ball.radius,
        });
    }
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    for &k in &inside {
        let (i, j) = grid.node_ij(k);
        lo[0] = lo[0].min(i);
        hi[0] = hi[0].max(i);
        lo[1] = lo[1].min(j);
        hi[1] = hi[1].max(j);
    }
    for a in 0..grid.dim() {
        lo[a] = lo[a].saturating_sub(1);
        hi[a] = (hi[a] + 1).min(grid.n()[a] - 1);
        let align = align.max(1);
        let len = hi[a] - lo[a];
        let want = len.div_ceil(align).max(2) * align;
        let extra = want - len;
        let mut new_lo = lo[a].saturating_sub(extra / 2);
        let mut new_hi = new_lo + want;
        if new_hi > grid.n()[a] - 1 {
            new_hi = grid.n()[a] - 1;
            new_lo = new_hi.saturating_sub(want);
        }
        lo[a] = new_lo;
        hi[a] = new_hi;
    }
    if grid.dim() == 1 {
        lo[1] = 0;
        hi[1] = 0;
    }
    let h = grid.h();
    let sub_lo = grid.coord_ij(lo[0], lo[1]);
    let sub_hi = grid.coord_ij(hi[0], hi[1]);
    let n = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1];
    let sub_grid = if grid.dim() == 2 {
        Grid::new_2d(sub_lo, sub_hi, n)?
    } else {
        Grid::new_1d(sub_lo[0], sub_hi[0], n[0])?
    };
    debug_assert!((sub_grid.h()[0] - h[0]).abs() < 1e-9 * h[0]);
    let mut values = Vec::with_capacity(sub_grid.num_nodes());
    let mut fixed = Vec::with_capacity(sub_grid.num_nodes());
    for j in 0..n[1] {
        for i in 0..n[0] {
            let k = grid.node_index(lo[0] + i, lo[1] + j);
            values.push(field.values()[k]);
            fixed.push(field.fixed()[k] || !ball.contains(grid.node_coord(k)));
        }
    }
    Ok(SubField {
        field: Field {
            grid: sub_grid,
            values,
            fixed,
        },
        offset: lo,
    })
}

/// Copy the free nodes of a restricted field back into `target`.
pub fn embed(sub: &SubField, target: &mut Field) -> Result<()> {
    let sg = sub.field.grid();
    let tg = target.grid().clone();
    if sub.offset[0] + sg.n()[0] > tg.n()[0] || sub.offset[1] + sg.n()[1] > tg.n()[1] {
        return Err(Error::GridMismatch("sub-field does not fit in target".into()));
    }
    for j in 0..sg.n()[1] {
        for i in 0..sg.n()[0] {
            let ks = sg.node_index(i, j);
            if !sub.field.fixed()[ks] {
                let kt = tg.node_index(sub.offset[0] + i, sub.offset[1] + j);
                target.values_mut()[kt] = sub.field.values()[ks];
            }
        }
    }
    Ok(())
}

/// Dirichlet data of `ball`: nodes outside the ball within the 3x3
/// neighbourhood of an inside node, with their values.
pub fn boundary_trace(field: &Field, ball: &Ball) -> Vec<(usize, f64)> {
    let grid = field.grid();
    let inside = grid.nodes_in_ball(ball);
    let mut mark = std::collections::BTreeSet::new();
    let n = grid.n();
    for &k in &inside {
        let (i, j) = grid.node_ij(k);
        let jr = if grid.dim() == 2 { -1i64..=1 } else { 0..=0 };
        for dj in jr {
            for di in -1i64..=1 {
                let (ii, jj) = (i as i64 + di, j as i64 + dj);
                if ii < 0 || jj < 0 || ii >= n[0] as i64 || jj >= n[1] as i64 {
                    continue;
                }
                let kk = grid.node_index(ii as usize, jj as usize);
                if !ball.contains(grid.node_coord(kk)) {
                    mark.insert(kk);
                }
            }
        }
    }
    mark.into_iter().map(|k| (k, field.values()[k])).collect()
}
