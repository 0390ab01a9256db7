//! Numerical counterparts of the regularity estimates for almost-minimizers:
//! ball ratios, decay fits, seminorms, free-boundary growth and blow-ups.
//!
//! The constants in the underlying inequalities are existential, so reports
//! carry raw left and right sides; pass flags only assert finiteness,
//! monotonicity or a fitted exponent bound.

mod blowup;
mod decay;
mod free_boundary;
mod maximal;
mod ratios;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ball_average_cells, Ball, Field, Grid};
use crate::orlicz::{LocalPhi, PhiFunction};

pub use blowup::{blowup_run, BlowupOptions, BlowupRun, SigmaRule};
pub use decay::{gradient_excess_decay, holder_seminorm, morrey_decay, HolderSeminorm};
pub use free_boundary::{free_boundary_points, growth_dichotomy, lipschitz_certificate, GrowthOptions};
pub use maximal::maximal_function;
pub use ratios::{
    caccioppoli_ratio, comparison_estimate, poincare_check, reverse_holder, small_radius, ComparisonParams, SmallRadius,
};

/// Absolute tolerance on fitted log-log slopes.
pub const FIT_TOL: f64 = 0.05;
/// Default reverse Hoelder gain exponent.
pub const S0_DEFAULT: f64 = 0.1;
/// Default relative growth allowed by the Lipschitz certificate.
pub const LIP_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub key: String,
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// Unweighted least-squares line through `(log r, log y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: String,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub rows: Vec<EstimateRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<Fit>,
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub pass: bool,
}

/// One line of the estimate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub name: String,
    pub key: String,
    pub h: f64,
    pub r: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

impl EstimateReport {
    pub fn new(name: &str, grid: &Grid) -> Self {
        EstimateReport {
            name: name.to_string(),
            h: grid.h_max(),
            family: None,
            lambda: None,
            rows: Vec::new(),
            fit: None,
            scalars: BTreeMap::new(),
            warnings: Vec::new(),
            pass: true,
        }
    }

    pub(crate) fn with_phi(mut self, phi: &PhiFunction) -> Self {
        self.family = Some(phi.family().name().to_string());
        self
    }

    pub(crate) fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn push(&mut self, key: impl Into<String>, r: f64, lhs: f64, rhs: f64, pass: bool) {
        let ratio = ratio(lhs, rhs);
        let pass = pass && lhs.is_finite() && rhs.is_finite() && ratio.is_finite() && lhs >= 0.0 && rhs >= 0.0;
        self.rows.push(EstimateRow {
            key: key.into(),
            r,
            lhs,
            rhs,
            ratio,
            pass,
        });
        self.pass &= pass;
    }

    /// Ratio of the single row, or the largest ratio over rows.
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }

    /// Concatenate reports of one estimate (e.g. several balls); row keys get
    /// the given labels as prefixes.
    pub fn combine(name: &str, parts: Vec<(String, EstimateReport)>) -> Result<EstimateReport> {
        let Some(first) = parts.first() else {
            return Err(Error::Input("nothing to combine".into()));
        };
        let mut out = EstimateReport {
            name: name.to_string(),
            h: first.1.h,
            family: first.1.family.clone(),
            lambda: first.1.lambda,
            rows: Vec::new(),
            fit: None,
            scalars: BTreeMap::new(),
            warnings: Vec::new(),
            pass: true,
        };
        for (label, rep) in parts {
            if rep.h != out.h {
                return Err(Error::GridMismatch(format!(
                    "cannot combine h = {} with h = {}",
                    out.h, rep.h
                )));
            }
            for mut row in rep.rows {
                row.key = if row.key.is_empty() {
                    label.clone()
                } else {
                    format!("{label}/{}", row.key)
                };
                out.rows.push(row);
            }
            for (k, v) in rep.scalars {
                out.scalars.insert(format!("{label}/{k}"), v);
            }
            out.warnings
                .extend(rep.warnings.into_iter().map(|w| format!("{label}: {w}")));
            out.pass &= rep.pass;
        }
        Ok(out)
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows
            .iter()
            .map(|r| CsvRow {
                name: self.name.clone(),
                key: r.key.clone(),
                h: self.h,
                r: r.r,
                lhs: r.lhs,
                rhs: r.rhs,
                ratio: r.ratio,
                pass: r.pass,
            })
            .collect()
    }
}

/// Write the rows of several reports to one CSV file.
pub fn write_reports_csv(reports: &[EstimateReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rep in reports {
        for row in rep.csv_rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub(crate) fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

pub fn fit_loglog(r: &[f64], y: &[f64]) -> Result<Fit> {
    if r.len() != y.len() || r.len() < 2 {
        return Err(Error::Input("a log-log fit needs at least two points".into()));
    }
    if r.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Input("log-log fit needs positive finite data".into()));
    }
    let xs: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("log-log fit needs distinct radii".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(Fit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
        points: xs.len(),
    })
}

/// Per-cell gradient magnitudes and integrands.
pub(crate) struct CellData {
    pub grad_norm: Vec<f64>,
    /// Corner averages of `u`.
    pub center_values: Vec<f64>,
    pub phis: Vec<LocalPhi>,
}

impl CellData {
    pub fn new(phi: Option<&PhiFunction>, u: &Field) -> Result<Self> {
        let grid = u.grid();
        let grad = crate::grid::gradient(u);
        let grad_norm = grad.into_iter().map(crate::grid::norm).collect();
        let v = u.values();
        let center_values = (0..grid.num_cells())
            .map(|c| {
                let (corners, m) = grid.cell_corners(c);
                corners[..m].iter().map(|&k| v[k]).sum::<f64>() / m as f64
            })
            .collect();
        let phis = match phi {
            Some(p) => crate::solver::cell_integrands(p, grid)?,
            None => Vec::new(),
        };
        Ok(CellData {
            grad_norm,
            center_values,
            phis,
        })
    }

    /// `phi(x_c, |grad u|)` per cell.
    pub fn phi_grad(&self) -> Vec<f64> {
        self.phis
            .iter()
            .zip(&self.grad_norm)
            .map(|(p, &g)| p.value(g))
            .collect()
    }
}

pub(crate) fn avg(grid: &Grid, cell_values: &[f64], ball: &Ball) -> Result<f64> {
    ball_average_cells(grid, cell_values, ball)
}

pub(crate) fn check_ball(grid: &Grid, ball: &Ball) -> Result<()> {
    if !(ball.radius > 0.0) || !ball.radius.is_finite() {
        return Err(Error::Input(format!(
            "ball radius must be positive, got {}",
            ball.radius
        )));
    }
    if !grid.contains(ball.center) {
        return Err(Error::Input(format!(
            "ball center {:?} lies outside the grid",
            ball.center
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_power_law() {
        let r = [0.05, 0.1, 0.2, 0.4];
        let y: Vec<f64> = r.iter().map(|x: &f64| 3.0 * x.powf(-0.3)).collect();
        let f = fit_loglog(&r, &y).unwrap();
        assert!((f.slope + 0.3).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert!(fit_loglog(&[0.1], &[1.0]).is_err());
    }

    #[test]
    fn combine_prefixes_keys() {
        let g = Grid::unit_square(3);
        let mut a = EstimateReport::new("x", &g);
        a.push("", 0.1, 1.0, 2.0, true);
        let mut b = EstimateReport::new("x", &g);
        b.push("k0", 0.2, 0.0, 2.0, true);
        let c = EstimateReport::combine("x", vec![("b0".into(), a), ("b1".into(), b)]).unwrap();
        assert_eq!(c.rows[0].key, "b0");
        assert_eq!(c.rows[1].key, "b1/k0");
        assert_eq!(c.rows[1].ratio, 0.0);
        assert!(c.pass);
    }
}
