use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{log_space, HolderModulus, LocalPhi, PhiFunction};
use crate::error::{Error, Result};
use crate::grid::{Ball, Grid, Point};

/// Sampling lattice for condition checks.
#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub t: Vec<f64>,
    pub nodes: Vec<Point>,
    pub rtol: f64,
}

pub const RTOL_COND: f64 = 1e-9;

impl SampleSpec {
    /// 64 log-spaced `t` in `[1e-4, 1e4]` times every node of `grid`.
    pub fn for_grid(grid: &Grid) -> Self {
        SampleSpec {
            t: log_space(1e-4, 1e4, 64),
            nodes: (0..grid.num_nodes()).map(|k| grid.node_coord(k)).collect(),
            rtol: RTOL_COND,
        }
    }

    pub fn new(t: Vec<f64>, nodes: Vec<Point>) -> Self {
        SampleSpec {
            t,
            nodes,
            rtol: RTOL_COND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Point,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub name: String,
    pub pass: bool,
    /// Largest relative violation found; nonpositive values are slack.
    pub worst: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
}

#[derive(Clone, Copy)]
struct Worst {
    value: f64,
    order: usize,
    x: Point,
    t: f64,
    radius: Option<f64>,
}

impl Worst {
    fn none() -> Self {
        Worst {
            value: f64::NEG_INFINITY,
            order: usize::MAX,
            x: [f64::NAN; 2],
            t: f64::NAN,
            radius: None,
        }
    }

    // Deterministic under any reduction order: larger value wins, ties go to
    // the lower sample index.
    fn merge(a: Worst, b: Worst) -> Worst {
        let a_nan = a.value.is_nan();
        let b_nan = b.value.is_nan();
        if a_nan != b_nan {
            return if a_nan { a } else { b };
        }
        if b.value > a.value || (b.value == a.value && b.order < a.order) {
            b
        } else {
            a
        }
    }
}

fn verdict(name: impl Into<String>, w: Worst, samples: usize, rtol: f64) -> ConditionVerdict {
    let worst = if w.value == f64::NEG_INFINITY { 0.0 } else { w.value };
    ConditionVerdict {
        name: name.into(),
        pass: !worst.is_nan() && worst <= rtol,
        worst,
        witness: w.x[0].is_finite().then_some(Witness {
            x: w.x,
            t: w.t,
            radius: w.radius,
        }),
        samples,
    }
}

fn locals(phi: &PhiFunction, nodes: &[Point]) -> Result<Vec<LocalPhi>> {
    nodes.iter().map(|&x| phi.local(x)).collect()
}

/// Scan `f(x, t) / t^e` along the sampled `t` for each node; `increasing`
/// selects the direction. Violation is the relative drop (or rise).
fn ratio_monotone(
    name: String,
    phi: &PhiFunction,
    e: f64,
    spec: &SampleSpec,
    increasing: bool,
    f: impl Fn(&LocalPhi, f64) -> f64 + Sync,
) -> Result<ConditionVerdict> {
    let loc = locals(phi, &spec.nodes)?;
    let nt = spec.t.len();
    let w = loc
        .par_iter()
        .enumerate()
        .map(|(k, l)| {
            let mut w = Worst::none();
            let mut prev: Option<f64> = None;
            for (i, &t) in spec.t.iter().enumerate() {
                let r = f(l, t) / t.powf(e);
                if let Some(pr) = prev {
                    let v = if pr > 0.0 && r > 0.0 {
                        if increasing {
                            1.0 - r / pr
                        } else {
                            r / pr - 1.0
                        }
                    } else if increasing {
                        if r < pr {
                            1.0
                        } else {
                            0.0
                        }
                    } else if r > pr {
                        1.0
                    } else {
                        0.0
                    };
                    w = Worst::merge(
                        w,
                        Worst {
                            value: v,
                            order: k * nt + i,
                            x: spec.nodes[k],
                            t,
                            radius: None,
                        },
                    );
                }
                prev = Some(r);
            }
            w
        })
        .reduce(Worst::none, Worst::merge);
    Ok(verdict(name, w, loc.len() * nt, spec.rtol))
}

/// `(inc)_p`: `phi(x, t) / t^p` nondecreasing.
pub fn check_inc(phi: &PhiFunction, p: f64, spec: &SampleSpec) -> Result<ConditionVerdict> {
    ratio_monotone(format!("inc_{p}"), phi, p, spec, true, |l, t| l.value(t))
}

/// `(dec)_q`: `phi(x, t) / t^q` nonincreasing.
pub fn check_dec(phi: &PhiFunction, q: f64, spec: &SampleSpec) -> Result<ConditionVerdict> {
    ratio_monotone(format!("dec_{q}"), phi, q, spec, false, |l, t| l.value(t))
}

/// `(inc)_e` for the derivative `phi_t`.
pub fn check_deriv_inc(phi: &PhiFunction, e: f64, spec: &SampleSpec) -> Result<ConditionVerdict> {
    ratio_monotone(format!("deriv_inc_{e}"), phi, e, spec, true, |l, t| l.deriv(t))
}

/// `(dec)_e` for the derivative `phi_t`.
pub fn check_deriv_dec(phi: &PhiFunction, e: f64, spec: &SampleSpec) -> Result<ConditionVerdict> {
    ratio_monotone(format!("deriv_dec_{e}"), phi, e, spec, false, |l, t| l.deriv(t))
}

/// `(A0)`: `1/L <= phi(x, 1) <= L` at every node.
pub fn check_a0(phi: &PhiFunction, l: f64, spec: &SampleSpec) -> Result<ConditionVerdict> {
    let loc = locals(phi, &spec.nodes)?;
    let w = loc
        .par_iter()
        .enumerate()
        .map(|(k, lp)| {
            let v = lp.value(1.0);
            Worst {
                value: (1.0 / (l * v) - 1.0).max(v / l - 1.0),
                order: k,
                x: spec.nodes[k],
                t: 1.0,
                radius: None,
            }
        })
        .reduce(Worst::none, Worst::merge);
    Ok(verdict(format!("A0_{l}"), w, loc.len(), spec.rtol))
}

/// Pointwise min/max of `phi(x, t)` over grid nodes inside a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallEnvelope {
    pub ball: Ball,
    pub t: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn ball_envelope(phi: &PhiFunction, grid: &Grid, ball: &Ball, t: &[f64]) -> Result<BallEnvelope> {
    let nodes = grid.nodes_in_ball(ball);
    if nodes.is_empty() {
        return Err(Error::DegenerateBall {
            center: ball.center,
            radius: ball.radius,
        });
    }
    let pts: Vec<Point> = nodes.iter().map(|&k| grid.node_coord(k)).collect();
    let loc = locals(phi, &pts)?;
    let (lower, upper) = t
        .par_iter()
        .map(|&s| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for l in &loc {
                let v = l.value(s);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        })
        .unzip();
    Ok(BallEnvelope {
        ball: *ball,
        t: t.to_vec(),
        lower,
        upper,
    })
}

/// `(VA1)`: `phi^+ <= (1 + omega(r)) phi^-` wherever `phi^-` lies in
/// `[omega(r), 1/|B_r|]`, for every ball.
pub fn check_va1(
    phi: &PhiFunction,
    omega: &HolderModulus,
    balls: &[Ball],
    grid: &Grid,
    t: &[f64],
    rtol: f64,
) -> Result<ConditionVerdict> {
    let mut w = Worst::none();
    let mut samples = 0;
    for (b, ball) in balls.iter().enumerate() {
        let env = match ball_envelope(phi, grid, ball, t) {
            Ok(e) => e,
            Err(Error::DegenerateBall { .. }) => continue,
            Err(e) => return Err(e),
        };
        let wr = omega.eval(ball.radius);
        let cap = 1.0 / ball.measure(grid.dim());
        for (i, &s) in t.iter().enumerate() {
            let lo = env.lower[i];
            if lo < wr || lo > cap {
                continue;
            }
            samples += 1;
            let v = env.upper[i] / ((1.0 + wr) * lo) - 1.0;
            w = Worst::merge(
                w,
                Worst {
                    value: v,
                    order: b * t.len() + i,
                    x: ball.center,
                    t: s,
                    radius: Some(ball.radius),
                },
            );
        }
    }
    Ok(verdict("VA1", w, samples, rtol))
}

/// `(cons1)`: `p phi <= t phi_t <= q phi` with the envelope exponents.
pub fn check_cons1(phi: &PhiFunction, spec: &SampleSpec) -> Result<ConditionVerdict> {
    let (p, q) = (phi.envelope().p, phi.envelope().q);
    let loc = locals(phi, &spec.nodes)?;
    let nt = spec.t.len();
    let w = loc
        .par_iter()
        .enumerate()
        .map(|(k, l)| {
            let mut w = Worst::none();
            for (i, &t) in spec.t.iter().enumerate() {
                let v = l.value(t);
                if v <= 0.0 {
                    continue;
                }
                let e = t * l.deriv(t) / v;
                w = Worst::merge(
                    w,
                    Worst {
                        value: (1.0 - e / p).max(e / q - 1.0),
                        order: k * nt + i,
                        x: spec.nodes[k],
                        t,
                        radius: None,
                    },
                );
            }
            w
        })
        .reduce(Worst::none, Worst::merge);
    Ok(verdict("cons1", w, loc.len() * nt, spec.rtol))
}

/// `(cons2)` over `(x, s, t)` and `(cons1)` over `(x, t)`; the verdict
/// reports the worse of the two.
pub fn check_sandwich(phi: &PhiFunction, spec: &SampleSpec) -> Result<ConditionVerdict> {
    let (p, q) = (phi.envelope().p, phi.envelope().q);
    let stride = (spec.t.len() / 16).max(1);
    let sub: Vec<f64> = spec.t.iter().copied().step_by(stride).collect();
    let loc = locals(phi, &spec.nodes)?;
    let ns = sub.len();
    let w = loc
        .par_iter()
        .enumerate()
        .map(|(k, l)| {
            let mut w = Worst::none();
            for (a, &s) in sub.iter().enumerate() {
                let base = l.value(s);
                if base <= 0.0 {
                    continue;
                }
                for (b, &t) in sub.iter().enumerate() {
                    let (tp, tq) = (t.powf(p), t.powf(q));
                    let v = l.value(t * s) / base;
                    let viol = (1.0 - v / tp.min(tq)).max(v / tp.max(tq) - 1.0);
                    w = Worst::merge(
                        w,
                        Worst {
                            value: viol,
                            order: (k * ns + a) * ns + b,
                            x: spec.nodes[k],
                            t,
                            radius: None,
                        },
                    );
                }
            }
            w
        })
        .reduce(Worst::none, Worst::merge);
    let cons2 = verdict("cons2", w, loc.len() * ns * ns, spec.rtol);
    let cons1 = check_cons1(phi, spec)?;
    let mut out = if cons1.worst > cons2.worst {
        cons1
    } else {
        cons2.clone()
    };
    out.name = "sandwich".into();
    out.pass = cons2.pass && out.worst <= spec.rtol;
    out.samples += cons2.samples;
    Ok(out)
}
