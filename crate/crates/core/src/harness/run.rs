use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{pad, DomainSpec, EstimateSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::estimates::{
    blowup_run, caccioppoli_ratio, comparison_estimate, free_boundary_points, gradient_excess_decay, growth_dichotomy,
    holder_seminorm, lipschitz_certificate, maximal_function, morrey_decay, poincare_check, reverse_holder,
    write_reports_csv, BlowupOptions, ComparisonParams, EstimateReport, GrowthOptions,
};
use crate::expr::Expr;
use crate::grid::{gradient, norm, write_field_binary, Ball, Field, Grid, Point};
use crate::orlicz::{regularize, PhiFunction, RegularizeOptions};
use crate::solver::{check_almost_min, minimize, solve_1d_exact, CompetitorSpec, Functional, SolveLog};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Treat solver nonconvergence as an error instead of a warning.
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub functional: Functional,
    pub field: Field,
    pub log: SolveLog,
    pub seconds: f64,
}

/// Dirichlet data on the boundary nodes and the initial guess elsewhere,
/// both sampled from the config's expressions.
pub fn boundary_field(cfg: &ExperimentConfig, grid: &Grid) -> Result<Field> {
    let expr = cfg.boundary_expr()?;
    let init = cfg.initial.as_deref().map(Expr::parse).transpose()?;
    let mut values = Vec::with_capacity(grid.num_nodes());
    for k in 0..grid.num_nodes() {
        let x = grid.node_coord(k);
        let e = match &init {
            Some(i) if !grid.is_domain_boundary(k) => i,
            _ => &expr,
        };
        let v = e.eval(x)?;
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("data must be nonnegative, got {v} at {x:?}")));
        }
        values.push(v);
    }
    Field::new(grid.clone(), values)
}

/// Minimize the config's functional with `cells` cells per axis.
pub fn solve_config(
    cfg: &ExperimentConfig,
    cells: usize,
    opts: &RunOptions,
    warnings: &mut Vec<String>,
) -> Result<Solved> {
    let grid = cfg.domain.grid(cells)?;
    let functional = Functional::new(cfg.phi()?, cfg.lambda, grid.clone())?;
    let data = boundary_field(cfg, &grid)?;
    let mut so = cfg.solver.clone();
    so.seed = cfg.seed;
    let t = Instant::now();
    let m = minimize(&functional, &data, &so)?;
    let seconds = t.elapsed().as_secs_f64();
    if !m.log.converged {
        let msg = format!(
            "solver did not converge at n = {cells} (energy {:.6e})",
            m.log.final_energy
        );
        if opts.strict {
            return Err(Error::Solver(msg));
        }
        warnings.push(msg);
    }
    Ok(Solved {
        functional,
        field: m.field,
        log: m.log,
        seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRecord {
    pub cells: usize,
    pub h: f64,
    pub energy: f64,
    pub solver_converged: bool,
    /// Paths relative to the manifest's directory.
    pub field: PathBuf,
    pub estimates_csv: PathBuf,
    pub solve_seconds: f64,
    pub estimate_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub name: String,
    pub key: String,
    pub h_coarse: f64,
    pub h_fine: f64,
    pub coarse: f64,
    pub fine: f64,
    pub delta: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub config_hash: String,
    pub family: String,
    pub domain: DomainSpec,
    pub seed: u64,
    pub resolutions: Vec<ResolutionRecord>,
    pub summary_json: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_csv: Option<PathBuf>,
    /// `name@n<cells>` and `stability/name` verdicts.
    pub passes: BTreeMap<String, bool>,
    pub warnings: Vec<String>,
    pub pass: bool,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }
}

#[derive(Debug, Serialize)]
struct ResolutionSummary<'a> {
    cells: usize,
    h: f64,
    solve: &'a SolveLog,
    reports: &'a [EstimateReport],
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    id: &'a str,
    config_hash: &'a str,
    resolutions: Vec<ResolutionSummary<'a>>,
    stability: &'a [StabilityRow],
    skipped: &'a [String],
}

/// Names for the suite entries: the kind, with the entry index appended when a
/// kind occurs more than once.
fn estimate_names(specs: &[EstimateSpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let dup = specs.iter().filter(|o| o.kind() == s.kind()).count() > 1;
            if dup {
                format!("{}_{i}", s.kind())
            } else {
                s.kind().to_string()
            }
        })
        .collect()
}

fn is_skippable(e: &Error) -> bool {
    matches!(e, Error::Precondition(_) | Error::DegenerateBall { .. })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    phi: &'a PhiFunction,
    solved: &'a Solved,
    coarse_points: &'a [Point],
}

/// Evaluate a per-ball estimate on every ball; balls whose preconditions fail
/// are skipped and noted.
fn per_ball(
    name: &str,
    balls: &[Ball],
    skipped: &mut Vec<String>,
    mut f: impl FnMut(&Ball) -> Result<EstimateReport>,
) -> Result<Option<EstimateReport>> {
    let mut parts = Vec::new();
    for (k, ball) in balls.iter().enumerate() {
        match f(ball) {
            Ok(rep) => parts.push((format!("b{k}"), rep)),
            Err(e) if is_skippable(&e) => skipped.push(format!("{name} b{k}: {e}")),
            Err(e) => return Err(e),
        }
    }
    if parts.is_empty() {
        return Ok(None);
    }
    EstimateReport::combine(name, parts).map(Some)
}

fn run_estimate(
    ctx: &Ctx,
    index: usize,
    name: &str,
    spec: &EstimateSpec,
    skipped: &mut Vec<String>,
) -> Result<Option<EstimateReport>> {
    let cfg = ctx.cfg;
    let phi = ctx.phi;
    let u = &ctx.solved.field;
    let grid = u.grid();
    let lambda = cfg.lambda;
    let seed = cfg.estimate_seed(index);
    let rename = |mut r: EstimateReport| {
        r.name = name.to_string();
        r
    };
    let rep = match spec {
        EstimateSpec::Exact1d {
            breakpoint_tol,
            energy_tol,
        } => Some(exact_1d_report(ctx, name, *breakpoint_tol, *energy_tol)?),
        EstimateSpec::Caccioppoli { balls, .. } => {
            let balls = balls.resolve(&cfg.domain, seed);
            per_ball(name, &balls, skipped, |b| {
                caccioppoli_ratio(phi, lambda, u, &b.scaled(2.0))
            })?
        }
        EstimateSpec::ReverseHolder { balls, s0, t, .. } => {
            let balls = balls.resolve(&cfg.domain, seed);
            per_ball(name, &balls, skipped, |b| reverse_holder(phi, lambda, u, b, *s0, *t))?
        }
        EstimateSpec::Comparison { balls, beta, s0, .. } => {
            let balls = balls.resolve(&cfg.domain, seed);
            let params = ComparisonParams {
                lambda,
                beta: *beta,
                s0: *s0,
                r0: None,
            };
            per_ball(name, &balls, skipped, |b| {
                let reg = regularize(phi, grid, &b.scaled(2.0), &RegularizeOptions::default())?;
                comparison_estimate(phi, u, b, &reg, &params)
            })?
        }
        EstimateSpec::Poincare { balls, s, .. } => {
            let balls = balls.resolve(&cfg.domain, seed);
            per_ball(name, &balls, skipped, |b| poincare_check(phi, u, b, *s))?
        }
        EstimateSpec::Morrey { center, radii, sigma } => Some(rename(morrey_decay(u, pad(center), radii, *sigma)?)),
        EstimateSpec::GradientExcess {
            center,
            radii,
            alpha_min,
        } => match gradient_excess_decay(u, pad(center), radii, *alpha_min) {
            Ok(r) => Some(rename(r)),
            Err(e) if is_skippable(&e) => {
                skipped.push(format!("{name}: {e}"));
                None
            }
            Err(e) => return Err(e),
        },
        EstimateSpec::Holder { alpha, region, budget } => {
            let ball = region.as_ref().map(|b| b.ball());
            let hs = holder_seminorm(u, *alpha, ball.as_ref(), *budget, seed)?;
            let mut rep = EstimateReport::new(name, grid);
            rep.push("", ball.map_or(0.0, |b| b.radius), hs.value, hs.value, true);
            rep.scalars.insert("pairs".into(), hs.pairs as f64);
            rep.scalars
                .insert("exhaustive".into(), if hs.exhaustive { 1.0 } else { 0.0 });
            Some(rep)
        }
        EstimateSpec::Growth { k_max, base_radius, .. } => {
            if ctx.coarse_points.is_empty() {
                skipped.push(format!("{name}: no free-boundary point"));
                None
            } else {
                let opts = GrowthOptions {
                    k_max: *k_max,
                    base_radius: *base_radius,
                    m: 1.0,
                };
                let mut parts = Vec::new();
                for (k, &x0) in ctx.coarse_points.iter().enumerate() {
                    parts.push((format!("p{k}"), growth_dichotomy(u, x0, &opts)?));
                }
                Some(EstimateReport::combine(name, parts)?)
            }
        }
        // evaluated across resolutions by the caller
        EstimateSpec::Lipschitz { .. } => None,
        EstimateSpec::AlmostMinimizer { balls, kappa, beta } => {
            let balls = balls.resolve(&cfg.domain, seed);
            let comp = CompetitorSpec {
                seed,
                ..Default::default()
            };
            let cert = check_almost_min(&ctx.solved.functional, u, *kappa, *beta, &balls, &comp)?;
            let mut rep = EstimateReport::new(name, grid).with_phi(phi).with_lambda(lambda);
            for (k, b) in cert.balls.iter().enumerate() {
                rep.push(
                    format!("b{k}"),
                    b.ball.radius,
                    b.energy_u,
                    b.bound * b.worst_energy,
                    b.pass,
                );
            }
            rep.scalars.insert("worst_ratio".into(), cert.worst_ratio);
            Some(rep)
        }
        EstimateSpec::Blowup { x0, j_max, sigma } => {
            let x0 = x0
                .as_ref()
                .map(|x| pad(x))
                .or_else(|| ctx.coarse_points.first().copied());
            match x0 {
                None => {
                    skipped.push(format!("{name}: no free-boundary point"));
                    None
                }
                Some(x0) => {
                    let opts = BlowupOptions {
                        j_max: *j_max,
                        sigma: *sigma,
                        lambda,
                        ..Default::default()
                    };
                    Some(rename(blowup_run(phi, u, x0, &opts)?.1))
                }
            }
        }
        EstimateSpec::Maximal { r_max } => {
            let g: Vec<f64> = gradient(u).into_iter().map(norm).collect();
            let m = maximal_function(grid, &g, *r_max)?;
            let sup_m = m.iter().copied().fold(0.0, f64::max);
            let sup_g = g.iter().copied().fold(0.0, f64::max);
            let mut rep = EstimateReport::new(name, grid);
            // the maximal function of |grad u| never exceeds its sup
            rep.push("", *r_max, sup_m, sup_g, sup_m <= sup_g * (1.0 + 1e-12));
            Some(rep)
        }
    };
    Ok(rep)
}

fn exact_1d_report(ctx: &Ctx, name: &str, bp_tol: f64, e_tol: f64) -> Result<EstimateReport> {
    let u = &ctx.solved.field;
    let grid = u.grid();
    let (lo, hi) = (grid.lo()[0], grid.hi()[0]);
    let v = u.values();
    let exact = solve_1d_exact(ctx.phi, ctx.cfg.lambda, lo, hi, v[0], v[v.len() - 1])?;
    let h = grid.h_max();
    let mut rep = EstimateReport::new(name, grid)
        .with_phi(ctx.phi)
        .with_lambda(ctx.cfg.lambda);
    let discrete = free_boundary_points(u);
    for (k, &s) in exact.breakpoints().iter().enumerate() {
        let err = discrete.iter().map(|p| (p[0] - s).abs()).fold(f64::INFINITY, f64::min);
        rep.push(format!("breakpoint{k}"), s, err, bp_tol * h, err <= bp_tol * h);
    }
    let e = ctx.solved.log.final_energy;
    let err = (e - exact.energy).abs();
    rep.push("energy", hi - lo, err, e_tol * h, err <= e_tol * h);
    rep.push(
        "slope_residual",
        exact.slope_star,
        exact.slope_residual,
        1e-10,
        exact.slope_residual <= 1e-10,
    );
    rep.scalars.insert("exact_energy".into(), exact.energy);
    rep.scalars.insert("discrete_energy".into(), e);
    rep.scalars.insert("slope_star".into(), exact.slope_star);
    Ok(rep)
}

/// Values compared across resolutions: row ratios, or the constant `C` for
/// growth reports.
fn stability_metrics(rep: &EstimateReport) -> Vec<(String, f64)> {
    let growth = rep.scalars.keys().any(|k| k == "C" || k.ends_with("/C"));
    if growth {
        rep.scalars
            .iter()
            .filter(|(k, _)| *k == "C" || k.ends_with("/C"))
            .map(|(k, &v)| (k.clone(), v))
            .collect()
    } else {
        rep.rows.iter().map(|r| (r.key.clone(), r.ratio)).collect()
    }
}

pub fn relative_delta(coarse: f64, fine: f64) -> f64 {
    if coarse == fine {
        0.0
    } else if coarse == 0.0 {
        f64::INFINITY
    } else {
        (fine - coarse).abs() / coarse.abs()
    }
}

/// Free-boundary points closest to the domain centre, ties by node order.
pub fn central_free_boundary_points(u: &Field, domain: &DomainSpec, count: usize) -> Vec<Point> {
    let c = domain.center();
    let mut pts = free_boundary_points(u);
    pts.sort_by(|a, b| {
        let da = norm([a[0] - c[0], a[1] - c[1]]);
        let db = norm([b[0] - c[0], b[1] - c[1]]);
        da.total_cmp(&db)
    });
    pts.truncate(count);
    pts
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    Ok(())
}

/// Solve at every resolution, evaluate the estimate suite and write fields,
/// CSVs, a JSON summary and the manifest into `<output_dir>/<id>/`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = cfg.output_dir.join(&cfg.id);
    std::fs::create_dir_all(&dir)?;
    let phi = cfg.phi()?;
    let names = estimate_names(&cfg.estimates);
    let hash = cfg.hash();
    let mut warnings = Vec::new();
    let mut skipped = Vec::new();
    let mut passes = BTreeMap::new();
    let mut records = Vec::new();
    let mut all_reports: Vec<Vec<EstimateReport>> = Vec::new();
    let mut logs = Vec::new();
    let mut coarse_points: Vec<Point> = Vec::new();
    let mut previous: Option<Field> = None;

    for (ri, &cells) in cfg.resolutions.iter().enumerate() {
        let solved = solve_config(cfg, cells, opts, &mut warnings)?;
        let t = Instant::now();
        if ri == 0 {
            let want = cfg
                .estimates
                .iter()
                .map(|e| match e {
                    EstimateSpec::Growth {
                        points: None, count, ..
                    } => *count,
                    EstimateSpec::Blowup { x0: None, .. } => 1,
                    _ => 0,
                })
                .max()
                .unwrap_or(0);
            coarse_points = central_free_boundary_points(&solved.field, &cfg.domain, want);
        }
        let mut reports = Vec::new();
        for (i, spec) in cfg.estimates.iter().enumerate() {
            let points: Vec<Point> = match spec {
                EstimateSpec::Growth { points: Some(p), .. } => p.iter().map(|x| pad(x)).collect(),
                EstimateSpec::Growth { count, .. } => coarse_points.iter().take(*count).copied().collect(),
                _ => coarse_points.clone(),
            };
            let ctx = Ctx {
                cfg,
                phi: &phi,
                solved: &solved,
                coarse_points: &points,
            };
            let rep = match spec {
                EstimateSpec::Lipschitz { region, tol } => match &previous {
                    Some(prev) => {
                        let ball = region.as_ref().map(|b| b.ball());
                        let mut r = lipschitz_certificate(prev, &solved.field, ball.as_ref(), *tol)?;
                        r.name = names[i].clone();
                        Some(r)
                    }
                    None => None,
                },
                _ => run_estimate(&ctx, i, &names[i], spec, &mut skipped)?,
            };
            if let Some(rep) = rep {
                passes.insert(format!("{}@n{cells}", names[i]), rep.pass);
                warnings.extend(rep.warnings.iter().map(|w| format!("{}@n{cells}: {w}", names[i])));
                reports.push(rep);
            }
        }
        let estimate_seconds = t.elapsed().as_secs_f64();
        let field_name = PathBuf::from(format!("{}_n{cells}_u.bin", cfg.id));
        write_field_binary(&solved.field, BufWriter::new(File::create(dir.join(&field_name))?))?;
        let csv_name = PathBuf::from(format!("{}_n{cells}_estimates.csv", cfg.id));
        write_reports_csv(&reports, &dir.join(&csv_name))?;
        records.push(ResolutionRecord {
            cells,
            h: solved.field.grid().h_max(),
            energy: solved.log.final_energy,
            solver_converged: solved.log.converged,
            field: field_name,
            estimates_csv: csv_name,
            solve_seconds: solved.seconds,
            estimate_seconds,
        });
        all_reports.push(reports);
        logs.push(solved.log);
        previous = Some(solved.field);
    }

    let stability = stability_rows(cfg, &names, &records, &all_reports);
    for row in &stability {
        let key = format!("stability/{}", row.name);
        let entry = passes.entry(key).or_insert(true);
        *entry &= row.pass;
    }
    let stability_csv = if stability.is_empty() {
        None
    } else {
        let name = PathBuf::from(format!("{}_stability.csv", cfg.id));
        let mut w = csv::Writer::from_path(dir.join(&name))?;
        for row in &stability {
            w.serialize(row)?;
        }
        w.flush()?;
        Some(name)
    };

    let summary_name = PathBuf::from(format!("{}_summary.json", cfg.id));
    let summary = Summary {
        id: &cfg.id,
        config_hash: &hash,
        resolutions: records
            .iter()
            .zip(&logs)
            .zip(&all_reports)
            .map(|((r, log), reps)| ResolutionSummary {
                cells: r.cells,
                h: r.h,
                solve: log,
                reports: reps,
            })
            .collect(),
        stability: &stability,
        skipped: &skipped,
    };
    write_json(&dir.join(&summary_name), &summary)?;
    warnings.extend(skipped.iter().map(|s| format!("skipped {s}")));

    let manifest = RunManifest {
        id: cfg.id.clone(),
        config_hash: hash,
        family: phi.family().name().to_string(),
        domain: cfg.domain.clone(),
        seed: cfg.seed,
        resolutions: records,
        summary_json: summary_name,
        stability_csv,
        pass: passes.values().all(|&p| p),
        passes,
        warnings,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(format!("{}_manifest.json", cfg.id)), &manifest)?;
    Ok(manifest)
}

fn stability_rows(
    cfg: &ExperimentConfig,
    names: &[String],
    records: &[ResolutionRecord],
    reports: &[Vec<EstimateReport>],
) -> Vec<StabilityRow> {
    let mut out = Vec::new();
    for (spec, name) in cfg.estimates.iter().zip(names) {
        let Some(tol) = spec.stability() else { continue };
        for w in 0..records.len().saturating_sub(1) {
            let find = |i: usize| reports[i].iter().find(|r| &r.name == name);
            let (Some(a), Some(b)) = (find(w), find(w + 1)) else {
                continue;
            };
            let fine: BTreeMap<String, f64> = stability_metrics(b).into_iter().collect();
            for (key, coarse) in stability_metrics(a) {
                let Some(&f) = fine.get(&key) else { continue };
                let delta = relative_delta(coarse, f);
                out.push(StabilityRow {
                    name: name.clone(),
                    key,
                    h_coarse: records[w].h,
                    h_fine: records[w + 1].h,
                    coarse,
                    fine: f,
                    delta,
                    tol,
                    pass: delta <= tol,
                });
            }
        }
    }
    out
}

/// Independent runs on a worker pool; results keep the input order.
pub fn run_many(configs: &[ExperimentConfig], opts: &RunOptions) -> Vec<Result<RunManifest>> {
    configs.par_iter().map(|c| run(c, opts)).collect()
}
