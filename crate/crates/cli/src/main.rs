use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use orlicz_fb::estimates::{blowup_run, write_reports_csv, BlowupOptions, SigmaRule};
use orlicz_fb::grid::{read_field_binary, write_field_binary, write_field_csv, Ball, Field};
use orlicz_fb::harness::{self, central_free_boundary_points, solve_config, ExperimentConfig, RunManifest, RunOptions};
use orlicz_fb::orlicz::{regularize, RegularizeOptions};
use orlicz_fb::solver::{energy, harmonic_replacement, DirichletOptions, Functional};
use orlicz_fb::Error;

/// Minimizers and regularity diagnostics for Alt-Caffarelli type functionals
/// with generalized Orlicz growth.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Fail with exit code 3 when the solver does not converge.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Cells per axis, e.g. `128,256`; overrides the config.
    #[arg(long, value_delimiter = ',')]
    resolutions: Option<Vec<usize>>,
}

impl Common {
    /// Apply the overrides and validate; `suite = false` drops the estimate
    /// suite for commands that do not evaluate it.
    fn load(&self, suite: bool) -> anyhow::Result<ExperimentConfig> {
        let mut cfg =
            ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(res) = &self.resolutions {
            cfg.resolutions = res.clone();
        }
        if !suite {
            cfg.estimates.clear();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn run_options(&self) -> RunOptions {
        RunOptions { strict: self.strict }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Minimize at every resolution and write the fields.
    Solve(Common),
    /// Solve and evaluate the config's estimate suite.
    Verify(Common),
    /// Harmonic replacement of the solution on a ball.
    Replace {
        #[command(flatten)]
        common: Common,
        /// `x,y,r` (or `x,r` in 1D).
        #[arg(long, value_delimiter = ',', required = true)]
        ball: Vec<f64>,
        /// Use a stored field instead of solving.
        #[arg(long, value_name = "FILE")]
        field: Option<PathBuf>,
    },
    /// Blow-up sequence at a free-boundary point of the finest solve.
    Blowup {
        #[command(flatten)]
        common: Common,
        /// Centre; defaults to the free-boundary point nearest the domain centre.
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        j_max: usize,
    },
    /// Merge run manifests into one CSV and a summary table.
    Report {
        manifests: Vec<PathBuf>,
        /// Consolidated CSV to write.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the structural condition checks on the config's integrand.
    CheckPhi(Common),
}

/// 0 pass, 1 suite failure, 2 invalid input, 3 solver failure under `--strict`.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Solver(_)) => 3,
        Some(Error::Config { .. } | Error::Json(_) | Error::Expr(_) | Error::Input(_) | Error::Domain(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Solve(c) => {
            let cfg = c.load(false)?;
            let m = harness::run(&cfg, &c.run_options())?;
            print_manifest(&cfg, &m);
            Ok(true)
        }
        Command::Verify(c) => {
            let cfg = c.load(true)?;
            let m = harness::run(&cfg, &c.run_options())?;
            print_manifest(&cfg, &m);
            Ok(m.pass)
        }
        Command::Replace { common, ball, field } => replace(&common, &ball, field.as_deref()),
        Command::Blowup { common, x0, j_max } => blowup(&common, x0.as_deref(), j_max),
        Command::Report { manifests, out } => {
            let rep = harness::report(&manifests)?;
            print!("{}", rep.summary_table());
            if let Some(path) = out {
                rep.write_csv(&path)?;
            }
            Ok(true)
        }
        Command::CheckPhi(c) => {
            let cfg = c.load(false)?;
            let verdicts = harness::check_phi(&cfg)?;
            for v in &verdicts {
                println!(
                    "{:<24} {:<5} worst {:>11.3e} over {} samples",
                    v.name,
                    if v.pass { "PASS" } else { "FAIL" },
                    v.worst,
                    v.samples
                );
            }
            Ok(verdicts.iter().all(|v| v.pass))
        }
    }
}

fn print_manifest(cfg: &ExperimentConfig, m: &RunManifest) {
    let dir = cfg.output_dir.join(&cfg.id);
    for r in &m.resolutions {
        println!(
            "n = {:<5} h = {:.4e}  energy = {:.10}  converged = {}  solve {:.2}s  estimates {:.2}s",
            r.cells, r.h, r.energy, r.solver_converged, r.solve_seconds, r.estimate_seconds
        );
    }
    for (k, pass) in &m.passes {
        println!("{:<5} {k}", if *pass { "PASS" } else { "FAIL" });
    }
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    println!("manifest: {}", dir.join(format!("{}_manifest.json", m.id)).display());
}

fn parse_point(dim: usize, xs: &[f64]) -> anyhow::Result<[f64; 2]> {
    if xs.len() != dim {
        bail!(Error::Input(format!("expected {dim} coordinates, got {}", xs.len())));
    }
    Ok([xs[0], xs.get(1).copied().unwrap_or(0.0)])
}

fn solution(
    c: &Common,
    cfg: &ExperimentConfig,
    cells: usize,
    stored: Option<&Path>,
) -> anyhow::Result<(Functional, Field)> {
    match stored {
        Some(path) => {
            let field = read_field_binary(File::open(path)?)?;
            let functional = Functional::new(cfg.phi()?, cfg.lambda, field.grid().clone())?;
            Ok((functional, field))
        }
        None => {
            let mut warnings = Vec::new();
            let s = solve_config(cfg, cells, &c.run_options(), &mut warnings)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok((s.functional, s.field))
        }
    }
}

fn replace(c: &Common, ball: &[f64], stored: Option<&Path>) -> anyhow::Result<bool> {
    let cfg = c.load(false)?;
    let dim = cfg.domain.dim();
    let Some((&r, center)) = ball.split_last() else {
        bail!(Error::Input("--ball needs a centre and a radius".into()));
    };
    let ball = Ball::new(parse_point(dim, center)?, r);
    let (functional, u) = solution(c, &cfg, cfg.resolutions[0], stored)?;
    let reg = regularize(
        functional.phi(),
        u.grid(),
        &ball.scaled(2.0),
        &RegularizeOptions::default(),
    )?;
    let rep = harmonic_replacement(&reg, &u, &ball, &DirichletOptions::default())?;
    let dir = cfg.output_dir.join(&cfg.id);
    std::fs::create_dir_all(&dir)?;
    let stem = format!("{}_replace", cfg.id);
    write_field_binary(
        &rep.field,
        BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?),
    )?;
    write_field_csv(&rep.field, &dir.join(format!("{stem}.csv")))?;
    println!(
        "iterations {}  residual {:.3e}  converged {}",
        rep.iterations, rep.residual, rep.converged
    );
    println!(
        "energy of u {:.10}  after replacement {:.10}",
        energy(&functional, &u)?,
        energy(&functional, &rep.field)?
    );
    if !rep.converged && c.strict {
        bail!(Error::Solver("harmonic replacement did not converge".into()));
    }
    Ok(true)
}

fn blowup(c: &Common, x0: Option<&[f64]>, j_max: usize) -> anyhow::Result<bool> {
    let cfg = c.load(false)?;
    let cells = *cfg.resolutions.last().expect("validated");
    let (functional, u) = solution(c, &cfg, cells, None)?;
    let x0 = match x0 {
        Some(x) => parse_point(cfg.domain.dim(), x)?,
        None => match central_free_boundary_points(&u, &cfg.domain, 1).first() {
            Some(&p) => p,
            None => bail!(Error::Precondition("the solution has no free-boundary point".into())),
        },
    };
    let opts = BlowupOptions {
        j_max,
        sigma: SigmaRule::Auto,
        lambda: cfg.lambda,
        ..Default::default()
    };
    let (run, rep) = blowup_run(functional.phi(), &u, x0, &opts)?;
    let dir = cfg.output_dir.join(&cfg.id);
    std::fs::create_dir_all(&dir)?;
    write_reports_csv(std::slice::from_ref(&rep), &dir.join(format!("{}_blowup.csv", cfg.id)))?;
    if let Some(v) = run.limit() {
        write_field_csv(v, &dir.join(format!("{}_blowup_limit.csv", cfg.id)))?;
    }
    println!("x0 = {:?}", x0);
    println!(
        "{:>3} {:>10} {:>10} {:>12} {:>12}",
        "j", "r", "sigma", "residual", "weight"
    );
    for i in 0..run.j.len() {
        println!(
            "{:>3} {:>10.4e} {:>10.4e} {:>12.4e} {:>12.4e}",
            run.j[i], run.r[i], run.sigma[i], run.residuals[i], run.weights[i]
        );
    }
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    Ok(rep.pass)
}
