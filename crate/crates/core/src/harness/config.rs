use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimates::SigmaRule;
use crate::expr::Expr;
use crate::grid::{Ball, Grid, Point};
use crate::orlicz::{DomainBox, PhiFunction, PhiSpec};
use crate::solver::SolveOptions;

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Axis-aligned box; the number of coordinates sets the dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn to_box(&self) -> DomainBox {
        DomainBox {
            lo: pad(&self.lo),
            hi: pad(&self.hi),
        }
    }

    /// Grid with `cells` cells per axis.
    pub fn grid(&self, cells: usize) -> Result<Grid> {
        let b = self.to_box();
        if self.dim() == 1 {
            Grid::new_1d(b.lo[0], b.hi[0], cells + 1)
        } else {
            Grid::new_2d(b.lo, b.hi, [cells + 1, cells + 1])
        }
    }

    pub fn center(&self) -> Point {
        let b = self.to_box();
        [0.5 * (b.lo[0] + b.hi[0]), 0.5 * (b.lo[1] + b.hi[1])]
    }
}

pub(crate) fn pad(x: &[f64]) -> Point {
    [x.first().copied().unwrap_or(0.0), x.get(1).copied().unwrap_or(0.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallSpec {
    pub fn ball(&self) -> Ball {
        Ball::new(pad(&self.center), self.radius)
    }
}

/// Explicit balls, or `count` balls of one radius drawn from the config seed
/// so that the doubled ball stays in the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BallSet {
    List(Vec<BallSpec>),
    Random { count: usize, radius: f64 },
}

impl BallSet {
    pub fn resolve(&self, domain: &DomainSpec, seed: u64) -> Vec<Ball> {
        match self {
            BallSet::List(list) => list.iter().map(BallSpec::ball).collect(),
            BallSet::Random { count, radius } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let b = domain.to_box();
                let margin = 2.0 * radius;
                (0..*count)
                    .map(|_| {
                        let mut c = [0.0; 2];
                        for (a, ca) in c.iter_mut().enumerate().take(domain.dim()) {
                            *ca = rng.gen_range(b.lo[a] + margin..=b.hi[a] - margin);
                        }
                        Ball::new(c, *radius)
                    })
                    .collect()
            }
        }
    }
}

fn default_s0() -> f64 {
    crate::estimates::S0_DEFAULT
}
fn one() -> f64 {
    1.0
}
fn default_k_max() -> usize {
    5
}
fn default_j_max() -> usize {
    5
}
fn default_budget() -> usize {
    200_000
}
fn default_count() -> usize {
    1
}
fn default_bp_tol() -> f64 {
    2.0
}
fn default_energy_tol() -> f64 {
    3.0
}
fn default_sigma() -> SigmaRule {
    SigmaRule::Auto
}

/// One entry of the estimate suite. `stability`, where present, is the
/// largest relative change of each ratio allowed between consecutive
/// resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimateSpec {
    /// Compare with the exact 1D minimizer: breakpoints within
    /// `breakpoint_tol` h and energy within `energy_tol` h.
    #[serde(rename = "exact_1d")]
    Exact1d {
        #[serde(default = "default_bp_tol")]
        breakpoint_tol: f64,
        #[serde(default = "default_energy_tol")]
        energy_tol: f64,
    },
    Caccioppoli {
        balls: BallSet,
        #[serde(default)]
        stability: Option<f64>,
    },
    ReverseHolder {
        balls: BallSet,
        #[serde(default = "default_s0")]
        s0: f64,
        #[serde(default = "one")]
        t: f64,
        #[serde(default)]
        stability: Option<f64>,
    },
    Comparison {
        balls: BallSet,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "default_s0")]
        s0: f64,
        #[serde(default)]
        stability: Option<f64>,
    },
    Poincare {
        balls: BallSet,
        #[serde(default = "one")]
        s: f64,
        #[serde(default)]
        stability: Option<f64>,
    },
    Morrey {
        center: Vec<f64>,
        radii: Vec<f64>,
        #[serde(default)]
        sigma: f64,
    },
    GradientExcess {
        center: Vec<f64>,
        radii: Vec<f64>,
        alpha_min: f64,
    },
    Holder {
        alpha: f64,
        #[serde(default)]
        region: Option<BallSpec>,
        #[serde(default = "default_budget")]
        budget: usize,
    },
    /// Growth away from free-boundary points; when `points` is absent the
    /// `count` points nearest the domain centre on the coarsest solve are used.
    Growth {
        #[serde(default)]
        points: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default = "default_k_max")]
        k_max: usize,
        #[serde(default)]
        base_radius: Option<f64>,
        #[serde(default)]
        stability: Option<f64>,
    },
    /// Compares consecutive resolutions.
    Lipschitz {
        #[serde(default)]
        region: Option<BallSpec>,
        #[serde(default)]
        tol: Option<f64>,
    },
    AlmostMinimizer {
        balls: BallSet,
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default = "one")]
        beta: f64,
    },
    Blowup {
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default = "default_j_max")]
        j_max: usize,
        #[serde(default = "default_sigma")]
        sigma: SigmaRule,
    },
    Maximal {
        r_max: f64,
    },
}

impl EstimateSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EstimateSpec::Exact1d { .. } => "exact_1d",
            EstimateSpec::Caccioppoli { .. } => "caccioppoli",
            EstimateSpec::ReverseHolder { .. } => "reverse_holder",
            EstimateSpec::Comparison { .. } => "comparison",
            EstimateSpec::Poincare { .. } => "poincare",
            EstimateSpec::Morrey { .. } => "morrey",
            EstimateSpec::GradientExcess { .. } => "gradient_excess",
            EstimateSpec::Holder { .. } => "holder",
            EstimateSpec::Growth { .. } => "growth",
            EstimateSpec::Lipschitz { .. } => "lipschitz",
            EstimateSpec::AlmostMinimizer { .. } => "almost_minimizer",
            EstimateSpec::Blowup { .. } => "blowup",
            EstimateSpec::Maximal { .. } => "maximal",
        }
    }

    pub fn stability(&self) -> Option<f64> {
        match self {
            EstimateSpec::Caccioppoli { stability, .. }
            | EstimateSpec::ReverseHolder { stability, .. }
            | EstimateSpec::Comparison { stability, .. }
            | EstimateSpec::Poincare { stability, .. }
            | EstimateSpec::Growth { stability, .. } => *stability,
            _ => None,
        }
    }

    fn balls(&self) -> Option<&BallSet> {
        match self {
            EstimateSpec::Caccioppoli { balls, .. }
            | EstimateSpec::ReverseHolder { balls, .. }
            | EstimateSpec::Comparison { balls, .. }
            | EstimateSpec::Poincare { balls, .. }
            | EstimateSpec::AlmostMinimizer { balls, .. } => Some(balls),
            _ => None,
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}
fn default_seed() -> u64 {
    0x5EED
}

/// A complete experiment: integrand, data, resolutions and estimate suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub integrand: PhiSpec,
    pub lambda: f64,
    pub domain: DomainSpec,
    /// Cells per axis; each a power of two.
    pub resolutions: Vec<usize>,
    /// Dirichlet data, in the expression grammar; also the initial guess
    /// unless `initial` is given.
    pub boundary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub estimates: Vec<EstimateSpec>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parse and validate; errors name the offending field, and the line and
    /// column for malformed JSON.
    pub fn from_json_str(src: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(src);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_json_str(&src)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(config_err("id", "must be a nonempty identifier of [A-Za-z0-9_-]"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(config_err(
                "lambda",
                format!("must be positive and finite, got {}", self.lambda),
            ));
        }
        let d = &self.domain;
        if !(d.dim() == 1 || d.dim() == 2) || d.hi.len() != d.dim() {
            return Err(config_err("domain", "lo and hi must both have 1 or 2 coordinates"));
        }
        if d.lo
            .iter()
            .zip(&d.hi)
            .any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite())
        {
            return Err(config_err("domain", "need lo < hi in every coordinate"));
        }
        if d.dim() == 2 && ((d.hi[0] - d.lo[0]) - (d.hi[1] - d.lo[1])).abs() > 1e-12 {
            return Err(config_err("domain", "2D domains must be squares"));
        }
        if self.resolutions.is_empty() {
            return Err(config_err("resolutions", "at least one resolution is required"));
        }
        for (i, &n) in self.resolutions.iter().enumerate() {
            if n < 4 || !n.is_power_of_two() {
                return Err(config_err(
                    format!("resolutions[{i}]"),
                    format!("{n} is not a power of two >= 4"),
                ));
            }
        }
        if self.resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("resolutions", "must be strictly increasing"));
        }
        let expr = Expr::parse(&self.boundary).map_err(|e| config_err("boundary", e.to_string()))?;
        let b = d.to_box();
        for corner in [b.lo, b.hi, [b.lo[0], b.hi[1]], [b.hi[0], b.lo[1]]] {
            let v = expr.eval(corner).map_err(|e| config_err("boundary", e.to_string()))?;
            if !(v >= 0.0) {
                return Err(config_err(
                    "boundary",
                    format!("data must be nonnegative, got {v} at {corner:?}"),
                ));
            }
        }
        if let Some(init) = &self.initial {
            Expr::parse(init).map_err(|e| config_err("initial", e.to_string()))?;
        }
        self.phi().map_err(|e| config_err("integrand", e.to_string()))?;
        self.solver
            .validate()
            .map_err(|e| config_err("solver", e.to_string()))?;
        let n_lip = self
            .estimates
            .iter()
            .filter(|e| matches!(e, EstimateSpec::Lipschitz { .. }))
            .count();
        if n_lip > 0 && self.resolutions.len() < 2 {
            return Err(config_err("estimates", "lipschitz needs at least two resolutions"));
        }
        for (i, est) in self.estimates.iter().enumerate() {
            self.validate_estimate(i, est)?;
        }
        Ok(())
    }

    fn validate_estimate(&self, i: usize, est: &EstimateSpec) -> Result<()> {
        let at = |field: &str| format!("estimates[{i}].{field}");
        let dim = self.domain.dim();
        let b = self.domain.to_box();
        let inside = |p: &[f64]| p.len() == dim && (0..dim).all(|a| p[a] >= b.lo[a] && p[a] <= b.hi[a]);
        if let Some(set) = est.balls() {
            match set {
                BallSet::List(list) => {
                    if list.is_empty() {
                        return Err(config_err(at("balls"), "empty ball list"));
                    }
                    for (k, ball) in list.iter().enumerate() {
                        if !inside(&ball.center) || !(ball.radius > 0.0) {
                            return Err(config_err(
                                format!("estimates[{i}].balls[{k}]"),
                                "center outside the domain or radius not positive",
                            ));
                        }
                    }
                }
                BallSet::Random { count, radius } => {
                    let side = (0..dim).map(|a| b.hi[a] - b.lo[a]).fold(f64::INFINITY, f64::min);
                    if *count == 0 || !(*radius > 0.0) || 4.0 * radius >= side {
                        return Err(config_err(at("balls"), "need count > 0 and 0 < 4 radius < domain side"));
                    }
                }
            }
        }
        match est {
            EstimateSpec::Exact1d { .. } if dim != 1 => Err(config_err(at("kind"), "exact_1d needs a 1D domain")),
            EstimateSpec::Morrey { center, radii, .. } | EstimateSpec::GradientExcess { center, radii, .. } => {
                if !inside(center) {
                    return Err(config_err(at("center"), "outside the domain"));
                }
                if radii.len() < 3 || radii.iter().any(|&r| !(r > 0.0)) {
                    return Err(config_err(at("radii"), "need at least 3 positive radii"));
                }
                Ok(())
            }
            EstimateSpec::Growth { points: Some(p), .. } if p.iter().any(|x| !inside(x)) => {
                Err(config_err(at("points"), "point outside the domain"))
            }
            EstimateSpec::Growth {
                points: None, count: 0, ..
            } => Err(config_err(at("count"), "must be positive")),
            EstimateSpec::Blowup { x0: Some(x), .. } if !inside(x) => Err(config_err(at("x0"), "outside the domain")),
            EstimateSpec::Holder { alpha, .. } if !(*alpha > 0.0 && *alpha <= 1.0) => {
                Err(config_err(at("alpha"), "must lie in (0, 1]"))
            }
            EstimateSpec::Maximal { r_max } if !(*r_max > 0.0) => Err(config_err(at("r_max"), "must be positive")),
            _ => Ok(()),
        }
    }

    pub fn phi(&self) -> Result<PhiFunction> {
        PhiFunction::from_spec(self.integrand.clone(), Some(self.domain.to_box()))
    }

    pub fn boundary_expr(&self) -> Result<Expr> {
        Ok(Expr::parse(&self.boundary)?)
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in,
    /// no insignificant whitespace). The output directory is not part of it.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Seed for the `index`-th estimate's random draws.
    pub(crate) fn estimate_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "id": "t",
        "integrand": {"family": "power_law", "params": {"p": 2.0}},
        "lambda": 1.0,
        "domain": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]},
        "resolutions": [16, 32],
        "boundary": "x1"
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 0x5EED);
        assert_eq!(c.domain.dim(), 2);
        assert!(c.estimates.is_empty());
    }

    #[test]
    fn hash_ignores_whitespace_and_defaults() {
        let a = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let squeezed: String = MINIMAL.split_whitespace().collect();
        let b = ExperimentConfig::from_json_str(&squeezed).unwrap();
        assert_eq!(a.hash(), b.hash());
        let explicit = MINIMAL.replace(r#""boundary": "x1""#, r#""boundary": "x1", "seed": 24301"#);
        assert_eq!(a.hash(), ExperimentConfig::from_json_str(&explicit).unwrap().hash());
        let other = MINIMAL.replace(r#""lambda": 1.0"#, r#""lambda": 1.5"#);
        assert_ne!(a.hash(), ExperimentConfig::from_json_str(&other).unwrap().hash());
    }

    #[test]
    fn diagnostics_name_the_field() {
        let neg = MINIMAL.replace(r#""lambda": 1.0"#, r#""lambda": -1.0"#);
        match ExperimentConfig::from_json_str(&neg) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "lambda"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("[16, 32]", "[16, 24]");
        assert!(
            matches!(ExperimentConfig::from_json_str(&bad), Err(Error::Config { path, .. }) if path == "resolutions[1]")
        );
        let typo = MINIMAL.replace(r#""boundary": "x1""#, r#""boundary": "x1 +""#);
        assert!(
            matches!(ExperimentConfig::from_json_str(&typo), Err(Error::Config { path, .. }) if path == "boundary")
        );
        let est = MINIMAL.replace(
            r#""boundary": "x1""#,
            r#""boundary": "x1", "estimates": [{"kind": "nope"}]"#,
        );
        match ExperimentConfig::from_json_str(&est) {
            Err(Error::Config { path, message }) => {
                assert!(path.starts_with("estimates[0]"), "{path}");
                assert!(message.contains("line"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn random_balls_are_seeded_and_inside() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let set = BallSet::Random { count: 5, radius: 0.1 };
        let a = set.resolve(&c.domain, 7);
        assert_eq!(a, set.resolve(&c.domain, 7));
        assert_ne!(a, set.resolve(&c.domain, 8));
        for b in &a {
            assert!(b.scaled(2.0).inside_box(&c.domain.grid(16).unwrap()));
        }
    }
}
