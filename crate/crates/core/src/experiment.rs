//! Configuration-driven experiments.
//!
//! A configuration is a JSON object:
//!
//! ```json
//! {
//!   "name": "tau-ross",
//!   "kind": "tau",
//!   "seed": 7,
//!   "profiles": [
//!     { "kind": "builtin", "name": "RH3" },
//!     { "kind": "ross", "family": "complex", "dimension": 4, "scale": 1.0 },
//!     { "kind": "constant", "n": 2, "a": 0.5 },
//!     { "kind": "diagonal", "name": "wobble", "entries": ["1 + 3*tanh(t)^2"], "a": 1, "b": 2 }
//!   ],
//!   "tolerances": { "relative": 1e-8 },
//!   "grid": { "lo": 0.5, "hi": 40, "count": 80 }
//! }
//! ```
//!
//! Every field except `name` and `kind` is optional and falls back to the
//! defaults listed by [`default_tolerances`] and the kind runners. Surface
//! experiments take `"surface": {"kind": "builtin", "name": "pinched"}`,
//! `{"kind": "hyperbolic", "a": 1}` or `{"kind": "warped", "name": .., "f": "<expr in r>", "a": .., "b": ..}`.
//! The mean-value experiment takes `boundary_functions`, a list of
//! `{"name", "expr"}` with expressions in `theta`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{self, linear_grid, DirectionQuadrature};
use crate::boundary::{self, DEFAULT_BUMPS};
use crate::error::{Error, Result};
use crate::expr::ScalarFn;
use crate::jacobi::{self, JacobiOptions, ShapeOperator};
use crate::profile::{CurvatureProfile, RossFamily, RossProfile};
use crate::report::{Check, Report, Table};
use crate::surface::{self, GeodesicState, SurfacePoint, WarpedSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Comparison,
    Tangency,
    Horocycle,
    Tau,
    Entropy,
    Margulis,
    Measures,
    Meanvalue,
    RiccatiCrosscheck,
    Rigidity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::Comparison,
        ExperimentKind::Tangency,
        ExperimentKind::Horocycle,
        ExperimentKind::Tau,
        ExperimentKind::Entropy,
        ExperimentKind::Margulis,
        ExperimentKind::Measures,
        ExperimentKind::Meanvalue,
        ExperimentKind::RiccatiCrosscheck,
        ExperimentKind::Rigidity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Comparison => "comparison",
            ExperimentKind::Tangency => "tangency",
            ExperimentKind::Horocycle => "horocycle",
            ExperimentKind::Tau => "tau",
            ExperimentKind::Entropy => "entropy",
            ExperimentKind::Margulis => "margulis",
            ExperimentKind::Measures => "measures",
            ExperimentKind::Meanvalue => "meanvalue",
            ExperimentKind::RiccatiCrosscheck => "riccati-crosscheck",
            ExperimentKind::Rigidity => "rigidity",
        }
    }

    fn uses_profiles(self) -> bool {
        matches!(
            self,
            ExperimentKind::Horocycle
                | ExperimentKind::Tau
                | ExperimentKind::Entropy
                | ExperimentKind::Margulis
                | ExperimentKind::RiccatiCrosscheck
                | ExperimentKind::Rigidity
        )
    }

    fn uses_surface(self) -> bool {
        matches!(
            self,
            ExperimentKind::Comparison | ExperimentKind::Tangency | ExperimentKind::Horocycle
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileSpec {
    Builtin {
        name: String,
    },
    Ross {
        family: RossFamily,
        dimension: usize,
        #[serde(default = "unit")]
        scale: f64,
    },
    Constant {
        n: usize,
        a: f64,
    },
    Diagonal {
        name: String,
        entries: Vec<String>,
        a: f64,
        b: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl ProfileSpec {
    pub fn build(&self) -> Result<CurvatureProfile> {
        match self {
            ProfileSpec::Builtin { name } => builtin_profile(name),
            ProfileSpec::Ross {
                family,
                dimension,
                scale,
            } => Ok(RossProfile::new(*family, *dimension, *scale)?.profile()),
            ProfileSpec::Constant { n, a } => CurvatureProfile::constant_curvature(*n, *a),
            ProfileSpec::Diagonal { name, entries, a, b } => {
                CurvatureProfile::from_expressions(name.clone(), entries, *a, *b)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurfaceSpec {
    Builtin { name: String },
    Hyperbolic { a: f64 },
    Warped { name: String, f: String, a: f64, b: f64 },
}

impl SurfaceSpec {
    pub fn build(&self) -> Result<WarpedSurface> {
        match self {
            SurfaceSpec::Builtin { name } => builtin_surface(name),
            SurfaceSpec::Hyperbolic { a } => WarpedSurface::hyperbolic(*a),
            SurfaceSpec::Warped { name, f, a, b } => WarpedSurface::new(name.clone(), f, *a, *b),
        }
    }
}

/// Either an explicit list of points or `count` evenly spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points { points: Vec<f64> },
    Linear { lo: f64, hi: f64, count: usize },
}

impl GridSpec {
    pub fn linear(lo: f64, hi: f64, count: usize) -> Self {
        GridSpec::Linear { lo, hi, count }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        let v = match self {
            GridSpec::Points { points } => points.clone(),
            GridSpec::Linear { lo, hi, count } => {
                if *count < 2 || !(hi > lo) {
                    return config_err(format!("grid needs count >= 2 and hi > lo, got [{lo}, {hi}] x {count}"));
                }
                linear_grid(*lo, *hi, *count)
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return config_err("grid must be non-empty and finite");
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            return config_err("grid must be strictly increasing");
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFunctionSpec {
    pub name: String,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiles: Vec<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_trials: Option<usize>,
    /// Curvature scale of the model space for `measures` and `meanvalue`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Ball dimension for `measures`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_angle: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_functions: Vec<BoundaryFunctionSpec>,
    /// Mean-value radii are `2^0, …, 2^radius_budget`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_budget: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub plots: bool,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

/// Tolerance keys accepted by each kind, with their defaults.
pub fn default_tolerances(kind: ExperimentKind) -> &'static [(&'static str, f64)] {
    match kind {
        ExperimentKind::Tau => &[("relative", 1e-8), ("oracle", 1e-8), ("certificate_slack", 1e-10)],
        ExperimentKind::Entropy => &[
            ("slope", 1e-2),
            ("isoperimetric", 1e-8),
            ("mean_curvature", 1e-7),
            ("exponent", 1e-9),
        ],
        ExperimentKind::Margulis => &[("absolute", 1e-6), ("certificate_slack", 1e-10)],
        ExperimentKind::RiccatiCrosscheck => &[("sup", 1e-6)],
        ExperimentKind::Rigidity => &[("identity", 1e-8)],
        ExperimentKind::Horocycle => &[("spread_min", 1e-2), ("constancy", 1e-9)],
        ExperimentKind::Meanvalue => &[("deviation", 5e-2)],
        ExperimentKind::Comparison | ExperimentKind::Tangency | ExperimentKind::Measures => &[],
    }
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, kind: ExperimentKind) -> Self {
        ExperimentConfig {
            name: name.into(),
            kind,
            seed: 0,
            profiles: Vec::new(),
            surface: None,
            tolerances: BTreeMap::new(),
            grid: None,
            trials: None,
            visual_trials: None,
            a: None,
            dimension: None,
            xi_angle: None,
            boundary_functions: Vec::new(),
            radius_budget: None,
            output_dir: None,
            plots: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without running numerics:
    /// names, built-in references, tolerances and grids.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return config_err(format!(
                "name {:?} must be non-empty and use only letters, digits, '-', '_' and '.'",
                self.name
            ));
        }
        let allowed = default_tolerances(self.kind);
        for (k, v) in &self.tolerances {
            if !allowed.iter().any(|(name, _)| name == k) {
                let keys: Vec<&str> = allowed.iter().map(|p| p.0).collect();
                return config_err(format!(
                    "unknown tolerance {k:?} for kind {}; accepted: {keys:?}",
                    self.kind.as_str()
                ));
            }
            if !(v.is_finite() && *v > 0.0) {
                return config_err(format!("tolerance {k} must be positive, got {v}"));
            }
        }
        if let Some(g) = &self.grid {
            g.points()?;
        }
        if !self.profiles.is_empty() && !self.kind.uses_profiles() {
            return config_err(format!("kind {} takes no profiles", self.kind.as_str()));
        }
        if self.surface.is_some() && !self.kind.uses_surface() {
            return config_err(format!("kind {} takes no surface", self.kind.as_str()));
        }
        for p in &self.profiles {
            if let ProfileSpec::Builtin { name } = p {
                builtin_profile(name)?;
            }
        }
        if let Some(SurfaceSpec::Builtin { name }) = &self.surface {
            builtin_surface(name)?;
        }
        if self.trials == Some(0) {
            return config_err("trials must be positive");
        }
        if let Some(a) = self.a {
            if !(a.is_finite() && a > 0.0) {
                return config_err(format!("a must be positive, got {a}"));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or_else(|| {
            default_tolerances(self.kind)
                .iter()
                .find(|(k, _)| *k == key)
                .map(|p| p.1)
                .expect("tolerance key is declared for this kind")
        })
    }

    fn profile_list(&self) -> Result<Vec<CurvatureProfile>> {
        let specs = if self.profiles.is_empty() {
            default_suite()
        } else {
            self.profiles.clone()
        };
        specs.iter().map(|s| s.build()).collect()
    }

    fn surface(&self) -> Result<WarpedSurface> {
        match &self.surface {
            Some(s) => s.build(),
            None => Ok(WarpedSurface::pinched()),
        }
    }

    fn grid_or(&self, lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
        self.grid.clone().unwrap_or(GridSpec::linear(lo, hi, count)).points()
    }
}

/// The asymptotically harmonic suite: real hyperbolic spaces of dimension
/// 2 to 4 at three scales and the other three families in real dimension
/// twice their field dimension.
pub fn default_suite() -> Vec<ProfileSpec> {
    let mut v = Vec::new();
    for dim in 2..=4 {
        for scale in [0.5, 1.0, 2.0] {
            v.push(ProfileSpec::Ross {
                family: RossFamily::Real,
                dimension: dim,
                scale,
            });
        }
    }
    for family in [RossFamily::Complex, RossFamily::Quaternionic, RossFamily::Octonionic] {
        v.push(ProfileSpec::Ross {
            family,
            dimension: 2 * family.field_dim(),
            scale: 1.0,
        });
    }
    v
}

const WOBBLE: [&str; 2] = ["1 + 3*tanh(t)^2", "2.5 + 1.5*tanh(t)"];

pub fn builtin_profile(name: &str) -> Result<CurvatureProfile> {
    for family in RossFamily::ALL {
        let dims: Vec<usize> = match family {
            RossFamily::Real => (2..=8).collect(),
            RossFamily::Octonionic => vec![16],
            _ => (2..=4).map(|m| m * family.field_dim()).collect(),
        };
        for d in dims {
            let r = RossProfile::new(family, d, 1.0)?;
            if r.name() == name {
                return Ok(r.profile());
            }
        }
    }
    if name == "wobble" {
        let entries: Vec<String> = WOBBLE.iter().map(|s| s.to_string()).collect();
        return CurvatureProfile::from_expressions("wobble", &entries, 1.0, 2.0);
    }
    config_err(format!("unknown built-in profile {name:?}"))
}

pub fn builtin_surface(name: &str) -> Result<WarpedSurface> {
    match name {
        "pinched" => Ok(WarpedSurface::pinched()),
        "H2" => WarpedSurface::hyperbolic(1.0),
        _ => config_err(format!("unknown built-in surface {name:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub category: String,
    pub name: String,
    pub description: String,
}

fn entry(category: &str, name: impl Into<String>, description: impl Into<String>) -> CatalogEntry {
    CatalogEntry {
        category: category.into(),
        name: name.into(),
        description: description.into(),
    }
}

/// Built-in profiles, surfaces and experiments.
pub fn builtins() -> Vec<CatalogEntry> {
    let mut v = Vec::new();
    for family in RossFamily::ALL {
        let dim = match family {
            RossFamily::Real => 3,
            _ => 2 * family.field_dim(),
        };
        let r = RossProfile::new(family, dim, 1.0).expect("built-in dimensions are valid");
        v.push(entry(
            "profile",
            r.name(),
            format!(
                "{family} hyperbolic space of real dimension {dim}, curvature in [-{}, -1]",
                if r.d() == 0 { 1 } else { 4 }
            ),
        ));
    }
    v.push(entry(
        "profile",
        "wobble",
        format!("diagonal profile [{}] pinched in [-4, -1]", WOBBLE.join(", ")),
    ));
    let p = WarpedSurface::pinched();
    v.push(entry(
        "surface",
        "pinched",
        format!("warped surface f(r) = {}, curvature between -4 and -1", p.source()),
    ));
    v.push(entry("surface", "H2", "hyperbolic plane of curvature -1"));
    for c in builtin_experiments() {
        v.push(entry("experiment", c.name.clone(), experiment_description(&c)));
    }
    v
}

fn experiment_description(c: &ExperimentConfig) -> String {
    let what = match c.kind {
        ExperimentKind::Tau => "asymptotic density by tensors and by volume limit, with closed-form oracles",
        ExperimentKind::Entropy => "volume entropy, isoperimetric ratio, sphere mean curvature bounds, growth exponents",
        ExperimentKind::Margulis => "Margulis function and its convergence certificate",
        ExperimentKind::RiccatiCrosscheck => "Riccati solution against the Jacobi tensor shape operator",
        ExperimentKind::Rigidity => "Ricci bounds, horosphere norm identity and rigidity flag",
        ExperimentKind::Comparison => "random geodesic triangles against model-plane distance ratios",
        ExperimentKind::Tangency => "curvatures of internally tangent circles and horocycles",
        ExperimentKind::Horocycle => "horocycle curvature along a geodesic, and horosphere curvature of profiles",
        ExperimentKind::Measures => "Busemann functions, harmonic and visual boundary densities",
        ExperimentKind::Meanvalue => "horocyclic means of harmonic extensions on the hyperbolic plane",
    };
    let target = match (&c.surface, c.kind.uses_profiles()) {
        (Some(SurfaceSpec::Builtin { name }), _) => format!(" on {name}"),
        (Some(SurfaceSpec::Hyperbolic { a }), _) => format!(" on H2({a})"),
        _ => String::new(),
    };
    format!("{what}{target}")
}

/// The configurations run by [`verify_all`].
pub fn builtin_experiments() -> Vec<ExperimentConfig> {
    use ExperimentKind::*;
    let mut v = vec![
        ExperimentConfig::new("tau-suite", Tau),
        ExperimentConfig::new("entropy-suite", Entropy),
        ExperimentConfig::new("margulis-suite", Margulis),
        ExperimentConfig::new("rigidity-suite", Rigidity),
    ];
    let mut ric = ExperimentConfig::new("riccati-crosscheck", RiccatiCrosscheck);
    ric.profiles = default_suite();
    ric.profiles.push(ProfileSpec::Builtin { name: "wobble".into() });
    ric.profiles.push(ProfileSpec::Diagonal {
        name: "bump".into(),
        entries: vec!["2 - exp(-t^2)".into(), "1".into(), "3 + sin(t)".into()],
        a: 1.0,
        b: 2.0,
    });
    v.push(ric);
    for (name, kind, surf, trials) in [
        ("comparison-pinched", Comparison, "pinched", 200),
        ("comparison-h2", Comparison, "H2", 40),
        ("tangency-pinched", Tangency, "pinched", 100),
        ("tangency-h2", Tangency, "H2", 30),
    ] {
        let mut c = ExperimentConfig::new(name, kind);
        c.surface = Some(SurfaceSpec::Builtin { name: surf.into() });
        c.trials = Some(trials);
        v.push(c);
    }
    let mut horo = ExperimentConfig::new("horocycle-pinched", Horocycle);
    horo.surface = Some(SurfaceSpec::Builtin { name: "pinched".into() });
    v.push(horo);
    let mut m = ExperimentConfig::new("measures-h3", Measures);
    m.a = Some(1.0);
    m.dimension = Some(3);
    v.push(m);
    v.push(ExperimentConfig::new("meanvalue-h2", Meanvalue));
    v
}

pub fn builtin_experiment(name: &str) -> Option<ExperimentConfig> {
    builtin_experiments().into_iter().find(|c| c.name == name)
}

/// Run one experiment and assemble its report.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let (checks, tables) = match config.kind {
        ExperimentKind::Tau => run_tau(config)?,
        ExperimentKind::Entropy => run_entropy(config)?,
        ExperimentKind::Margulis => run_margulis(config)?,
        ExperimentKind::RiccatiCrosscheck => run_riccati(config)?,
        ExperimentKind::Rigidity => run_rigidity(config)?,
        ExperimentKind::Comparison => {
            let s = config.surface()?;
            let out = surface::verify_triangle_comparison(&s, config.trials.unwrap_or(200), config.seed)?;
            (out.checks, vec![out.table])
        }
        ExperimentKind::Tangency => {
            let s = config.surface()?;
            let out = surface::verify_tangent_circles(&s, config.trials.unwrap_or(100), config.seed)?;
            (out.checks, vec![out.table])
        }
        ExperimentKind::Horocycle => run_horocycle(config)?,
        ExperimentKind::Measures => {
            let out = boundary::verify_boundary(
                config.a.unwrap_or(1.0),
                config.dimension.unwrap_or(3),
                config.trials.unwrap_or(100),
                config.visual_trials.unwrap_or(10),
                config.seed,
            )?;
            (out.checks, vec![out.table])
        }
        ExperimentKind::Meanvalue => run_meanvalue(config)?,
    };
    let echo = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Report::new(
        config.name.clone(),
        config.kind.as_str(),
        echo,
        checks,
        tables,
        config.seed,
    ))
}

/// Run every built-in experiment, optionally overriding the seed.
pub fn verify_all(seed: Option<u64>) -> Result<Vec<Report>> {
    builtin_experiments()
        .into_iter()
        .map(|mut c| {
            if let Some(s) = seed {
                c.seed = s;
            }
            run(&c)
        })
        .collect()
}

type Outcome = (Vec<Check>, Vec<Table>);

/// `∏ 1/(2√κᵢ)` over the eigenvalues of `-R` for a constant profile.
fn tau_oracle(p: &CurvatureProfile) -> Option<f64> {
    if !p.is_constant_in_time() {
        return None;
    }
    let eig = (-p.at(0.0)).symmetric_eigenvalues();
    Some(eig.iter().map(|k| 0.5 / k.sqrt()).product())
}

struct TauRow {
    checks: Vec<Check>,
    row: Vec<f64>,
    cert_rows: Vec<Vec<f64>>,
}

fn tau_for(i: usize, p: &CurvatureProfile, radii: &[f64], c: &ExperimentConfig) -> Result<TauRow> {
    let name = p.name().to_string();
    let n = p.dim();
    let a = p.lower_pinch();
    let r_max = jacobi::default_r_max(p)?;
    let h = jacobi::horosphere_mean_curvature(p)?;
    let by_tensors = jacobi::tau_from_tensors(p, r_max)?;
    let by_limit = jacobi::tau_from_limit(p, h, r_max)?;
    let eps_max = jacobi::epsilon_bound(a, n, r_max)?;
    let tau = by_tensors.tau;
    let mut checks = vec![Check::close_rel(
        format!("{name}: tau by tensors vs volume limit"),
        by_limit.tau,
        tau,
        c.tolerance("relative"),
    )
    .with_certificate(eps_max)];
    let oracle = tau_oracle(p);
    if let Some(o) = oracle {
        checks.push(
            Check::close_rel(format!("{name}: tau vs closed form"), tau, o, c.tolerance("oracle"))
                .with_certificate(by_tensors.error_bound),
        );
    }
    if p.is_even() {
        let back = jacobi::tau_from_tensors(&p.reversed(), r_max)?;
        checks.push(Check::close_rel(
            format!("{name}: tau(v) = tau(-v)"),
            back.tau,
            tau,
            c.tolerance("relative"),
        ));
    }
    let nh = n as f64 * h;
    let flow = jacobi::sphere_flow(p, radii, None, &JacobiOptions::default())?;
    let mut excess = f64::NEG_INFINITY;
    let mut cert_rows = Vec::with_capacity(radii.len());
    for s in &flow {
        let dev = ((s.log_theta - nh * s.r - tau.ln()).exp_m1()).abs();
        let eps = jacobi::epsilon_bound(a, n, s.r)?;
        excess = excess.max(dev - eps);
        cert_rows.push(vec![i as f64, s.r, dev, eps]);
    }
    checks.push(
        Check::at_most(
            format!("{name}: |theta e^(-nhr)/tau - 1| <= epsilon(r) on the grid"),
            excess,
            0.0,
            c.tolerance("certificate_slack"),
        )
        .with_certificate(eps_max),
    );
    Ok(TauRow {
        checks,
        row: vec![
            i as f64,
            n as f64,
            a.a(),
            h,
            tau,
            by_limit.tau,
            oracle.unwrap_or(f64::NAN),
            ((by_limit.tau - tau) / tau).abs(),
            eps_max,
        ],
        cert_rows,
    })
}

fn run_tau(c: &ExperimentConfig) -> Result<Outcome> {
    let profiles = c.profile_list()?;
    let radii = c.grid_or(0.5, 40.0, 80)?;
    let rows = profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| tau_for(i, p, &radii, c))
        .collect::<Result<Vec<_>>>()?;
    let mut tau = Table::new(
        "tau",
        &["profile", "n", "a", "h", "tau_tensors", "tau_limit", "tau_oracle", "relative_difference", "epsilon"],
    );
    let mut cert = Table::new("certificate", &["profile", "r", "deviation", "epsilon"]);
    let mut checks = Vec::new();
    for r in rows {
        checks.extend(r.checks);
        tau.push(r.row);
        for row in r.cert_rows {
            cert.push(row);
        }
    }
    Ok((checks, vec![tau, cert]))
}

fn entropy_for(i: usize, p: &CurvatureProfile, radii: &[f64], c: &ExperimentConfig) -> Result<(Vec<Check>, Vec<f64>)> {
    let name = p.name().to_string();
    let n = p.dim();
    let a = p.lower_pinch().a();
    let h = jacobi::horosphere_mean_curvature(p)?;
    let nh = n as f64 * h;
    let lo = 10.0 / a;
    let hi = (30.0 / a).max(lo + 10.0);
    let grid = linear_grid(0.5 / a, hi, ((hi - 0.5 / a) * a * 4.0).round() as usize + 1);
    let vc = asymptotics::volume_curve(&DirectionQuadrature::isotropic(p), &grid, nh)?;
    let est = asymptotics::entropy_estimate(&vc, (lo, hi))?;
    let mut iso = asymptotics::isoperimetric_check(&vc, h, c.tolerance("isoperimetric"));
    iso.name = format!("{name}: {}", iso.name);
    let flow = jacobi::sphere_flow(p, radii, None, &JacobiOptions::default())?;
    let (mut lower, mut upper) = (f64::INFINITY, f64::INFINITY);
    for s in &flow {
        let m = s.mean_curvature();
        lower = lower.min(m - h);
        upper = upper.min(h + 1.0 / s.r - m);
    }
    let tol = c.tolerance("mean_curvature");
    let mut checks = vec![
        Check::close_rel(format!("{name}: entropy slope vs nh"), est.slope, nh, c.tolerance("slope"))
            .with_certificate(est.residual),
        iso,
        Check::at_least(format!("{name}: sphere mean curvature >= h"), lower, 0.0, tol),
        Check::at_least(format!("{name}: sphere mean curvature <= h + 1/r"), upper, 0.0, tol),
    ];
    let mut bound = f64::NAN;
    if let Some(r) = p.ross() {
        let g = asymptotics::horosphere_growth_exponent(r)?;
        bound = g.bound;
        checks.push(
            Check::flag(
                format!("{name}: nh/a equals horosphere growth degree {}", g.actual),
                g.is_exact(c.tolerance("exponent")),
            )
            .with_certificate(g.certificate),
        );
    }
    Ok((checks, vec![i as f64, n as f64, a, h, nh, est.slope, est.residual, bound]))
}

fn run_entropy(c: &ExperimentConfig) -> Result<Outcome> {
    let profiles = c.profile_list()?;
    let radii = c.grid_or(0.1, 40.0, 400)?;
    let rows = profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| entropy_for(i, p, &radii, c))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new("entropy", &["profile", "n", "a", "h", "nh", "slope", "fit_residual", "growth_bound"]);
    let mut checks = Vec::new();
    for (ch, row) in rows {
        checks.extend(ch);
        t.push(row);
    }
    Ok((checks, vec![t]))
}

fn margulis_for(i: usize, p: &CurvatureProfile, radii: &[f64], c: &ExperimentConfig) -> Result<(Vec<Check>, Vec<Vec<f64>>)> {
    let name = p.name().to_string();
    let n = p.dim();
    let a = p.lower_pinch();
    let h = jacobi::horosphere_mean_curvature(p)?;
    let nh = n as f64 * h;
    let quad = DirectionQuadrature::isotropic(p);
    let r_max = jacobi::default_r_max(p)?;
    let mv = asymptotics::margulis(&quad, h, r_max)?;
    let m = mv.m_quadrature;
    let vc = asymptotics::volume_curve(&quad, radii, nh)?;
    let mut excess = f64::NEG_INFINITY;
    let mut rows = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        let dev = (vc.normalized_sphere[k] - m).abs();
        let eps = jacobi::epsilon_bound(a, n, r)?;
        excess = excess.max((dev - m * eps) / m);
        rows.push(vec![i as f64, r, vc.normalized_sphere[k], dev, m * eps]);
    }
    let tol = c.tolerance("absolute");
    let mut checks = vec![
        Check::close(format!("{name}: Margulis volume limit vs direction integral"), mv.m, m, tol)
            .with_certificate(mv.certificate),
        Check::at_most(
            format!("{name}: |v(r) e^(-nhr) - m| <= m epsilon(r) on the grid"),
            excess,
            0.0,
            c.tolerance("certificate_slack"),
        )
        .with_certificate(mv.certificate),
        Check::close(format!("{name}: ball limit vs m/(nh)"), mv.ball_limit, m / nh, tol).with_certificate(mv.certificate),
    ];
    if let Some(o) = tau_oracle(p) {
        checks.push(
            Check::close(
                format!("{name}: Margulis function vs closed form"),
                m,
                asymptotics::sphere_volume(n) * o,
                tol,
            )
            .with_certificate(mv.certificate),
        );
    }
    Ok((checks, rows))
}

fn run_margulis(c: &ExperimentConfig) -> Result<Outcome> {
    let profiles = c.profile_list()?;
    let radii = c.grid_or(1.0, 40.0, 40)?;
    if radii[0] < 1.0 {
        return config_err("Margulis grid must start at r >= 1");
    }
    let out = profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| margulis_for(i, p, &radii, c))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new("margulis", &["profile", "r", "normalized_sphere", "deviation", "bound"]);
    let mut checks = Vec::new();
    for (ch, rows) in out {
        checks.extend(ch);
        for row in rows {
            t.push(row);
        }
    }
    Ok((checks, vec![t]))
}

fn run_riccati(c: &ExperimentConfig) -> Result<Outcome> {
    let profiles = c.profile_list()?;
    let grid = c.grid_or(0.1, 20.0, 200)?;
    let opts = JacobiOptions::default();
    let out = profiles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let flow = jacobi::sphere_flow(p, &grid, None, &opts)?;
            let a0 = ShapeOperator::new(grid[0], flow[0].shape.clone());
            let ric = jacobi::riccati_on_grid(p, &a0, &grid[1..], &opts)?;
            let mut worst = 0.0f64;
            let mut rows = Vec::with_capacity(ric.len());
            for (s, r) in flow[1..].iter().zip(&ric) {
                let d = (&s.shape - &r.a).amax();
                worst = worst.max(d);
                rows.push(vec![i as f64, s.r, d]);
            }
            let check = Check::close(
                format!("{}: Riccati vs Jacobi shape operator (sup norm)", p.name()),
                worst,
                0.0,
                c.tolerance("sup"),
            );
            Ok((check, rows))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new("riccati_crosscheck", &["profile", "t", "sup_difference"]);
    let mut checks = Vec::new();
    for (ch, rows) in out {
        checks.push(ch);
        for row in rows {
            t.push(row);
        }
    }
    Ok((checks, vec![t]))
}

fn run_rigidity(c: &ExperimentConfig) -> Result<Outcome> {
    let profiles = c.profile_list()?;
    let tol = c.tolerance("identity");
    let out = profiles
        .par_iter()
        .map(|p| jacobi::ricci_and_norm_checks(p, tol))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new("rigidity", &["profile", "ricci", "h", "a", "b"]);
    for (i, p) in profiles.iter().enumerate() {
        let h = jacobi::horosphere_mean_curvature(p)?;
        t.push(vec![i as f64, p.ricci(0.0), h, p.lower_pinch().a(), p.upper_pinch().a()]);
    }
    Ok((out.into_iter().flatten().collect(), vec![t]))
}

fn run_horocycle(c: &ExperimentConfig) -> Result<Outcome> {
    let s = c.surface()?;
    let ts = c.grid_or(-4.0, 4.0, 9)?;
    let start = GeodesicState {
        t: 0.0,
        position: SurfacePoint::new(3.0, 0.0)?,
        direction: PI - 0.3,
        clairaut: 0.0,
    };
    let prof = surface::horocurvature_profile(&s, &start, &ts)?;
    let mut checks = surface::horocurvature_checks(&s, &prof, c.tolerance("spread_min"));
    let mut t = Table::new("horocycle_curvature", &["t", "curvature"]);
    for &(tt, h) in &prof.points {
        t.push(vec![tt, h]);
    }
    let profiles = c.profile_list()?;
    let spreads = profiles
        .par_iter()
        .map(|p| {
            let hs = ts
                .iter()
                .map(|&tt| jacobi::horosphere_mean_curvature(&p.shifted(tt)))
                .collect::<Result<Vec<f64>>>()?;
            let lo = hs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(hi - lo)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut pt = Table::new("horosphere_spread", &["profile", "spread"]);
    for (i, (p, sp)) in profiles.iter().zip(&spreads).enumerate() {
        checks.push(Check::close(
            format!("{}: horosphere mean curvature constant along the geodesic", p.name()),
            *sp,
            0.0,
            c.tolerance("constancy"),
        ));
        pt.push(vec![i as f64, *sp]);
    }
    Ok((checks, vec![t, pt]))
}

fn run_meanvalue(c: &ExperimentConfig) -> Result<Outcome> {
    let a = c.a.unwrap_or(1.0);
    let xi = c.xi_angle.unwrap_or(0.0);
    let radii = match &c.grid {
        Some(g) => g.points()?,
        None => boundary::default_radius_schedule(c.radius_budget.unwrap_or(10)),
    };
    let funcs: Vec<(String, String)> = if c.boundary_functions.is_empty() {
        DEFAULT_BUMPS.iter().map(|(n, e)| (n.to_string(), e.to_string())).collect()
    } else {
        c.boundary_functions.iter().map(|b| (b.name.clone(), b.expr.clone())).collect()
    };
    let parsed = funcs
        .iter()
        .map(|(n, e)| ScalarFn::parse(e, "theta").map(|f| (n.clone(), f)))
        .collect::<Result<Vec<_>>>()?;
    let tol = c.tolerance("deviation");
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    for (name, f) in &parsed {
        let out = boundary::mean_value_experiment(a, xi, name, f, &radii, tol)?;
        checks.extend(out.checks);
        tables.push(out.table);
    }
    Ok((checks, tables))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"name": "t", "kind": "tau", "profiles": [{"kind": "builtin", "name": "CH2"},
                {"kind": "ross", "family": "real", "dimension": 3}]}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.tolerance("relative"), 1e-8);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "{",
            r#"{"name": "x", "kind": "nope"}"#,
            r#"{"name": "x y", "kind": "tau"}"#,
            r#"{"name": "x", "kind": "tau", "tolerances": {"relative": -1}}"#,
            r#"{"name": "x", "kind": "tau", "tolerances": {"bogus": 1}}"#,
            r#"{"name": "x", "kind": "tau", "grid": {"points": [1, 0.5]}}"#,
            r#"{"name": "x", "kind": "tau", "profiles": [{"kind": "builtin", "name": "XH9"}]}"#,
            r#"{"name": "x", "kind": "measures", "surface": {"kind": "builtin", "name": "pinched"}}"#,
            r#"{"name": "x", "kind": "tau", "extra": 1}"#,
        ] {
            let e = ExperimentConfig::from_json(text).unwrap_err();
            assert!(e.is_config(), "{text}: {e}");
        }
    }

    #[test]
    fn builtins_resolve() {
        for e in builtins() {
            match e.category.as_str() {
                "profile" => {
                    builtin_profile(&e.name).unwrap();
                }
                "surface" => {
                    builtin_surface(&e.name).unwrap();
                }
                _ => builtin_experiment(&e.name).unwrap().validate().unwrap(),
            }
        }
    }

    #[test]
    fn tau_report_on_two_spaces() {
        let mut c = ExperimentConfig::new("tau-small", ExperimentKind::Tau);
        c.profiles = vec![
            ProfileSpec::Builtin { name: "RH3".into() },
            ProfileSpec::Builtin { name: "CH2".into() },
        ];
        let rep = run(&c).unwrap();
        assert!(rep.all_pass(), "{:?}", rep.summary);
        let t = &rep.tables[0];
        assert!((t.rows[0][4] - 0.25).abs() < 1e-9);
        assert!((t.rows[1][4] - 0.0625).abs() < 1e-9);
    }
}
