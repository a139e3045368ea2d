//! Experiment configuration files.
//!
//! Configs are TOML. Every table rejects unknown keys, and estimator fields
//! that the chosen `kind` does not read are rejected as well, so a typo never
//! silently falls back to a default.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;
use sddekit::TimeGrid;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Couple,
    ApproxStudy,
    SupportProbe,
    Ergodic,
    Sensitivity,
    Tailcheck,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Couple => "couple",
            Kind::ApproxStudy => "approx-study",
            Kind::SupportProbe => "support-probe",
            Kind::Ergodic => "ergodic",
            Kind::Sensitivity => "sensitivity",
            Kind::Tailcheck => "tailcheck",
        }
    }

    /// Estimator keys read by this kind.
    fn estimator_keys(self) -> &'static [&'static str] {
        match self {
            Kind::Simulate => &["paths"],
            Kind::Couple => &["paths", "gamma", "threshold_mult", "theta", "h"],
            Kind::ApproxStudy => &["paths", "gamma", "eps", "probes"],
            Kind::SupportProbe => &["paths", "h", "delta", "lambda"],
            Kind::Ergodic => &["samples", "replicates", "times", "burn_in", "spacing", "n", "gamma"],
            Kind::Sensitivity => &["paths", "lambdas", "times", "functional", "fd_eps"],
            Kind::Tailcheck => &[],
        }
    }

    fn init_keys(self) -> &'static [&'static str] {
        match self {
            Kind::Simulate | Kind::ApproxStudy | Kind::Ergodic => &["x"],
            Kind::Couple => &["x", "y"],
            Kind::SupportProbe | Kind::Sensitivity => &["x", "z"],
            Kind::Tailcheck => &[],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub model: Option<ModelSection>,
    pub grid: GridSection,
    pub seeds: SeedSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    pub tail: Option<TailSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: f64,
    pub r: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub master: u64,
}

/// Initial segments, each constant over `[-r, 0]`.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub x: Option<f64>,
    /// Second initial segment for couplings.
    pub y: Option<f64>,
    /// Target segment (support probe) or perturbation direction (sensitivity).
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionalKind {
    /// `f(x) = x(0)`
    #[default]
    Point,
    /// `f(x) = tanh(x(0))`
    Tanh,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub paths: Option<usize>,
    pub gamma: Option<f64>,
    pub threshold_mult: Option<f64>,
    pub theta: Option<f64>,
    pub h: Option<f64>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
    pub probes: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub replicates: Option<usize>,
    pub burn_in: Option<f64>,
    pub spacing: Option<f64>,
    pub n: Option<f64>,
    pub functional: Option<FunctionalKind>,
    pub fd_eps: Option<f64>,
}

impl EstimatorSection {
    fn present(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut mark = |set: bool, name| {
            if set {
                out.push(name);
            }
        };
        mark(self.paths.is_some(), "paths");
        mark(self.gamma.is_some(), "gamma");
        mark(self.threshold_mult.is_some(), "threshold_mult");
        mark(self.theta.is_some(), "theta");
        mark(self.h.is_some(), "h");
        mark(self.delta.is_some(), "delta");
        mark(self.lambda.is_some(), "lambda");
        mark(self.lambdas.is_some(), "lambdas");
        mark(self.eps.is_some(), "eps");
        mark(self.probes.is_some(), "probes");
        mark(self.times.is_some(), "times");
        mark(self.samples.is_some(), "samples");
        mark(self.replicates.is_some(), "replicates");
        mark(self.burn_in.is_some(), "burn_in");
        mark(self.spacing.is_some(), "spacing");
        mark(self.n.is_some(), "n");
        mark(self.functional.is_some(), "functional");
        mark(self.fd_eps.is_some(), "fd_eps");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriverSection {
    Deterministic { v0: f64, a: f64, lambda: f64, b: f64 },
    SquaredOu { z0: f64, theta: f64, s: f64, cap: f64 },
}

/// Tail-bound check. The time horizon is `grid.horizon`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub delta: f64,
    pub r_grid: Vec<f64>,
    pub paths: usize,
    pub driver: DriverSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// File name inside `dir`; defaults to `<kind>.csv`.
    pub file: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            file: None,
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

/// Upper bound on the steps in one grid, to fail fast instead of exhausting memory.
pub const MAX_GRID_STEPS: usize = 100_000_000;

fn field(name: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: name.to_string(),
        reason: reason.into(),
    }
}

/// Parses a config without semantic checks.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

/// Parses and validates a config.
pub fn load(text: &str) -> Result<ExperimentConfig> {
    let cfg = parse(text)?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        let g = self.grid;
        let grid = TimeGrid::new(g.dt, g.r, g.horizon).map_err(|e| field("grid", e.to_string()))?;
        if grid.delay_steps().max(grid.horizon_steps()) > MAX_GRID_STEPS {
            return Err(field("grid", format!("more than {MAX_GRID_STEPS} steps")));
        }
        Ok(grid)
    }

    /// Number of grid steps in a time quantity, requiring it to sit on the grid.
    pub fn steps(&self, name: &str, t: f64) -> Result<usize> {
        self.time_grid()?
            .steps_for(t)
            .map_err(|e| field(name, e.to_string()))
    }

    pub fn output_file(&self) -> String {
        self.output
            .file
            .clone()
            .unwrap_or_else(|| format!("{}.csv", self.kind.name()))
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        self.time_grid()?;
        match (kind, &self.model) {
            (Kind::Tailcheck, Some(_)) => return Err(field("model", "not used by kind `tailcheck`")),
            (Kind::Tailcheck, None) => {}
            (_, None) => return Err(field("model", format!("required by kind `{}`", kind.name()))),
            (_, Some(m)) => {
                if sddekit::catalog::lookup(&m.id).is_none() {
                    return Err(CliError::UnknownModel(m.id.clone()));
                }
            }
        }
        match (kind, &self.tail) {
            (Kind::Tailcheck, None) => return Err(field("tail", "required by kind `tailcheck`")),
            (Kind::Tailcheck, Some(t)) => validate_tail(t)?,
            (_, Some(_)) => return Err(field("tail", format!("not used by kind `{}`", kind.name()))),
            (_, None) => {}
        }
        let allowed = kind.estimator_keys();
        if let Some(k) = self.estimator.present().into_iter().find(|k| !allowed.contains(k)) {
            return Err(field(&format!("estimator.{k}"), format!("not used by kind `{}`", kind.name())));
        }
        let init = [("x", self.init.x), ("y", self.init.y), ("z", self.init.z)];
        for (k, v) in init {
            let needed = kind.init_keys().contains(&k);
            match v {
                Some(_) if !needed => {
                    return Err(field(&format!("init.{k}"), format!("not used by kind `{}`", kind.name())));
                }
                Some(v) if !v.is_finite() => return Err(field(&format!("init.{k}"), "must be finite")),
                None if needed => return Err(field(&format!("init.{k}"), "missing")),
                _ => {}
            }
        }
        if let Some(f) = &self.output.file {
            if f.is_empty() || f == "." || f == ".." || f.contains(['/', '\\']) {
                return Err(field("output.file", "must be a plain file name"));
            }
        }
        self.validate_estimator()
    }

    fn validate_estimator(&self) -> Result<()> {
        let e = &self.estimator;
        let horizon = self.grid.horizon;
        let positive = |name: &str, v: Option<f64>| match v {
            Some(v) if !(v > 0.0 && v.is_finite()) => Err(field(&format!("estimator.{name}"), "must be positive")),
            _ => Ok(()),
        };
        for (name, v) in [
            ("gamma", e.gamma),
            ("threshold_mult", e.threshold_mult),
            ("theta", e.theta),
            ("h", e.h),
            ("delta", e.delta),
            ("n", e.n),
            ("spacing", e.spacing),
        ] {
            positive(name, v)?;
        }
        if let Some(g) = e.gamma {
            if g > 1.0 {
                return Err(field("estimator.gamma", "must lie in (0, 1]"));
            }
        }
        if let Some(l) = e.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(field("estimator.lambda", "must be non-negative"));
            }
        }
        if let Some(ls) = &e.lambdas {
            if ls.is_empty() || ls.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return Err(field("estimator.lambdas", "must be a non-empty list of non-negative values"));
            }
        }
        if let Some(eps) = &e.eps {
            if eps.is_empty() || eps.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(field("estimator.eps", "must be a non-empty list of positive values"));
            }
        }
        if let Some(p) = &e.probes {
            if p.is_empty() || p.iter().any(|v| !v.is_finite()) {
                return Err(field("estimator.probes", "must be a non-empty list of finite values"));
            }
        }
        if e.paths == Some(0) {
            return Err(field("estimator.paths", "must be positive"));
        }
        if let Some(s) = e.samples {
            if s == 0 || s > sddekit::ot::MAX_SAMPLE {
                return Err(field(
                    "estimator.samples",
                    format!("must lie in 1..={}", sddekit::ot::MAX_SAMPLE),
                ));
            }
        }
        if e.replicates == Some(0) {
            return Err(field("estimator.replicates", "must be positive"));
        }
        if let Some(eps) = e.fd_eps {
            if !(eps != 0.0 && eps.is_finite()) {
                return Err(field("estimator.fd_eps", "must be finite and non-zero"));
            }
        }
        // time quantities must sit on the grid and inside the horizon
        for (name, t) in [("h", e.h), ("burn_in", e.burn_in), ("spacing", e.spacing)] {
            if let Some(t) = t {
                self.steps(&format!("estimator.{name}"), t)?;
            }
        }
        if let Some(h) = e.h {
            if h > horizon {
                return Err(field("estimator.h", "exceeds grid.horizon"));
            }
        }
        if let Some(ts) = &e.times {
            if ts.is_empty() {
                return Err(field("estimator.times", "must not be empty"));
            }
            for &t in ts {
                self.steps("estimator.times", t)?;
                if !(t > 0.0 && t <= horizon) {
                    return Err(field("estimator.times", format!("{t} is outside (0, grid.horizon]")));
                }
            }
        }
        let require = |name: &str, set: bool| {
            if set {
                Ok(())
            } else {
                Err(field(&format!("estimator.{name}"), format!("required by kind `{}`", self.kind.name())))
            }
        };
        match self.kind {
            Kind::Couple => require("h", e.h.is_some())?,
            Kind::ApproxStudy => {
                require("gamma", e.gamma.is_some())?;
                require("eps", e.eps.is_some())?;
                require("probes", e.probes.is_some())?;
            }
            Kind::SupportProbe => {
                require("h", e.h.is_some())?;
                require("delta", e.delta.is_some())?;
                require("lambda", e.lambda.is_some())?;
            }
            Kind::Ergodic => {
                require("times", e.times.is_some())?;
                require("samples", e.samples.is_some())?;
                require("burn_in", e.burn_in.is_some())?;
                require("spacing", e.spacing.is_some())?;
            }
            Kind::Sensitivity => {
                require("lambdas", e.lambdas.is_some())?;
                require("times", e.times.is_some())?;
            }
            Kind::Simulate | Kind::Tailcheck => {}
        }
        Ok(())
    }
}

fn validate_tail(t: &TailSection) -> Result<()> {
    sddekit::diagnostics::TailBoundSpec::new(t.a, t.b, t.lambda, t.delta, 1.0)
        .map_err(|e| field("tail", e.to_string()))?;
    if t.r_grid.is_empty() || t.r_grid.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(field("tail.r_grid", "must be a non-empty list of non-negative values"));
    }
    if t.paths == 0 {
        return Err(field("tail.paths", "must be positive"));
    }
    Ok(())
}
