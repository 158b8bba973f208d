//! Flat `dotted.key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to the baseline experiment; unknown or repeated keys are errors.
//! Lists are comma separated. [`ExperimentConfig::to_text`] writes every key,
//! so `parse(to_text(c)) == c`.

use std::collections::HashSet;
use std::fmt::Write as _;

use drgp::problem::{default_observations, DesignSpec};
use drgp::{DesignLabel, LineSearch, OperatorKind, ProblemSpec, SolverConfig, Target};

use crate::error::CliError;
use crate::output::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignKind {
    Whole,
    Half,
    Points,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorName {
    Identity,
    InverseLaplacian,
    Heat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchName {
    GoldenSection,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub kappa: f64,
    pub beta: f64,
    pub delta_sq: f64,
    pub sigma: f64,
    pub modes: usize,
    pub m: usize,
    pub design: DesignKind,
    pub points: Vec<f64>,
    pub operator: OperatorName,
    pub heat_time: f64,
    pub target: Target,
    pub grid_points: usize,
    pub sample_paths: usize,
    pub seed: u64,
    pub observations: Option<Vec<f64>>,
    pub max_iters: usize,
    pub gap_tol: f64,
    pub bisect_tol: f64,
    pub line_search: LineSearchName,
    pub golden_iterations: usize,
    pub record_trace: bool,
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            alpha: 2.0,
            kappa: 0.0,
            beta: 0.51,
            delta_sq: 0.1,
            sigma: 0.1,
            modes: 200,
            m: 10,
            design: DesignKind::Whole,
            points: Vec::new(),
            operator: OperatorName::Identity,
            heat_time: 0.0,
            target: Target::Regression,
            grid_points: 201,
            sample_paths: 5,
            seed: 0,
            observations: None,
            max_iters: solver.max_iters,
            gap_tol: solver.gap_tol,
            bisect_tol: solver.bisect_tol,
            line_search: LineSearchName::GoldenSection,
            golden_iterations: 60,
            record_trace: solver.record_trace,
            stagnation_window: solver.stagnation_window,
            stagnation_tol: solver.stagnation_tol,
        }
    }
}

/// Every key in the order [`ExperimentConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "prior.alpha",
    "prior.kappa",
    "perturbation.beta",
    "perturbation.delta_sq",
    "noise.sigma",
    "truncation.modes",
    "design.m",
    "design.kind",
    "design.points",
    "operator.kind",
    "operator.time",
    "problem.target",
    "grid.points",
    "output.sample_paths",
    "seed",
    "observations",
    "solver.max_iters",
    "solver.gap_tol",
    "solver.bisect_tol",
    "solver.line_search",
    "solver.golden_iterations",
    "solver.record_trace",
    "solver.stagnation_window",
    "solver.stagnation_tol",
];

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("{key} = {value}: expected {what}"))
}

fn real(key: &str, value: &str) -> Result<f64, CliError> {
    value.parse().map_err(|_| bad(key, value, "a real number"))
}

fn count(key: &str, value: &str) -> Result<usize, CliError> {
    value.parse().map_err(|_| bad(key, value, "a non-negative integer"))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| real(key, v.trim())).collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| CliError::Config(format!("line {}: {}", lineno + 1, e.message())))?;
        }
        Ok(cfg)
    }

    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "prior.alpha" => self.alpha = real(key, value)?,
            "prior.kappa" => self.kappa = real(key, value)?,
            "perturbation.beta" => self.beta = real(key, value)?,
            "perturbation.delta_sq" => self.delta_sq = real(key, value)?,
            "noise.sigma" => self.sigma = real(key, value)?,
            "truncation.modes" => self.modes = count(key, value)?,
            "design.m" => self.m = count(key, value)?,
            "design.kind" => {
                self.design = match value {
                    "whole" => DesignKind::Whole,
                    "half" => DesignKind::Half,
                    "points" => DesignKind::Points,
                    _ => return Err(bad(key, value, "whole, half or points")),
                }
            }
            "design.points" => self.points = list(key, value)?,
            "operator.kind" => {
                self.operator = match value {
                    "identity" => OperatorName::Identity,
                    "inverse_laplacian" => OperatorName::InverseLaplacian,
                    "heat" => OperatorName::Heat,
                    _ => return Err(bad(key, value, "identity, inverse_laplacian or heat")),
                }
            }
            "operator.time" => self.heat_time = real(key, value)?,
            "problem.target" => {
                self.target = match value {
                    "regression" => Target::Regression,
                    "inverse" => Target::Inverse,
                    _ => return Err(bad(key, value, "regression or inverse")),
                }
            }
            "grid.points" => self.grid_points = count(key, value)?,
            "output.sample_paths" => self.sample_paths = count(key, value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value, "an unsigned 64-bit integer"))?,
            "observations" => {
                self.observations = if value == "default" {
                    None
                } else {
                    Some(list(key, value)?)
                }
            }
            "solver.max_iters" => self.max_iters = count(key, value)?,
            "solver.gap_tol" => self.gap_tol = real(key, value)?,
            "solver.bisect_tol" => self.bisect_tol = real(key, value)?,
            "solver.line_search" => {
                self.line_search = match value {
                    "golden_section" => LineSearchName::GoldenSection,
                    "fixed" => LineSearchName::Fixed,
                    _ => return Err(bad(key, value, "golden_section or fixed")),
                }
            }
            "solver.golden_iterations" => self.golden_iterations = count(key, value)?,
            "solver.record_trace" => {
                self.record_trace = value.parse().map_err(|_| bad(key, value, "true or false"))?
            }
            "solver.stagnation_window" => self.stagnation_window = count(key, value)?,
            "solver.stagnation_tol" => self.stagnation_tol = real(key, value)?,
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("prior.alpha", fmt_f64(self.alpha));
        put("prior.kappa", fmt_f64(self.kappa));
        put("perturbation.beta", fmt_f64(self.beta));
        put("perturbation.delta_sq", fmt_f64(self.delta_sq));
        put("noise.sigma", fmt_f64(self.sigma));
        put("truncation.modes", self.modes.to_string());
        put("design.m", self.m.to_string());
        put(
            "design.kind",
            match self.design {
                DesignKind::Whole => "whole",
                DesignKind::Half => "half",
                DesignKind::Points => "points",
            }
            .into(),
        );
        put("design.points", join(&self.points));
        put(
            "operator.kind",
            match self.operator {
                OperatorName::Identity => "identity",
                OperatorName::InverseLaplacian => "inverse_laplacian",
                OperatorName::Heat => "heat",
            }
            .into(),
        );
        put("operator.time", fmt_f64(self.heat_time));
        put(
            "problem.target",
            match self.target {
                Target::Regression => "regression",
                Target::Inverse => "inverse",
            }
            .into(),
        );
        put("grid.points", self.grid_points.to_string());
        put("output.sample_paths", self.sample_paths.to_string());
        put("seed", self.seed.to_string());
        put(
            "observations",
            match &self.observations {
                None => "default".into(),
                Some(v) => join(v),
            },
        );
        put("solver.max_iters", self.max_iters.to_string());
        put("solver.gap_tol", fmt_f64(self.gap_tol));
        put("solver.bisect_tol", fmt_f64(self.bisect_tol));
        put(
            "solver.line_search",
            match self.line_search {
                LineSearchName::GoldenSection => "golden_section",
                LineSearchName::Fixed => "fixed",
            }
            .into(),
        );
        put("solver.golden_iterations", self.golden_iterations.to_string());
        put("solver.record_trace", self.record_trace.to_string());
        put("solver.stagnation_window", self.stagnation_window.to_string());
        put("solver.stagnation_tol", fmt_f64(self.stagnation_tol));
        out
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let design = match self.design {
            DesignKind::Whole => DesignSpec::Whole,
            DesignKind::Half => DesignSpec::Half,
            DesignKind::Points => {
                if self.points.len() != self.m {
                    return Err(CliError::Config(format!(
                        "design.points has {} entries but design.m = {}",
                        self.points.len(),
                        self.m
                    )));
                }
                DesignSpec::Points(self.points.clone())
            }
        };
        let operator = match self.operator {
            OperatorName::Identity => OperatorKind::Identity,
            OperatorName::InverseLaplacian => OperatorKind::InverseLaplacian,
            OperatorName::Heat => OperatorKind::Heat { time: self.heat_time },
        };
        Ok(ProblemSpec {
            alpha: self.alpha,
            kappa: self.kappa,
            beta: self.beta,
            delta_sq: self.delta_sq,
            sigma: self.sigma,
            n_modes: self.modes,
            n_obs: self.m,
            design,
            operator,
            target: self.target,
        })
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            max_iters: self.max_iters,
            gap_tol: self.gap_tol,
            bisect_tol: self.bisect_tol,
            line_search: match self.line_search {
                LineSearchName::GoldenSection => LineSearch::GoldenSection {
                    iterations: self.golden_iterations,
                },
                LineSearchName::Fixed => LineSearch::Fixed,
            },
            record_trace: self.record_trace,
            stagnation_window: self.stagnation_window,
            stagnation_tol: self.stagnation_tol,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// The explicit observation vector, or the default one for the design.
    pub fn observation_vector(&self) -> Result<Vec<f64>, CliError> {
        let y = match &self.observations {
            Some(v) => v.clone(),
            None => {
                let label = match self.design {
                    DesignKind::Whole => DesignLabel::Whole,
                    DesignKind::Half => DesignLabel::Half,
                    DesignKind::Points => DesignLabel::Custom,
                };
                default_observations(label, self.m).ok_or_else(|| {
                    CliError::Config("no default observations for this design; set `observations`".into())
                })?
            }
        };
        if y.len() != self.m {
            return Err(CliError::Config(format!(
                "observations has {} entries but design.m = {}",
                y.len(),
                self.m
            )));
        }
        Ok(y)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.grid_points < 3 {
            return Err(CliError::Config("grid.points must be at least 3".into()));
        }
        if let Some(y) = &self.observations {
            if y.len() != self.m {
                return Err(CliError::Config(format!(
                    "observations has {} entries but design.m = {}",
                    y.len(),
                    self.m
                )));
            }
        }
        self.problem_spec()?;
        self.solver_config()?;
        Ok(())
    }
}
