//! Flat `key=value` run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::problem::{ProblemConstants, ProblemSpec};
use crate::sampling::SamplingPolicy;
use crate::schedule::ScheduleOverrides;

#[derive(Debug, Error, PartialEq)]
#[error("config line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Scscg,
    ScscgMinibatch,
    FullAnchor,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Scscg => "scscg",
            Algorithm::ScscgMinibatch => "scscg_minibatch",
            Algorithm::FullAnchor => "full_anchor",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scscg" => Ok(Algorithm::Scscg),
            "scscg_minibatch" => Ok(Algorithm::ScscgMinibatch),
            "full_anchor" => Ok(Algorithm::FullAnchor),
            other => Err(format!("unknown algorithm '{other}'")),
        }
    }
}

/// Convex or non-convex schedule; `Auto` picks convex when `μ > 0` is exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModeChoice {
    #[default]
    Auto,
    Convex,
    Nonconvex,
}

impl ModeChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeChoice::Auto => "auto",
            ModeChoice::Convex => "convex",
            ModeChoice::Nonconvex => "nonconvex",
        }
    }
}

impl FromStr for ModeChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(ModeChoice::Auto),
            "convex" => Ok(ModeChoice::Convex),
            "nonconvex" => Ok(ModeChoice::Nonconvex),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub mode: ModeChoice,
    pub epsilon: Option<f64>,
    pub b: usize,
    pub x0: Option<Vec<f64>>,
    pub x0_gap: Option<f64>,
    pub c_a: f64,
    pub c_d: f64,
    pub c_t: f64,
    pub overrides: ScheduleOverrides,
    pub sampling: SamplingPolicy,
    pub master_seed: u64,
    pub repetitions: usize,
    pub fixed_seed: bool,
    pub verbose: bool,
    pub out: Option<PathBuf>,
    pub constant_overrides: Vec<(String, f64)>,
    pub grid_a: Option<Vec<usize>>,
    pub grid_d: Option<Vec<usize>>,
    pub grid_b: Option<Vec<usize>>,
    pub verify_x: Option<Vec<f64>>,
    pub verify_x_tilde: Option<Vec<f64>>,
    pub mc_samples: u64,
    pub enumeration_guard: u64,
    pub sweep_algorithms: Option<Vec<Algorithm>>,
    pub sweep_n: Option<Vec<usize>>,
    pub sweep_epsilon: Option<Vec<f64>>,
    pub sweep_b: Option<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            algorithm: Algorithm::Scscg,
            mode: ModeChoice::Auto,
            epsilon: None,
            b: 1,
            x0: None,
            x0_gap: None,
            c_a: 1.0,
            c_d: 1.0,
            c_t: 1.0,
            overrides: ScheduleOverrides::default(),
            sampling: SamplingPolicy::Auto,
            master_seed: 0,
            repetitions: 1,
            fixed_seed: false,
            verbose: false,
            out: None,
            constant_overrides: Vec::new(),
            grid_a: None,
            grid_d: None,
            grid_b: None,
            verify_x: None,
            verify_x_tilde: None,
            mc_samples: crate::verify::MONTE_CARLO_SAMPLES,
            enumeration_guard: crate::verify::ENUMERATION_GUARD,
            sweep_algorithms: None,
            sweep_n: None,
            sweep_epsilon: None,
            sweep_b: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    let items: Result<Vec<T>, String> =
        value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect();
    let items = items?;
    if items.is_empty() {
        return Err(format!("'{key}' needs at least one value"));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid boolean '{value}' for '{key}'")),
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError { line: idx + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            config.set(key.trim(), value.trim()).map_err(err)?;
        }
        config.check().map_err(|message| ConfigError { line: 0, message })?;
        Ok(config)
    }

    fn check(&self) -> Result<(), String> {
        if self.b == 0 {
            return Err("b must be >= 1".into());
        }
        if self.repetitions == 0 {
            return Err("repetitions must be >= 1".into());
        }
        if self.algorithm == Algorithm::Scscg && self.b != 1 {
            return Err("algorithm scscg uses b = 1; use scscg_minibatch for b > 1".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if let Some(name) = key.strip_prefix("constant.") {
            if ProblemConstants::zero(1.0).get_mut(name).is_none() {
                return Err(format!("unknown constant '{name}'"));
            }
            self.constant_overrides.push((name.to_string(), parse(key, value)?));
            return Ok(());
        }
        match key {
            "problem" | "kind" => self.problem.set("kind", value)?,
            "problem_seed" => self.problem.set("seed", value)?,
            "n" | "dim_x" | "dim_w" | "beta" | "lambda" | "region" => self.problem.set(key, value)?,
            "algorithm" => self.algorithm = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "epsilon" => self.epsilon = Some(parse(key, value)?),
            "b" => self.b = parse(key, value)?,
            "x0" => self.x0 = Some(parse_list(key, value)?),
            "x0_gap" => self.x0_gap = Some(parse(key, value)?),
            "c_a" => self.c_a = parse(key, value)?,
            "c_d" => self.c_d = parse(key, value)?,
            "c_t" => self.c_t = parse(key, value)?,
            "a" => self.overrides.a = Some(parse(key, value)?),
            "d" => self.overrides.d = Some(parse(key, value)?),
            "k" => self.overrides.k = Some(parse(key, value)?),
            "s" => self.overrides.s = Some(parse(key, value)?),
            "eta" => self.overrides.eta = Some(parse(key, value)?),
            "h" => self.overrides.h = Some(parse(key, value)?),
            "sampling" => self.sampling = value.parse()?,
            "master_seed" | "seed" => self.master_seed = parse(key, value)?,
            "repetitions" => self.repetitions = parse(key, value)?,
            "fixed_seed" => self.fixed_seed = parse_bool(key, value)?,
            "verbose" => self.verbose = parse_bool(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "grid_a" => self.grid_a = Some(parse_list(key, value)?),
            "grid_d" => self.grid_d = Some(parse_list(key, value)?),
            "grid_b" => self.grid_b = Some(parse_list(key, value)?),
            "verify_x" => self.verify_x = Some(parse_list(key, value)?),
            "verify_x_tilde" => self.verify_x_tilde = Some(parse_list(key, value)?),
            "mc_samples" => self.mc_samples = parse(key, value)?,
            "enumeration_guard" => self.enumeration_guard = parse(key, value)?,
            "sweep_algorithms" => self.sweep_algorithms = Some(parse_list(key, value)?),
            "sweep_n" => self.sweep_n = Some(parse_list(key, value)?),
            "sweep_epsilon" => self.sweep_epsilon = Some(parse_list(key, value)?),
            "sweep_b" => self.sweep_b = Some(parse_list(key, value)?),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Constants of the built problem with `constant.*` overrides applied.
    pub fn effective_constants(&self, base: &ProblemConstants) -> ProblemConstants {
        let mut c = base.clone();
        for (name, value) in &self.constant_overrides {
            if let Some(slot) = c.get_mut(name) {
                slot.value = *value;
            }
        }
        c
    }

    /// Every configuration key with its effective value, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let p = &self.problem;
        let mut out = vec![
            ("problem".into(), p.kind.to_string()),
            ("n".into(), p.n.to_string()),
            ("dim_x".into(), p.dim_x.to_string()),
            ("dim_w".into(), p.dim_w.to_string()),
            ("problem_seed".into(), p.seed.to_string()),
            ("beta".into(), p.beta.to_string()),
            ("lambda".into(), p.lambda.to_string()),
            ("region".into(), p.region.to_string()),
            ("algorithm".into(), self.algorithm.to_string()),
            ("mode".into(), self.mode.as_str().to_string()),
            ("sampling".into(), self.sampling.to_string()),
            ("x0".into(), opt(self.x0.as_deref().map(join))),
            ("x0_gap".into(), opt(self.x0_gap.map(|v| v.to_string()))),
            ("c_a".into(), self.c_a.to_string()),
            ("c_d".into(), self.c_d.to_string()),
            ("c_t".into(), self.c_t.to_string()),
            ("master_seed".into(), self.master_seed.to_string()),
            ("repetitions".into(), self.repetitions.to_string()),
            ("fixed_seed".into(), self.fixed_seed.to_string()),
            ("verbose".into(), self.verbose.to_string()),
        ];
        for (name, value) in &self.constant_overrides {
            out.push((format!("constant.{name}"), value.to_string()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let c = RunConfig::from_text("# comment\nproblem=lcq\nn=6 # inline\nalgorithm=full_anchor\neta=0.01\ngrid_b=1,2\nconstant.H1=0\n")
            .unwrap();
        assert_eq!(c.problem.n, 6);
        assert_eq!(c.algorithm, Algorithm::FullAnchor);
        assert_eq!(c.overrides.eta, Some(0.01));
        assert_eq!(c.grid_b, Some(vec![1, 2]));
        assert_eq!(c.constant_overrides, vec![("H1".to_string(), 0.0)]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::from_text("n=3\n\nalgorithm=newton\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = RunConfig::from_text("n=3\nnot a pair\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = RunConfig::from_text("constant.Q=1\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn single_pair_method_rejects_batches() {
        assert!(RunConfig::from_text("b=2\n").is_err());
        assert!(RunConfig::from_text("algorithm=scscg_minibatch\nb=2\n").is_ok());
    }
}
