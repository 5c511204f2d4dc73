//! Composition problems `f(x) = (1/n) Σᵢ Fᵢ((1/n) Σⱼ Gⱼ(x))`.
//!
//! A problem is a bundle of four component oracles (`Gⱼ`, `∂Gⱼ`, `Fᵢ`, `∇Fᵢ`)
//! plus the smoothness and variance constants the step-size rules consume.
//! The helpers in this module compute the exact full quantities (`G`, `f`,
//! `∇f`) by summing over every component; they exist for evaluation and
//! verification and are never called from inside the solver loop.

mod constants;
mod mean_variance;
mod quadratic;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ledger::QueryLedger;

pub use constants::{box_vertex_max, estimate_constants, Constant, ProblemConstants, DEFAULT_REGION};
pub use mean_variance::{make_mean_variance, MeanVariance};
pub use quadratic::{make_lcq, make_lcq_reference, make_nonconvex_synthetic, QuadraticComposition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input point")]
    NonFinite,
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Known minimizer of a problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub x: DVector<f64>,
    pub value: f64,
}

/// Component oracles of a two-level finite-sum problem.
///
/// Indices are zero-based. Implementations must be deterministic and
/// read-only after construction.
pub trait CompositionProblem: Send + Sync {
    /// Number of inner components and of outer components.
    fn n(&self) -> usize;
    fn dim_x(&self) -> usize;
    fn dim_w(&self) -> usize;

    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64>;
    /// `M × N` Jacobian of `Gⱼ`.
    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64>;
    fn outer_value(&self, i: usize, w: &DVector<f64>) -> f64;
    fn outer_gradient(&self, i: usize, w: &DVector<f64>) -> DVector<f64>;

    fn constants(&self) -> &ProblemConstants;

    fn optimum(&self) -> Option<&Optimum> {
        None
    }
}

pub(crate) fn check_point<P: CompositionProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> Result<(), ProblemError> {
    if x.len() != problem.dim_x() {
        return Err(ProblemError::DimensionMismatch { expected: problem.dim_x(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProblemError::NonFinite);
    }
    Ok(())
}

/// Mean of `Gⱼ(x)` over `indices` (summed in order, then divided).
pub fn mean_inner<P: CompositionProblem + ?Sized>(problem: &P, indices: &[usize], x: &DVector<f64>) -> DVector<f64> {
    let mut acc = DVector::zeros(problem.dim_w());
    for &j in indices {
        acc += problem.inner_value(j, x);
    }
    acc / indices.len() as f64
}

/// Mean of `∂Gⱼ(x)` over `indices`.
pub fn mean_jacobian<P: CompositionProblem + ?Sized>(problem: &P, indices: &[usize], x: &DVector<f64>) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(problem.dim_w(), problem.dim_x());
    for &j in indices {
        acc += problem.inner_jacobian(j, x);
    }
    acc / indices.len() as f64
}

/// Mean of `∇Fᵢ(w)` over `indices`.
pub fn mean_outer_gradient<P: CompositionProblem + ?Sized>(problem: &P, indices: &[usize], w: &DVector<f64>) -> DVector<f64> {
    let mut acc = DVector::zeros(problem.dim_w());
    for &i in indices {
        acc += problem.outer_gradient(i, w);
    }
    acc / indices.len() as f64
}

fn all_indices<P: CompositionProblem + ?Sized>(problem: &P) -> Vec<usize> {
    (0..problem.n()).collect()
}

/// `G(x) = (1/n) Σⱼ Gⱼ(x)`.
pub fn full_inner<P: CompositionProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
    check_point(problem, x)?;
    Ok(mean_inner(problem, &all_indices(problem), x))
}

/// [`full_inner`] that charges `n` raw inner-value calls to `ledger`.
pub fn full_inner_counted<P: CompositionProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    ledger: &mut QueryLedger,
) -> Result<DVector<f64>, ProblemError> {
    let g = full_inner(problem, x)?;
    ledger.raw_inner_values += problem.n() as u64;
    Ok(g)
}

/// `f(x) = (1/n) Σᵢ Fᵢ(G(x))`.
pub fn objective<P: CompositionProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> Result<f64, ProblemError> {
    let g = full_inner(problem, x)?;
    let n = problem.n();
    Ok((0..n).map(|i| problem.outer_value(i, &g)).sum::<f64>() / n as f64)
}

/// Exact composite gradient `(∂G(x))ᵀ ∇F(G(x))`.
pub fn full_gradient<P: CompositionProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
    check_point(problem, x)?;
    let all = all_indices(problem);
    let g = mean_inner(problem, &all, x);
    let jac = mean_jacobian(problem, &all, x);
    Ok(jac.tr_mul(&mean_outer_gradient(problem, &all, &g)))
}

/// `(f(x), ∇f(x))` sharing one pass over the inner components.
pub fn value_and_gradient<P: CompositionProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>), ProblemError> {
    check_point(problem, x)?;
    let all = all_indices(problem);
    let n = problem.n();
    let g = mean_inner(problem, &all, x);
    let value = (0..n).map(|i| problem.outer_value(i, &g)).sum::<f64>() / n as f64;
    let grad = mean_jacobian(problem, &all, x).tr_mul(&mean_outer_gradient(problem, &all, &g));
    Ok((value, grad))
}

/// Oracle calls made by one [`value_and_gradient`] evaluation.
pub fn evaluation_cost<P: CompositionProblem + ?Sized>(problem: &P) -> u64 {
    4 * problem.n() as u64
}

/// `(1/n) Σᵢ ‖G(x) − Gᵢ(x)‖²`, the quantity bounded by `H1`.
pub fn inner_variance<P: CompositionProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> f64 {
    let n = problem.n();
    let values: Vec<DVector<f64>> = (0..n).map(|j| problem.inner_value(j, x)).collect();
    let mean = values.iter().fold(DVector::zeros(problem.dim_w()), |acc, v| acc + v) / n as f64;
    values.iter().map(|v| (&mean - v).norm_squared()).sum::<f64>() / n as f64
}

/// `(1/n²) Σᵢⱼ ‖(∂G(x))ᵀ∇F(y) − (∂Gⱼ(x))ᵀ∇Fᵢ(y)‖²`, the quantity bounded by `H2`.
pub fn composite_variance<P: CompositionProblem + ?Sized>(problem: &P, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = problem.n();
    let jacobians: Vec<DMatrix<f64>> = (0..n).map(|j| problem.inner_jacobian(j, x)).collect();
    let grads: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, y)).collect();
    let jac_mean = jacobians.iter().fold(DMatrix::zeros(problem.dim_w(), problem.dim_x()), |acc, m| acc + m) / n as f64;
    let grad_mean = grads.iter().fold(DVector::zeros(problem.dim_w()), |acc, g| acc + g) / n as f64;
    let center = jac_mean.tr_mul(&grad_mean);
    let mut total = 0.0;
    for jac in &jacobians {
        for g in &grads {
            total += (&center - jac.tr_mul(g)).norm_squared();
        }
    }
    total / (n * n) as f64
}

/// [`composite_variance`] at `y = G(x)`.
pub fn composite_variance_at<P: CompositionProblem + ?Sized>(problem: &P, x: &DVector<f64>) -> f64 {
    let all = all_indices(problem);
    let g = mean_inner(problem, &all, x);
    composite_variance(problem, x, &g)
}

/// Built-in problem families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Lcq,
    LcqReference,
    MeanVariance,
    Nonconvex,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Lcq => "lcq",
            ProblemKind::LcqReference => "lcq_reference",
            ProblemKind::MeanVariance => "mean_variance",
            ProblemKind::Nonconvex => "nonconvex",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lcq" => Ok(ProblemKind::Lcq),
            "lcq_reference" => Ok(ProblemKind::LcqReference),
            "mean_variance" => Ok(ProblemKind::MeanVariance),
            "nonconvex" => Ok(ProblemKind::Nonconvex),
            other => Err(format!("unknown problem kind '{other}'")),
        }
    }
}

/// Everything needed to regenerate a built-in instance bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n: usize,
    pub dim_x: usize,
    pub dim_w: usize,
    pub seed: u64,
    pub beta: f64,
    pub lambda: f64,
    pub region: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Lcq,
            n: 10,
            dim_x: 3,
            dim_w: 3,
            seed: 7,
            beta: 0.5,
            lambda: 1.0,
            region: DEFAULT_REGION,
        }
    }
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn CompositionProblem>, ProblemError> {
        Ok(match self.kind {
            ProblemKind::Lcq => Box::new(QuadraticComposition::lcq(self.n, self.dim_x, self.dim_w, self.seed, self.region)?),
            ProblemKind::LcqReference => Box::new(make_lcq_reference()),
            ProblemKind::MeanVariance => {
                Box::new(MeanVariance::random(self.n, self.dim_x, self.lambda, self.seed, self.region)?)
            }
            ProblemKind::Nonconvex => Box::new(QuadraticComposition::random(
                self.n,
                self.dim_x,
                self.dim_w,
                self.beta,
                self.seed,
                self.region,
            )?),
        })
    }

    /// Flat `key=value` text form.
    pub fn to_text(&self) -> String {
        format!(
            "kind={}\nn={}\ndim_x={}\ndim_w={}\nseed={}\nbeta={}\nlambda={}\nregion={}\n",
            self.kind, self.n, self.dim_x, self.dim_w, self.seed, self.beta, self.lambda, self.region
        )
    }

    pub fn from_text(text: &str) -> Result<Self, ProblemError> {
        let mut spec = ProblemSpec::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ProblemError::Parse {
                line: idx + 1,
                message: format!("expected key=value, got '{line}'"),
            })?;
            spec.set(key.trim(), value.trim()).map_err(|message| ProblemError::Parse { line: idx + 1, message })?;
        }
        Ok(spec)
    }

    /// Applies one `key=value` pair. Returns `Err` with a message on bad input.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("invalid value '{value}' for '{key}'"))
        }
        match key {
            "kind" => self.kind = value.parse()?,
            "n" => self.n = num(key, value)?,
            "dim_x" => self.dim_x = num(key, value)?,
            "dim_w" => self.dim_w = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "region" => self.region = num(key, value)?,
            other => return Err(format!("unknown problem key '{other}'")),
        }
        Ok(())
    }
}
