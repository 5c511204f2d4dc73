//! Independent checks of the variance lemmas and the gradient oracles.
//!
//! Expectations over index batches are computed by exact enumeration of
//! batch outcomes (combinations without replacement, multisets with
//! multinomial weights with replacement) when the outcome count is within
//! the guard, and by Monte Carlo otherwise.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimator::{EpochAnchor, InnerEstimate};
use crate::problem::{
    check_point, full_gradient, full_inner, mean_inner, mean_outer_gradient, objective,
    CompositionProblem, ProblemConstants, ProblemError,
};
use crate::sampling::{sample, sample_with_policy, BatchKind, SampleError, SampleMode, SamplingPolicy, StreamRole, StreamSplitter};

/// Default cap on enumerated outcomes.
pub const ENUMERATION_GUARD: u64 = 1_000_000;
/// Default resample count for Monte Carlo fallbacks.
pub const MONTE_CARLO_SAMPLES: u64 = 10_000;

const EXACT_RELATIVE_SLACK: f64 = 1e-12;
const EXACT_ABSOLUTE_SLACK: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("input vectors do not sum to zero after centering (residual {0})")]
    NotCentered(f64),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Exact,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Bound built from estimated constants; reported but not judged.
    Suppressed,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Suppressed => "suppressed",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    /// Measured expectation (equal to `exact` when enumerated).
    pub empirical: f64,
    pub bound: f64,
    pub exact: Option<f64>,
    /// Closed-form value of the expectation when one is known.
    pub closed_form: Option<f64>,
    /// Enumerated outcomes or Monte Carlo resamples.
    pub samples: u64,
    /// Monte Carlo standard error; `0` when enumerated.
    pub sigma: f64,
    pub method: Method,
    pub verdict: Verdict,
}

impl VarianceReport {
    fn judge(empirical: f64, bound: f64, method: Method, sigma: f64) -> Verdict {
        let ok = match method {
            Method::Exact => empirical <= bound * (1.0 + EXACT_RELATIVE_SLACK) + EXACT_ABSOLUTE_SLACK,
            Method::MonteCarlo => empirical <= bound + 3.0 * sigma,
        };
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    fn from_estimate(est: Estimate, bound: f64, closed_form: Option<f64>, judged: bool) -> Self {
        let verdict = if judged { Self::judge(est.mean, bound, est.method, est.sigma) } else { Verdict::Suppressed };
        Self {
            empirical: est.mean,
            bound,
            exact: (est.method == Method::Exact).then_some(est.mean),
            closed_form,
            samples: est.samples,
            sigma: est.sigma,
            method: est.method,
            verdict,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Clone, Copy, Debug)]
struct Estimate {
    mean: f64,
    sigma: f64,
    samples: u64,
    method: Method,
}

impl Estimate {
    fn exact(mean: f64, samples: u64) -> Self {
        Self { mean, sigma: 0.0, samples, method: Method::Exact }
    }

    fn monte_carlo(values: &[f64]) -> Self {
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0).max(1.0);
        Self { mean, sigma: (var / r).sqrt(), samples: values.len() as u64, method: Method::MonteCarlo }
    }
}

/// One equiprobable-class outcome of drawing an index batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub indices: Vec<usize>,
    pub prob: f64,
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of grouped outcomes [`batch_outcomes`] would produce.
pub fn outcome_count(n: usize, size: usize, kind: BatchKind) -> f64 {
    match kind {
        BatchKind::Cover => 1.0,
        BatchKind::Random(SampleMode::WithReplacement) => binomial((n + size - 1) as u64, size as u64),
        BatchKind::Random(SampleMode::WithoutReplacement) => binomial(n as u64, size as u64),
    }
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Every distinct batch with its probability, or `None` beyond `guard`.
pub fn batch_outcomes(n: usize, size: usize, kind: BatchKind, guard: u64) -> Option<Vec<Outcome>> {
    if outcome_count(n, size, kind) > guard as f64 {
        return None;
    }
    match kind {
        BatchKind::Cover => Some(vec![Outcome { indices: (0..n).collect(), prob: 1.0 }]),
        BatchKind::Random(mode) => {
            let mut out = Vec::new();
            let mut current = Vec::with_capacity(size);
            let replace = mode == SampleMode::WithReplacement;
            let combos = binomial(n as u64, size as u64);
            let ln_tuple = size as f64 * (n as f64).ln();
            let ln_size_fact = ln_factorial(size);
            fn walk(
                start: usize,
                n: usize,
                size: usize,
                replace: bool,
                current: &mut Vec<usize>,
                emit: &mut dyn FnMut(&[usize]),
            ) {
                if current.len() == size {
                    emit(current);
                    return;
                }
                for idx in start..n {
                    current.push(idx);
                    walk(if replace { idx } else { idx + 1 }, n, size, replace, current, emit);
                    current.pop();
                }
            }
            let mut emit = |batch: &[usize]| {
                let prob = if replace {
                    let mut ln_prob = ln_size_fact - ln_tuple;
                    let mut run = 1;
                    for w in 1..=batch.len() {
                        if w < batch.len() && batch[w] == batch[w - 1] {
                            run += 1;
                        } else {
                            ln_prob -= ln_factorial(run);
                            run = 1;
                        }
                    }
                    ln_prob.exp()
                } else {
                    1.0 / combos
                };
                out.push(Outcome { indices: batch.to_vec(), prob });
            };
            walk(0, n, size, replace, &mut current, &mut emit);
            Some(out)
        }
    }
}

fn mean_vec(vs: &[DVector<f64>], indices: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(vs[0].len());
    for &i in indices {
        acc += &vs[i];
    }
    acc / indices.len() as f64
}

fn mean_mat(ms: &[DMatrix<f64>], indices: &[usize]) -> DMatrix<f64> {
    let (r, c) = ms[0].shape();
    let mut acc = DMatrix::zeros(r, c);
    for &i in indices {
        acc += &ms[i];
    }
    acc / indices.len() as f64
}

/// `E‖(1/A)Σ_{b∈A} v_b‖²` against the subset-mean variance identity.
///
/// `v` is centered first. The bound is `𝕀(A<n)/A·(1/n)Σ‖vᵢ‖²` without
/// replacement and `(1/(An))Σ‖vᵢ‖²` with replacement; the closed forms are
/// `(n−A)/(A(n−1))·(1/n)Σ‖vᵢ‖²` and `(1/(An))Σ‖vᵢ‖²`.
pub fn subset_variance_exact(v: &[DVector<f64>], a: usize, mode: SampleMode) -> Result<VarianceReport, VerifyError> {
    subset_variance_with(v, a, mode, ENUMERATION_GUARD, MONTE_CARLO_SAMPLES, 0)
}

pub fn subset_variance_with(
    v: &[DVector<f64>],
    a: usize,
    mode: SampleMode,
    guard: u64,
    mc_samples: u64,
    seed: u64,
) -> Result<VarianceReport, VerifyError> {
    let n = v.len();
    if n == 0 || a == 0 {
        return Err(VerifyError::Input("need n >= 1 vectors and A >= 1".into()));
    }
    if mode == SampleMode::WithoutReplacement && a > n {
        return Err(SampleError::TooManyDistinct { n, size: a }.into());
    }
    let all: Vec<usize> = (0..n).collect();
    let mean = mean_vec(v, &all);
    let centered: Vec<DVector<f64>> = v.iter().map(|vi| vi - &mean).collect();
    let scale = 1.0 + v.iter().map(|vi| vi.norm()).fold(0.0, f64::max);
    let residual = centered.iter().fold(DVector::zeros(v[0].len()), |acc, c| acc + c).norm();
    if residual > 1e-10 * scale * n as f64 {
        return Err(VerifyError::NotCentered(residual));
    }
    let second = centered.iter().map(|c| c.norm_squared()).sum::<f64>() / n as f64;
    let af = a as f64;
    let (closed, bound) = match mode {
        SampleMode::WithReplacement => (second / af, second / af),
        SampleMode::WithoutReplacement => {
            let closed = if n == 1 { 0.0 } else { (n - a) as f64 / (af * (n - 1) as f64) * second };
            let bound = if a < n { second / af } else { 0.0 };
            (closed, bound)
        }
    };
    let kind = BatchKind::Random(mode);
    let est = match batch_outcomes(n, a, kind, guard) {
        Some(outcomes) => {
            let value = outcomes.iter().map(|o| o.prob * mean_vec(&centered, &o.indices).norm_squared()).sum();
            Estimate::exact(value, outcomes.len() as u64)
        }
        None => {
            let splitter = StreamSplitter::new(seed);
            let mut stream = splitter.stream(StreamRole::Verification, 1, 0, 0);
            let mut values = Vec::with_capacity(mc_samples as usize);
            for _ in 0..mc_samples {
                let batch = sample(n, a, mode, &mut stream)?;
                values.push(mean_vec(&centered, &batch.indices).norm_squared());
            }
            Estimate::monte_carlo(&values)
        }
    };
    Ok(VarianceReport::from_estimate(est, bound, Some(closed), true))
}

/// `E‖(1/D²)(Σ_{D1} w)ᵀ(Σ_{D2} v) − w̄ᵀv̄‖²` with `D1`, `D2` independent,
/// against `𝕀(D²<n²)/D²·(1/n²)Σᵢⱼ‖wᵢᵀvⱼ − w̄ᵀv̄‖²`.
pub fn double_subset_variance(
    w: &[DMatrix<f64>],
    v: &[DVector<f64>],
    d: usize,
    policy: SamplingPolicy,
) -> Result<VarianceReport, VerifyError> {
    double_subset_variance_with(w, v, d, policy, ENUMERATION_GUARD, MONTE_CARLO_SAMPLES, 0)
}

pub fn double_subset_variance_with(
    w: &[DMatrix<f64>],
    v: &[DVector<f64>],
    d: usize,
    policy: SamplingPolicy,
    guard: u64,
    mc_samples: u64,
    seed: u64,
) -> Result<VarianceReport, VerifyError> {
    let n = w.len();
    if n == 0 || v.len() != n || d == 0 {
        return Err(VerifyError::Input("need n >= 1 matching w and v, and D >= 1".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let center = mean_mat(w, &all).tr_mul(&mean_vec(v, &all));
    let mut spread = 0.0;
    for wi in w {
        for vj in v {
            spread += (wi.tr_mul(vj) - &center).norm_squared();
        }
    }
    spread /= (n * n) as f64;
    let df = d as f64;
    let bound = if d * d < n * n { spread / (df * df) } else { 0.0 };

    let kind = policy.resolve(n, d);
    let count = outcome_count(n, d, kind);
    let est = if count * count <= guard as f64 {
        let outcomes = batch_outcomes(n, d, kind, guard).expect("count checked");
        let w_means: Vec<DMatrix<f64>> = outcomes.iter().map(|o| mean_mat(w, &o.indices)).collect();
        let v_means: Vec<DVector<f64>> = outcomes.iter().map(|o| mean_vec(v, &o.indices)).collect();
        let mut value = 0.0;
        for (o1, wm) in outcomes.iter().zip(&w_means) {
            for (o2, vm) in outcomes.iter().zip(&v_means) {
                value += o1.prob * o2.prob * (wm.tr_mul(vm) - &center).norm_squared();
            }
        }
        Estimate::exact(value, outcomes.len() as u64 * outcomes.len() as u64)
    } else {
        let splitter = StreamSplitter::new(seed);
        let mut s1 = splitter.stream(StreamRole::Verification, 2, 1, 0);
        let mut s2 = splitter.stream(StreamRole::Verification, 2, 2, 0);
        let mut values = Vec::with_capacity(mc_samples as usize);
        for _ in 0..mc_samples {
            let b1 = sample_with_policy(n, d, policy, &mut s1)?;
            let b2 = sample_with_policy(n, d, policy, &mut s2)?;
            values.push((mean_mat(w, &b1.indices).tr_mul(&mean_vec(v, &b2.indices)) - &center).norm_squared());
        }
        Estimate::monte_carlo(&values)
    };
    Ok(VarianceReport::from_estimate(est, bound, None, true))
}

/// Lemma-side right-hand sides for estimator errors at batch sizes `(A, D, b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaBounds {
    pub inner: f64,
    pub conditional_mean: f64,
    pub single_pair: f64,
    pub minibatch: f64,
}

pub fn lemma_bounds(constants: &ProblemConstants, n: usize, a: usize, d: usize, b: usize, dist_sq: f64) -> LemmaBounds {
    let bg = constants.jacobian_bound.value;
    let lf_outer = constants.outer_smoothness.value;
    let l_f = constants.composite_smoothness.value;
    let h1 = constants.inner_variance.value;
    let h2 = constants.composite_variance.value;
    let ia = if a < n { 1.0 / a as f64 } else { 0.0 };
    let id = if d < n { 1.0 / d as f64 } else { 0.0 };
    let id2 = if d * d < n * n { 1.0 / (d * d) as f64 } else { 0.0 };
    let bg2lf2 = bg * bg * lf_outer * lf_outer;
    let bg4lf2 = bg2lf2 * bg * bg;
    let disp = bg4lf2 * (4.0 * ia + 4.0 * id);
    LemmaBounds {
        inner: 4.0 * (ia + id) * bg * bg * dist_sq + 2.0 * id * h1,
        conditional_mean: 4.0 * disp * dist_sq + 16.0 * bg2lf2 * id * h1 + 4.0 * id2 * h2,
        single_pair: 5.0 * (l_f * l_f + disp) * dist_sq + 20.0 * bg2lf2 * id * h1 + 5.0 * id2 * h2,
        minibatch: 5.0 * (l_f * l_f / b as f64 + disp) * dist_sq + 20.0 * bg2lf2 * id * h1 + 5.0 * id2 * h2,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EnumerationOptions {
    pub guard: u64,
    pub mc_samples: u64,
    pub seed: u64,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self { guard: ENUMERATION_GUARD, mc_samples: MONTE_CARLO_SAMPLES, seed: 0 }
    }
}

/// Reports for the inner-value error, the conditional-mean error, the
/// single-pair error and one mini-batch error per requested `b`.
#[derive(Clone, Debug)]
pub struct EstimatorReports {
    pub inner: VarianceReport,
    pub conditional_mean: VarianceReport,
    pub single_pair: VarianceReport,
    pub minibatch: Vec<(usize, VarianceReport)>,
}

struct Precomputed {
    gx: Vec<DVector<f64>>,
    gt: Vec<DVector<f64>>,
    jx: Vec<DMatrix<f64>>,
    jt: Vec<DMatrix<f64>>,
}

/// Per-(A, D1) quantities: inner error, the anchor-independent part of the
/// conditional mean, and the pair variance.
fn inner_step_terms<P: CompositionProblem + ?Sized>(
    problem: &P,
    pre: &Precomputed,
    a_idx: &[usize],
    g_anchor: &DVector<f64>,
    g_true: &DVector<f64>,
) -> (f64, DVector<f64>, f64) {
    let n = problem.n();
    let g_hat = mean_vec(&pre.gx, a_idx) - mean_vec(&pre.gt, a_idx) + g_anchor;
    let inner_err = (&g_hat - g_true).norm_squared();
    let fx: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, &g_hat)).collect();
    let ft: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, g_anchor)).collect();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            values.push(pre.jx[j].tr_mul(&fx[i]) - pre.jt[j].tr_mul(&ft[i]));
        }
    }
    let count = values.len() as f64;
    let mean = values.iter().fold(DVector::zeros(problem.dim_x()), |acc, v| acc + v) / count;
    let var = values.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / count;
    (inner_err, mean, var)
}

/// Expectations of the estimator errors over `(A, D1, D2)` with the pair
/// `(i, j)` integrated exactly, compared with the lemma bounds built from
/// `constants`.
#[allow(clippy::too_many_arguments)]
pub fn estimator_bias_enumeration<P: CompositionProblem + ?Sized>(
    problem: &P,
    constants: &ProblemConstants,
    x_k: &DVector<f64>,
    x_tilde: &DVector<f64>,
    a: usize,
    d: usize,
    bs: &[usize],
    policy: SamplingPolicy,
    options: EnumerationOptions,
) -> Result<EstimatorReports, VerifyError> {
    check_point(problem, x_k)?;
    check_point(problem, x_tilde)?;
    if a == 0 || d == 0 || bs.contains(&0) {
        return Err(VerifyError::Input("A, D and b must be >= 1".into()));
    }
    let n = problem.n();
    let pre = Precomputed {
        gx: (0..n).map(|j| problem.inner_value(j, x_k)).collect(),
        gt: (0..n).map(|j| problem.inner_value(j, x_tilde)).collect(),
        jx: (0..n).map(|j| problem.inner_jacobian(j, x_k)).collect(),
        jt: (0..n).map(|j| problem.inner_jacobian(j, x_tilde)).collect(),
    };
    let g_true = full_inner(problem, x_k)?;
    let grad_true = full_gradient(problem, x_k)?;
    let dist_sq = (x_k - x_tilde).norm_squared();
    let bounds: Vec<LemmaBounds> = std::iter::once(1).chain(bs.iter().copied())
        .map(|b| lemma_bounds(constants, n, a, d, b, dist_sq))
        .collect();
    let judged = !constants.any_estimated();

    let a_kind = policy.resolve(n, a);
    let d_kind = policy.resolve(n, d);
    let total = outcome_count(n, a, a_kind) * outcome_count(n, d, d_kind).powi(2);

    // Per-sample quantities: inner error, conditional-mean error, pair variance.
    let (inner, cond, pair_var) = if total <= options.guard as f64 {
        let a_out = batch_outcomes(n, a, a_kind, options.guard).expect("guarded");
        let d_out = batch_outcomes(n, d, d_kind, options.guard).expect("guarded");
        let mut inner = 0.0;
        let mut cond = 0.0;
        let mut pair_var = 0.0;
        for o1 in &d_out {
            let g_anchor = mean_vec(&pre.gt, &o1.indices);
            let j_anchor = mean_mat(&pre.jt, &o1.indices);
            let anchor_grads: Vec<DVector<f64>> = d_out
                .iter()
                .map(|o2| j_anchor.tr_mul(&mean_outer_gradient(problem, &o2.indices, &g_anchor)))
                .collect();
            for oa in &a_out {
                let p = o1.prob * oa.prob;
                let (ie, part, var) = inner_step_terms(problem, &pre, &oa.indices, &g_anchor, &g_true);
                inner += p * ie;
                pair_var += p * var;
                let shifted = part - &grad_true;
                for (o2, ag) in d_out.iter().zip(&anchor_grads) {
                    cond += p * o2.prob * (&shifted + ag).norm_squared();
                }
            }
        }
        let count = total as u64;
        (Estimate::exact(inner, count), Estimate::exact(cond, count), Estimate::exact(pair_var, count))
    } else {
        let splitter = StreamSplitter::new(options.seed);
        let mut sa = splitter.stream(StreamRole::Verification, 3, 0, 0);
        let mut s1 = splitter.stream(StreamRole::Verification, 3, 1, 0);
        let mut s2 = splitter.stream(StreamRole::Verification, 3, 2, 0);
        let r = options.mc_samples as usize;
        let (mut iv, mut cv, mut pv) = (Vec::with_capacity(r), Vec::with_capacity(r), Vec::with_capacity(r));
        for _ in 0..r {
            let ab = sample_with_policy(n, a, policy, &mut sa)?;
            let d1 = sample_with_policy(n, d, policy, &mut s1)?;
            let d2 = sample_with_policy(n, d, policy, &mut s2)?;
            let g_anchor = mean_vec(&pre.gt, &d1.indices);
            let ag = mean_mat(&pre.jt, &d1.indices).tr_mul(&mean_outer_gradient(problem, &d2.indices, &g_anchor));
            let (ie, part, var) = inner_step_terms(problem, &pre, &ab.indices, &g_anchor, &g_true);
            iv.push(ie);
            cv.push((part + ag - &grad_true).norm_squared());
            pv.push(var);
        }
        (Estimate::monte_carlo(&iv), Estimate::monte_carlo(&cv), Estimate::monte_carlo(&pv))
    };

    let combine = |b: usize| -> Estimate {
        let bf = b as f64;
        match (cond.method, pair_var.method) {
            (Method::Exact, _) => Estimate::exact(cond.mean + pair_var.mean / bf, cond.samples),
            _ => Estimate {
                mean: cond.mean + pair_var.mean / bf,
                sigma: cond.sigma + pair_var.sigma / bf,
                samples: cond.samples,
                method: Method::MonteCarlo,
            },
        }
    };

    Ok(EstimatorReports {
        inner: VarianceReport::from_estimate(inner, bounds[0].inner, None, judged),
        conditional_mean: VarianceReport::from_estimate(cond, bounds[0].conditional_mean, None, judged),
        single_pair: VarianceReport::from_estimate(combine(1), bounds[0].single_pair, None, judged),
        minibatch: bs
            .iter()
            .zip(&bounds[1..])
            .map(|(&b, bd)| (b, VarianceReport::from_estimate(combine(b), bd.minibatch, None, judged)))
            .collect(),
    })
}

/// Conditional mean over uniform `(i, j)` minus the true gradient, for fixed
/// batches. Nonzero values exhibit the anchor bias.
pub fn conditional_bias<P: CompositionProblem + ?Sized>(
    problem: &P,
    x_k: &DVector<f64>,
    est: &InnerEstimate,
    anchor: &EpochAnchor,
) -> Result<DVector<f64>, VerifyError> {
    let (mean, _) = crate::estimator::pair_moments(problem, x_k, est, anchor);
    Ok(mean - full_gradient(problem, x_k)?)
}

/// `E‖Λ − EΛ‖²` by enumerating every ordered `b`-tuple of pairs, or `None`
/// beyond `guard`.
pub fn enumerated_minibatch_variance<P: CompositionProblem + ?Sized>(
    problem: &P,
    x_k: &DVector<f64>,
    est: &InnerEstimate,
    anchor: &EpochAnchor,
    b: usize,
    guard: u64,
) -> Option<f64> {
    let n = problem.n();
    let m = n * n;
    if b == 0 || (m as f64).powi(b as i32) > guard as f64 {
        return None;
    }
    let jx: Vec<DMatrix<f64>> = (0..n).map(|j| problem.inner_jacobian(j, x_k)).collect();
    let jt: Vec<DMatrix<f64>> = (0..n).map(|j| problem.inner_jacobian(j, &anchor.x_tilde)).collect();
    let fx: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, &est.value)).collect();
    let ft: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, &anchor.g_anchor)).collect();
    let singles: Vec<DVector<f64>> = (0..m)
        .map(|p| {
            let (i, j) = (p / n, p % n);
            jx[j].tr_mul(&fx[i]) - jt[j].tr_mul(&ft[i]) + &anchor.grad_anchor
        })
        .collect();
    let total = m.pow(b as u32);
    let mut values = Vec::with_capacity(total);
    let mut digits = vec![0usize; b];
    for _ in 0..total {
        let mut acc = singles[digits[0]].clone();
        for &dgt in &digits[1..] {
            acc += &singles[dgt];
        }
        values.push(acc / b as f64);
        for slot in digits.iter_mut() {
            *slot += 1;
            if *slot < m {
                break;
            }
            *slot = 0;
        }
    }
    let mean = values.iter().fold(DVector::zeros(problem.dim_x()), |acc, v| acc + v) / total as f64;
    Some(values.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / total as f64)
}

/// Central differences of the exact objective; `step` defaults to
/// `1e-5·(1 + ‖x‖)` when `None`.
pub fn finite_diff_gradient<P: CompositionProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    step: Option<f64>,
) -> Result<DVector<f64>, VerifyError> {
    check_point(problem, x)?;
    let h = step.unwrap_or(1e-5 * (1.0 + x.norm()));
    if !(h > 0.0) {
        return Err(VerifyError::Input(format!("step must be positive, got {h}")));
    }
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for c in 0..x.len() {
        probe[c] = x[c] + h;
        let up = objective(problem, &probe)?;
        probe[c] = x[c] - h;
        let down = objective(problem, &probe)?;
        probe[c] = x[c];
        grad[c] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Lemma names used in grid rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LemmaKind {
    AnchorProduct,
    InnerValue,
    ConditionalMean,
    SinglePair,
    MiniBatch,
}

impl LemmaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LemmaKind::AnchorProduct => "anchor_product",
            LemmaKind::InnerValue => "inner_value",
            LemmaKind::ConditionalMean => "conditional_mean",
            LemmaKind::SinglePair => "single_pair",
            LemmaKind::MiniBatch => "minibatch",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridRow {
    pub lemma: LemmaKind,
    pub a: usize,
    pub d: usize,
    pub b: usize,
    pub report: VarianceReport,
}

/// All lemma rows for every `(A, D, b)` in `a_values × d_values × b_values`.
///
/// The anchor-product rows use `wⱼ = ∂Gⱼ(x̃)` and `vᵢ = ∇Fᵢ(G(x̃))`.
#[allow(clippy::too_many_arguments)]
pub fn lemma_grid<P: CompositionProblem + ?Sized>(
    problem: &P,
    constants: &ProblemConstants,
    x_k: &DVector<f64>,
    x_tilde: &DVector<f64>,
    a_values: &[usize],
    d_values: &[usize],
    b_values: &[usize],
    policy: SamplingPolicy,
    options: EnumerationOptions,
) -> Result<Vec<GridRow>, VerifyError> {
    let n = problem.n();
    let all: Vec<usize> = (0..n).collect();
    let g_tilde = mean_inner(problem, &all, x_tilde);
    let w: Vec<DMatrix<f64>> = (0..n).map(|j| problem.inner_jacobian(j, x_tilde)).collect();
    let v: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, &g_tilde)).collect();
    let mut rows = Vec::new();
    for &a in a_values {
        for &d in d_values {
            let product =
                double_subset_variance_with(&w, &v, d, policy, options.guard, options.mc_samples, options.seed)?;
            let reports = estimator_bias_enumeration(problem, constants, x_k, x_tilde, a, d, b_values, policy, options)?;
            for (b, mb) in &reports.minibatch {
                let b = *b;
                rows.push(GridRow { lemma: LemmaKind::AnchorProduct, a, d, b, report: product.clone() });
                rows.push(GridRow { lemma: LemmaKind::InnerValue, a, d, b, report: reports.inner.clone() });
                rows.push(GridRow { lemma: LemmaKind::ConditionalMean, a, d, b, report: reports.conditional_mean.clone() });
                rows.push(GridRow { lemma: LemmaKind::SinglePair, a, d, b, report: reports.single_pair.clone() });
                rows.push(GridRow { lemma: LemmaKind::MiniBatch, a, d, b, report: mb.clone() });
            }
        }
    }
    Ok(rows)
}

/// `{1, ⌈n/2⌉, n}` with duplicates removed.
pub fn default_sizes(n: usize) -> Vec<usize> {
    let mut v = vec![1, n.div_ceil(2), n];
    v.dedup();
    v
}
