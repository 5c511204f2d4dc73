//! Variance-reduced estimators for the inner value and the composite gradient.

use nalgebra::{DMatrix, DVector};

use crate::ledger::QueryLedger;
use crate::problem::{check_point, mean_inner, mean_jacobian, mean_outer_gradient, CompositionProblem, ProblemError};
use crate::sampling::{sample_with_policy, IndexBatch, SampleError, SamplingPolicy, StreamRole, StreamSplitter};

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("anchor batches must have equal size (got {d1} and {d2})")]
    UnequalAnchor { d1: usize, d2: usize },
    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("empty pair list")]
    NoPairs,
}

/// Snapshot quantities computed once per epoch.
#[derive(Clone, Debug)]
pub struct EpochAnchor {
    pub x_tilde: DVector<f64>,
    pub d1: IndexBatch,
    pub d2: IndexBatch,
    /// `G_{D1}(x̃)`.
    pub g_anchor: DVector<f64>,
    /// `(∂G_{D1}(x̃))ᵀ ∇F_{D2}(G_{D1}(x̃))`.
    pub grad_anchor: DVector<f64>,
    pub epoch: usize,
}

fn check_indices(indices: &[usize], n: usize) -> Result<(), EstimatorError> {
    match indices.iter().find(|&&i| i >= n) {
        Some(&index) => Err(EstimatorError::IndexOutOfRange { index, n }),
        None if indices.is_empty() => Err(SampleError::EmptyBatch.into()),
        None => Ok(()),
    }
}

impl EpochAnchor {
    pub fn from_batches<P: CompositionProblem + ?Sized>(
        problem: &P,
        x_tilde: &DVector<f64>,
        d1: IndexBatch,
        d2: IndexBatch,
        epoch: usize,
        ledger: &mut QueryLedger,
    ) -> Result<Self, EstimatorError> {
        check_point(problem, x_tilde)?;
        check_indices(&d1.indices, problem.n())?;
        check_indices(&d2.indices, problem.n())?;
        if d1.len() != d2.len() {
            return Err(EstimatorError::UnequalAnchor { d1: d1.len(), d2: d2.len() });
        }
        let g_anchor = mean_inner(problem, &d1.indices, x_tilde);
        let jac = mean_jacobian(problem, &d1.indices, x_tilde);
        let grad_anchor = jac.tr_mul(&mean_outer_gradient(problem, &d2.indices, &g_anchor));
        ledger.charge_anchor(d1.len());
        Ok(Self { x_tilde: x_tilde.clone(), d1, d2, g_anchor, grad_anchor, epoch })
    }

    /// Draws `D1` and `D2` of size `d` from the epoch's anchor streams.
    #[allow(clippy::too_many_arguments)]
    pub fn sample<P: CompositionProblem + ?Sized>(
        problem: &P,
        x_tilde: &DVector<f64>,
        d: usize,
        policy: SamplingPolicy,
        splitter: &StreamSplitter,
        epoch: usize,
        ledger: &mut QueryLedger,
    ) -> Result<Self, EstimatorError> {
        let n = problem.n();
        let mut s1 = splitter.stream(StreamRole::AnchorInner, epoch as u64, 0, 0);
        let mut s2 = splitter.stream(StreamRole::AnchorOuter, epoch as u64, 0, 0);
        let d1 = sample_with_policy(n, d, policy, &mut s1)?;
        let d2 = sample_with_policy(n, d, policy, &mut s2)?;
        Self::from_batches(problem, x_tilde, d1, d2, epoch, ledger)
    }
}

/// `Ĝₖ = G_A(xₖ) − G_A(x̃) + G_{D1}(x̃)`.
#[derive(Clone, Debug)]
pub struct InnerEstimate {
    pub value: DVector<f64>,
    pub a_batch: IndexBatch,
}

impl InnerEstimate {
    pub fn from_batch<P: CompositionProblem + ?Sized>(
        problem: &P,
        x: &DVector<f64>,
        anchor: &EpochAnchor,
        a_batch: IndexBatch,
        ledger: &mut QueryLedger,
    ) -> Result<Self, EstimatorError> {
        check_point(problem, x)?;
        check_indices(&a_batch.indices, problem.n())?;
        let value = mean_inner(problem, &a_batch.indices, x) - mean_inner(problem, &a_batch.indices, &anchor.x_tilde)
            + &anchor.g_anchor;
        ledger.charge_inner_estimate(a_batch.len());
        Ok(Self { value, a_batch })
    }
}

/// Single-pair estimate
/// `(∂Gⱼ(x))ᵀ∇Fᵢ(Ĝ) − (∂Gⱼ(x̃))ᵀ∇Fᵢ(G_{D1}(x̃)) + ∇f̂_D`.
pub fn estimate_gradient<P: CompositionProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    est: &InnerEstimate,
    anchor: &EpochAnchor,
    i: usize,
    j: usize,
    ledger: &mut QueryLedger,
) -> Result<DVector<f64>, EstimatorError> {
    check_indices(&[i, j], problem.n())?;
    let current = problem.inner_jacobian(j, x).tr_mul(&problem.outer_gradient(i, &est.value));
    let snapshot = problem.inner_jacobian(j, &anchor.x_tilde).tr_mul(&problem.outer_gradient(i, &anchor.g_anchor));
    ledger.charge_pair();
    Ok(current - snapshot + &anchor.grad_anchor)
}

/// Mean of [`estimate_gradient`] over `pairs`, all sharing one `Ĝ`.
pub fn minibatch_gradient<P: CompositionProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    est: &InnerEstimate,
    anchor: &EpochAnchor,
    pairs: &[(usize, usize)],
    ledger: &mut QueryLedger,
) -> Result<DVector<f64>, EstimatorError> {
    let (&(i0, j0), rest) = pairs.split_first().ok_or(EstimatorError::NoPairs)?;
    let mut acc = estimate_gradient(problem, x, est, anchor, i0, j0, ledger)?;
    for &(i, j) in rest {
        acc += estimate_gradient(problem, x, est, anchor, i, j, ledger)?;
    }
    Ok(acc / pairs.len() as f64)
}

/// Mean and variance of the single-pair estimate over uniform `(i, j)`
/// with `Ĝ` held fixed. No oracle calls are charged.
pub fn pair_moments<P: CompositionProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    est: &InnerEstimate,
    anchor: &EpochAnchor,
) -> (DVector<f64>, f64) {
    let n = problem.n();
    let jx: Vec<DMatrix<f64>> = (0..n).map(|j| problem.inner_jacobian(j, x)).collect();
    let jt: Vec<DMatrix<f64>> = (0..n).map(|j| problem.inner_jacobian(j, &anchor.x_tilde)).collect();
    let gx: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, &est.value)).collect();
    let gt: Vec<DVector<f64>> = (0..n).map(|i| problem.outer_gradient(i, &anchor.g_anchor)).collect();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            values.push(jx[j].tr_mul(&gx[i]) - jt[j].tr_mul(&gt[i]) + &anchor.grad_anchor);
        }
    }
    let count = values.len() as f64;
    let mean = values.iter().fold(DVector::zeros(problem.dim_x()), |acc, v| acc + v) / count;
    let var = values.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / count;
    (mean, var)
}
