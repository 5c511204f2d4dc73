//! Epoch/inner loops for the single-pair method, its mini-batch variant, and
//! the exact-anchor baseline.

use nalgebra::DVector;
use thiserror::Error;

use crate::estimator::{minibatch_gradient, EpochAnchor, EstimatorError, InnerEstimate};
use crate::ledger::QueryLedger;
use crate::problem::{check_point, evaluation_cost, value_and_gradient, CompositionProblem, ProblemError};
use crate::sampling::{draw_pair, sample_with_policy, IndexBatch, SamplingPolicy, StreamRole, StreamSplitter};
use crate::schedule::{Schedule, ScheduleError};

const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("iterate diverged at epoch {s}, inner step {k}")]
    Divergence { s: usize, k: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// How the `b` pairs of an inner step are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairSampling {
    /// Independent uniform `(i, j)` from the pair stream.
    #[default]
    Random,
    /// Pair `t` is `(⌊t/n⌋ mod n, t mod n)`; with `b = n²` every pair appears once.
    Enumerate,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Starting point; zeros when absent.
    pub x0: Option<DVector<f64>>,
    /// Record `f` and `‖∇f‖²` after every inner step.
    pub record_iterations: bool,
    pub pair_sampling: PairSampling,
    pub sampling: SamplingPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Snapshot index; `0` is the starting point.
    pub s: usize,
    pub f_value: f64,
    pub grad_norm_sq: f64,
    pub dist_sq_opt: Option<f64>,
    pub paper_queries: u64,
    pub corollary_queries: u64,
    pub raw_queries: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub s: usize,
    pub k: usize,
    pub f_value: f64,
    pub grad_norm_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub initial: EpochRecord,
    /// One record per epoch, `s = 1..=S`.
    pub epochs: Vec<EpochRecord>,
    pub iterations: Vec<IterationRecord>,
}

impl RunTrace {
    /// Starting record followed by the epoch records.
    pub fn all_records(&self) -> impl Iterator<Item = &EpochRecord> {
        std::iter::once(&self.initial).chain(self.epochs.iter())
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Uniformly selected iterate over all `(s, k)`.
    pub x_hat: DVector<f64>,
    /// `(s, k)` of the selected iterate.
    pub selected: (usize, usize),
    /// Last snapshot `x̃_S`.
    pub x_final: DVector<f64>,
    pub trace: RunTrace,
    pub ledger: QueryLedger,
}

#[derive(Clone, Copy)]
enum Variant {
    Single,
    MiniBatch,
    FullAnchor,
}

/// Single-pair method (`b` is taken as 1 regardless of the schedule).
pub fn run_scscg<P: CompositionProblem + ?Sized>(
    problem: &P,
    schedule: &Schedule,
    options: &RunOptions,
    seed: u64,
) -> Result<RunResult, SolverError> {
    run(problem, schedule, options, seed, Variant::Single)
}

/// Mini-batch method with `schedule.b` pairs per inner step.
pub fn run_scscg_minibatch<P: CompositionProblem + ?Sized>(
    problem: &P,
    schedule: &Schedule,
    options: &RunOptions,
    seed: u64,
) -> Result<RunResult, SolverError> {
    run(problem, schedule, options, seed, Variant::MiniBatch)
}

/// Exact-anchor baseline: both anchor batches are covers of `[n]` and
/// `schedule.d` is ignored. Uses `schedule.b` pairs per inner step.
pub fn run_full_anchor<P: CompositionProblem + ?Sized>(
    problem: &P,
    schedule: &Schedule,
    options: &RunOptions,
    seed: u64,
) -> Result<RunResult, SolverError> {
    run(problem, schedule, options, seed, Variant::FullAnchor)
}

fn record<P: CompositionProblem + ?Sized>(
    problem: &P,
    s: usize,
    x: &DVector<f64>,
    ledger: &mut QueryLedger,
) -> Result<EpochRecord, SolverError> {
    let (f_value, grad) = value_and_gradient(problem, x)?;
    ledger.charge_evaluation(evaluation_cost(problem));
    Ok(EpochRecord {
        s,
        f_value,
        grad_norm_sq: grad.norm_squared(),
        dist_sq_opt: problem.optimum().map(|opt| (x - &opt.x).norm_squared()),
        paper_queries: ledger.paper_queries,
        corollary_queries: ledger.corollary_queries,
        raw_queries: ledger.raw_total(),
    })
}

fn pair_for(sampling: PairSampling, splitter: &StreamSplitter, n: usize, s: usize, k: usize, t: usize) -> (usize, usize) {
    match sampling {
        PairSampling::Random => draw_pair(splitter, n, s, k, t),
        PairSampling::Enumerate => ((t / n) % n, t % n),
    }
}

fn run<P: CompositionProblem + ?Sized>(
    problem: &P,
    schedule: &Schedule,
    options: &RunOptions,
    seed: u64,
    variant: Variant,
) -> Result<RunResult, SolverError> {
    schedule.validate()?;
    if schedule.total_steps() == 0 {
        return Err(SolverError::Argument("K * S must be positive".into()));
    }
    let n = problem.n();
    let b = match variant {
        Variant::Single => 1,
        Variant::MiniBatch | Variant::FullAnchor => schedule.b,
    };
    let mut x_tilde = match &options.x0 {
        Some(x0) => x0.clone(),
        None => DVector::zeros(problem.dim_x()),
    };
    check_point(problem, &x_tilde)?;

    let splitter = StreamSplitter::new(seed);
    let mut selector = splitter.stream(StreamRole::OutputSelection, 0, 0, 0);
    let mut ledger = QueryLedger::new();
    let initial = record(problem, 0, &x_tilde, &mut ledger)?;
    let mut epochs = Vec::with_capacity(schedule.s);
    let mut iterations = Vec::new();
    let mut x_hat = x_tilde.clone();
    let mut selected = (0, 0);
    let mut offered: usize = 0;
    let mut pairs = Vec::with_capacity(b);

    for s in 0..schedule.s {
        let anchor = match variant {
            Variant::FullAnchor => {
                EpochAnchor::from_batches(problem, &x_tilde, IndexBatch::cover(n), IndexBatch::cover(n), s, &mut ledger)?
            }
            _ => EpochAnchor::sample(problem, &x_tilde, schedule.d, options.sampling, &splitter, s, &mut ledger)?,
        };
        let mut x = x_tilde.clone();
        for k in 0..schedule.k {
            offered += 1;
            if selector.index(offered) == 0 {
                x_hat.copy_from(&x);
                selected = (s, k);
            }
            let mut a_stream = splitter.stream(StreamRole::InnerBatch, s as u64, k as u64, 0);
            let a_batch = sample_with_policy(n, schedule.a, options.sampling, &mut a_stream)
                .map_err(EstimatorError::from)?;
            let est = InnerEstimate::from_batch(problem, &x, &anchor, a_batch, &mut ledger)?;
            pairs.clear();
            pairs.extend((0..b).map(|t| pair_for(options.pair_sampling, &splitter, n, s, k, t)));
            let grad = minibatch_gradient(problem, &x, &est, &anchor, &pairs, &mut ledger)?;
            x = &x - grad * schedule.eta;
            if x.iter().any(|v| !v.is_finite()) || x.norm() > DIVERGENCE_NORM {
                return Err(SolverError::Divergence { s, k });
            }
            if options.record_iterations {
                let (f_value, g) = value_and_gradient(problem, &x)?;
                ledger.charge_evaluation(evaluation_cost(problem));
                iterations.push(IterationRecord { s, k, f_value, grad_norm_sq: g.norm_squared() });
            }
        }
        x_tilde = x;
        epochs.push(record(problem, s + 1, &x_tilde, &mut ledger)?);
    }

    Ok(RunResult {
        x_hat,
        selected,
        x_final: x_tilde,
        trace: RunTrace { initial, epochs, iterations },
        ledger,
    })
}
