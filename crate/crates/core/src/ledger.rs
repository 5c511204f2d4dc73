//! Query-complexity accounting.
//!
//! Two conventions are tracked side by side. `paper_queries` follows the
//! per-line annotations of the solver listing: `D` per anchor, `A` per inner
//! estimate and `4` per sampled `(i, j)` pair. `corollary_queries` follows the
//! epoch cost `D + K·A` used in the convex complexity statement. The `raw_*`
//! counters record actual oracle calls, which differ from the annotations
//! (an inner estimate evaluates `G_A` at two points, so it costs `2A` raw
//! inner values).

use std::ops::AddAssign;

/// Per-run query counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryLedger {
    pub paper_queries: u64,
    pub corollary_queries: u64,
    pub raw_inner_values: u64,
    pub raw_inner_jacobians: u64,
    pub raw_outer_values: u64,
    pub raw_outer_gradients: u64,
    /// Oracle calls spent on trace-only evaluations (exact `f`, `∇f`).
    /// Never folded into the headline counts.
    pub evaluation_queries: u64,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total raw oracle calls made by the solver (evaluation calls excluded).
    pub fn raw_total(&self) -> u64 {
        self.raw_inner_values + self.raw_inner_jacobians + self.raw_outer_values + self.raw_outer_gradients
    }

    /// Anchor at the snapshot: `G_{D1}`, `∂G_{D1}` and `∇F_{D2}`.
    pub fn charge_anchor(&mut self, d: usize) {
        let d = d as u64;
        self.paper_queries += d;
        self.corollary_queries += d;
        self.raw_inner_values += d;
        self.raw_inner_jacobians += d;
        self.raw_outer_gradients += d;
    }

    /// Variance-reduced inner estimate with a batch of size `a`.
    pub fn charge_inner_estimate(&mut self, a: usize) {
        let a = a as u64;
        self.paper_queries += a;
        self.corollary_queries += a;
        self.raw_inner_values += 2 * a;
    }

    /// One composite-gradient estimate for a single `(i, j)` pair.
    pub fn charge_pair(&mut self) {
        self.paper_queries += 4;
        self.raw_inner_jacobians += 2;
        self.raw_outer_gradients += 2;
    }

    pub fn charge_evaluation(&mut self, calls: u64) {
        self.evaluation_queries += calls;
    }
}

impl AddAssign<&QueryLedger> for QueryLedger {
    fn add_assign(&mut self, rhs: &QueryLedger) {
        self.paper_queries += rhs.paper_queries;
        self.corollary_queries += rhs.corollary_queries;
        self.raw_inner_values += rhs.raw_inner_values;
        self.raw_inner_jacobians += rhs.raw_inner_jacobians;
        self.raw_outer_values += rhs.raw_outer_values;
        self.raw_outer_gradients += rhs.raw_outer_gradients;
        self.evaluation_queries += rhs.evaluation_queries;
    }
}

/// Paper-convention cost of one epoch: `D + K·(A + 4b)`.
pub fn epoch_cost(d: usize, k: usize, a: usize, b: usize) -> u64 {
    d as u64 + k as u64 * (a as u64 + 4 * b as u64)
}

/// Corollary-convention cost of one epoch: `D + K·A`.
pub fn corollary_epoch_cost(d: usize, k: usize, a: usize) -> u64 {
    d as u64 + k as u64 * a as u64
}
