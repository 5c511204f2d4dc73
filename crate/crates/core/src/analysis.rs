//! Theorem-side quantities: the convex contraction rates and the non-convex
//! Lyapunov sequence.
//!
//! Mini-batch schedules (`b > 1`) divide the `L_f²` contributions that come
//! from the per-pair variance by `b`; with `b = 1` every formula is the
//! single-sample one.

use crate::problem::ProblemConstants;
use crate::schedule::Schedule;

fn indicator(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

/// `B_G⁴L_F²(4𝕀(A<n)/A + 4𝕀(D<n)/D)`, the displacement coefficient shared by
/// both analyses (`V` convex, `W` non-convex).
pub fn displacement_coefficient(constants: &ProblemConstants, a: usize, d: usize, n: usize) -> f64 {
    let bg = constants.jacobian_bound.value;
    let lf_outer = constants.outer_smoothness.value;
    let (a, d) = (a as f64, d as f64);
    let ia = indicator(a < n as f64);
    let id = indicator(d < n as f64);
    bg.powi(4) * lf_outer.powi(2) * (4.0 * ia / a + 4.0 * id / d)
}

/// `20B_G²L_F²𝕀(D<n)H1/D + 5𝕀(D²<n²)H2/D²` (`V1` convex, `W1` non-convex).
pub fn anchor_coefficient(constants: &ProblemConstants, d: usize, n: usize) -> f64 {
    let bg = constants.jacobian_bound.value;
    let lf_outer = constants.outer_smoothness.value;
    let h1 = constants.inner_variance.value;
    let h2 = constants.composite_variance.value;
    let df = d as f64;
    let id = indicator(d < n);
    let id2 = indicator(d * d < n * n);
    20.0 * bg.powi(2) * lf_outer.powi(2) * id * h1 / df + 5.0 * id2 * h2 / (df * df)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexRates {
    pub v: f64,
    pub v1: f64,
    pub v2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    /// `(1/K + ρ₂)/ρ₁`.
    pub rho: f64,
}

impl ConvexRates {
    /// `ρ₁ > 0` and `ρ < 1`.
    pub fn is_contracting(&self) -> bool {
        self.rho1 > 0.0 && self.rho < 1.0
    }

    /// Right-hand side check of `ρ₁ g₊ ≤ (1/K + ρ₂) g + ρ₃`.
    pub fn recursion_holds(&self, k: usize, g_now: f64, g_next: f64, tolerance: f64) -> bool {
        self.rho1 * g_next <= (1.0 / k as f64 + self.rho2) * g_now + self.rho3 + tolerance
    }
}

/// Convex rates for `schedule` with indicator terms evaluated at `n`.
pub fn convex_rates(schedule: &Schedule, constants: &ProblemConstants, n: usize) -> ConvexRates {
    rates_from(
        constants.mu.value,
        constants.composite_smoothness.value,
        schedule.h,
        schedule.eta,
        schedule.k,
        schedule.b,
        displacement_coefficient(constants, schedule.a, schedule.d, n),
        anchor_coefficient(constants, schedule.d, n),
    )
}

/// Convex rates from explicit scalars; `v` and `v1` are the displacement and
/// anchor coefficients.
#[allow(clippy::too_many_arguments)]
pub fn rates_from(mu: f64, l_f: f64, h: f64, eta: f64, k: usize, b: usize, v: f64, v1: f64) -> ConvexRates {
    let lf2 = l_f * l_f;
    let pair = lf2 / b as f64;
    let v2 = 0.8 * v1;
    let rho1 = (2.0 * mu - h - 4.0 * v / h - (2.0 * lf2 + 10.0 * (pair + v)) * eta) * eta;
    let rho2 = 2.0 * (2.0 * v / h + 5.0 * (pair + v) * eta) * eta;
    let rho3 = eta * v2 / h + 2.0 * eta * eta * v1;
    let rho = (1.0 / k as f64 + rho2) / rho1;
    ConvexRates { v, v1, v2, rho1, rho2, rho3, rho }
}

/// Contraction of the exact-anchor baseline:
/// `1/(2(μ − 2L_f²η)ηK) + L_f²η/(μ − 2L_f²η)`.
pub fn full_anchor_rate(mu: f64, l_f: f64, eta: f64, k: usize) -> f64 {
    let lf2 = l_f * l_f;
    let gap = mu - 2.0 * lf2 * eta;
    1.0 / (2.0 * gap * eta * k as f64) + lf2 * eta / gap
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonconvexSequence {
    pub w: f64,
    pub w1: f64,
    pub w2: f64,
    /// Growth factor of the backward recursion.
    pub y: f64,
    /// Additive term of the backward recursion.
    pub u: f64,
    /// `c[k]` for `k = 0..=K`, with `c[K] = 0`.
    pub c: Vec<f64>,
    /// `U(Y^K − 1)/(Y − 1)`.
    pub c0_closed_form: f64,
    pub u0: f64,
    pub j0: f64,
}

impl NonconvexSequence {
    pub fn c0(&self) -> f64 {
        self.c[0]
    }

    pub fn is_valid(&self) -> bool {
        self.u0 > 0.0
    }
}

pub fn nonconvex_sequence(schedule: &Schedule, constants: &ProblemConstants, n: usize) -> NonconvexSequence {
    sequence_from(
        constants.composite_smoothness.value,
        schedule.h,
        schedule.eta,
        schedule.k,
        schedule.b,
        displacement_coefficient(constants, schedule.a, schedule.d, n),
        anchor_coefficient(constants, schedule.d, n),
    )
}

/// Lyapunov sequence from explicit scalars; `w` and `w1` are the
/// displacement and anchor coefficients.
pub fn sequence_from(l_f: f64, h: f64, eta: f64, k: usize, b: usize, w: f64, w1: f64) -> NonconvexSequence {
    let pair = l_f * l_f / b as f64;
    let y = 1.0 + (2.0 / h + 4.0 * h * w) * eta + 10.0 * (pair + w) * eta * eta;
    let u = 2.0 * w * eta + 5.0 * (pair + w) * l_f * eta * eta;
    let mut c = vec![0.0; k + 1];
    for idx in (0..k).rev() {
        c[idx] = c[idx + 1] * y + u;
    }
    let c0_closed_form = if k == 0 {
        0.0
    } else if y == 1.0 {
        u * k as f64
    } else {
        u * (y.powi(k as i32) - 1.0) / (y - 1.0)
    };
    let c1 = if k >= 1 { c[1] } else { 0.0 };
    let u0 = (0.5 - h * c1) * eta - (l_f + 2.0 * c1) * eta * eta;
    let j0 = (0.5 + h * c1) * 0.8 * w1 * eta + (l_f + 2.0 * c1) * w1 * eta * eta;
    NonconvexSequence { w, w1, w2: 0.8 * w1, y, u, c, c0_closed_form, u0, j0 }
}

/// `f0_gap/(u₀KS) + J₀/u₀`.
pub fn theorem_bound_nonconvex(sequence: &NonconvexSequence, f0_gap: f64, k: usize, s: usize) -> f64 {
    f0_gap / (sequence.u0 * (k * s) as f64) + sequence.j0 / sequence.u0
}
