//! Step sizes, batch sizes and loop lengths derived from problem constants.

use std::fmt;

use thiserror::Error;

use crate::analysis::convex_rates;
use crate::problem::ProblemConstants;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Convex,
    Nonconvex,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Convex => "convex",
            Mode::Nonconvex => "nonconvex",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "convex" => Ok(Mode::Convex),
            "nonconvex" => Ok(Mode::Nonconvex),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Derived,
    Override,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Derived => "derived",
            Provenance::Override => "override",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleProvenance {
    pub a: Provenance,
    pub d: Provenance,
    pub k: Provenance,
    pub s: Provenance,
    pub b: Provenance,
    pub eta: Provenance,
    pub h: Provenance,
}

impl ScheduleProvenance {
    pub fn all(p: Provenance) -> Self {
        Self { a: p, d: p, k: p, s: p, b: p, eta: p, h: p }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub mode: Mode,
    pub a: usize,
    pub d: usize,
    pub k: usize,
    pub s: usize,
    pub b: usize,
    pub eta: f64,
    pub h: f64,
    pub epsilon: f64,
    /// Total inner iterations targeted by the non-convex rule.
    pub t: Option<usize>,
    pub provenance: ScheduleProvenance,
    /// Which branch of each `min{·}` rule was active.
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("convex schedule needs mu > 0 (got {0}); use the nonconvex mode")]
    Mode(f64),
    #[error("invalid schedule input: {0}")]
    Input(String),
    #[error("schedule does not contract: rho1 = {rho1}, rho = {rho}")]
    NonContracting { rho1: f64, rho: f64 },
}

/// User-supplied values that replace derived ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScheduleOverrides {
    pub a: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub s: Option<usize>,
    pub eta: Option<f64>,
    pub h: Option<f64>,
}

impl ScheduleOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

fn ceil_count(x: f64) -> usize {
    if !x.is_finite() || x >= usize::MAX as f64 {
        usize::MAX
    } else {
        x.ceil().max(1.0) as usize
    }
}

fn capped(n: usize, raw: f64, name: &str, notes: &mut Vec<String>) -> usize {
    let value = ceil_count(raw);
    if value >= n {
        notes.push(format!("{name}: n branch binds ({n} <= {raw})"));
        n
    } else {
        notes.push(format!("{name}: formula branch binds ({value} < n = {n})"));
        value
    }
}

fn estimated_warning(constants: &ProblemConstants) -> Vec<String> {
    let names = constants.estimated_names();
    if names.is_empty() {
        Vec::new()
    } else {
        vec![format!("schedule uses estimated constants: {}", names.join(", "))]
    }
}

fn outer_count(x0_gap: f64, epsilon: f64, rho: f64) -> usize {
    let ratio = 2.0 * x0_gap / epsilon;
    if ratio <= 1.0 {
        1
    } else {
        ceil_count(ratio.ln() / (1.0 / rho).ln())
    }
}

impl Schedule {
    /// Strongly convex rule: `h = μ`, `η = bμ/(135L_f²)`, `K = ⌈540L_f²/(bμ²)⌉`,
    /// and `A`, `D` capped at `n`. `S` is the smallest count that drives the
    /// contraction term below `ε/2`.
    pub fn convex(
        constants: &ProblemConstants,
        n: usize,
        epsilon: f64,
        b: usize,
        x0_gap: f64,
    ) -> Result<Schedule, ScheduleError> {
        let mu = constants.mu.value;
        if !(mu > 0.0) {
            return Err(ScheduleError::Mode(mu));
        }
        let l_f = constants.composite_smoothness.value;
        if !(l_f > 0.0 && l_f.is_finite()) {
            return Err(ScheduleError::Input(format!("L_f must be positive, got {l_f}")));
        }
        if !(epsilon > 0.0) || !(x0_gap > 0.0) || b == 0 || n == 0 {
            return Err(ScheduleError::Input("need epsilon > 0, x0_gap > 0, b >= 1 and n >= 1".into()));
        }
        let bg4lf2 = constants.jacobian_bound.value.powi(4) * constants.outer_smoothness.value.powi(2);
        let h1 = constants.inner_variance.value;
        let h2 = constants.composite_variance.value;
        let mut notes = Vec::new();

        let eta = b as f64 * mu / (135.0 * l_f * l_f);
        let a = capped(n, 128.0 * bg4lf2 / (mu * mu), "A", &mut notes);
        let mut d = capped(n, 5.0 * (16.0 * bg4lf2 * h1 + 4.0 * h2) / (4.0 * epsilon * mu * mu), "D", &mut notes);
        if d < a {
            notes.push(format!("D raised from {d} to A = {a}"));
            d = a;
        }
        let k = ceil_count(540.0 * l_f * l_f / (b as f64 * mu * mu));

        let mut schedule = Schedule {
            mode: Mode::Convex,
            a,
            d,
            k,
            s: 1,
            b,
            eta,
            h: mu,
            epsilon,
            t: None,
            provenance: ScheduleProvenance::all(Provenance::Derived),
            notes,
            warnings: estimated_warning(constants),
        };
        let rates = convex_rates(&schedule, constants, n);
        if !rates.is_contracting() {
            return Err(ScheduleError::NonContracting { rho1: rates.rho1, rho: rates.rho });
        }
        schedule.s = outer_count(x0_gap, epsilon, rates.rho);
        schedule.t = Some(schedule.s.saturating_mul(schedule.k));
        Ok(schedule)
    }

    /// Non-convex rule: `η = b^{3/5}·min{n^{−2/5}, ε^{2/5}}`, `h = √(b/η)`,
    /// `A = min{n, ⌈c_A b/η⌉}`, `D = min{n, ⌈c_D/ε⌉}`, `K = ⌈√b/η^{3/2}⌉`,
    /// `T = ⌈c_T/(εη)⌉` and `S = ⌈T/K⌉`.
    #[allow(clippy::too_many_arguments)]
    pub fn nonconvex(
        constants: &ProblemConstants,
        n: usize,
        epsilon: f64,
        b: usize,
        c_a: f64,
        c_d: f64,
        c_t: f64,
    ) -> Result<Schedule, ScheduleError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ScheduleError::Input(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if n == 0 || b == 0 {
            return Err(ScheduleError::Input("need n >= 1 and b >= 1".into()));
        }
        if !(c_a > 0.0 && c_d > 0.0 && c_t > 0.0) {
            return Err(ScheduleError::Input("c_a, c_d and c_t must be positive".into()));
        }
        let bf = b as f64;
        let mut notes = Vec::new();
        let n_branch = (n as f64).powf(-0.4);
        let e_branch = epsilon.powf(0.4);
        let base = if n_branch <= e_branch {
            notes.push("eta: n^(-2/5) branch binds".to_string());
            n_branch
        } else {
            notes.push("eta: epsilon^(2/5) branch binds".to_string());
            e_branch
        };
        let eta = bf.powf(0.6) * base;
        let h = (bf / eta).sqrt();
        let a = capped(n, c_a * bf / eta, "A", &mut notes);
        let mut d = capped(n, c_d / epsilon, "D", &mut notes);
        if d < a {
            notes.push(format!("D raised from {d} to A = {a}"));
            d = a;
        }
        let k = ceil_count(bf.sqrt() / eta.powf(1.5));
        let t = ceil_count(c_t / (epsilon * eta));
        let s = t.div_ceil(k).max(1);
        Ok(Schedule {
            mode: Mode::Nonconvex,
            a,
            d,
            k,
            s,
            b,
            eta,
            h,
            epsilon,
            t: Some(t),
            provenance: ScheduleProvenance::all(Provenance::Derived),
            notes,
            warnings: estimated_warning(constants),
        })
    }

    /// A schedule with every field given explicitly.
    #[allow(clippy::too_many_arguments)]
    pub fn manual(mode: Mode, a: usize, d: usize, k: usize, s: usize, b: usize, eta: f64, h: f64) -> Schedule {
        Schedule {
            mode,
            a,
            d,
            k,
            s,
            b,
            eta,
            h,
            epsilon: 0.0,
            t: Some(k.saturating_mul(s)),
            provenance: ScheduleProvenance::all(Provenance::Override),
            notes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Replaces fields named in `overrides` and marks them as such.
    pub fn apply_overrides(&mut self, overrides: &ScheduleOverrides) {
        if let Some(a) = overrides.a {
            self.a = a;
            self.provenance.a = Provenance::Override;
        }
        if let Some(d) = overrides.d {
            self.d = d;
            self.provenance.d = Provenance::Override;
        }
        if let Some(k) = overrides.k {
            self.k = k;
            self.provenance.k = Provenance::Override;
        }
        if let Some(s) = overrides.s {
            self.s = s;
            self.provenance.s = Provenance::Override;
        }
        if let Some(eta) = overrides.eta {
            self.eta = eta;
            self.provenance.eta = Provenance::Override;
        }
        if let Some(h) = overrides.h {
            self.h = h;
            self.provenance.h = Provenance::Override;
        }
        if !overrides.is_empty() {
            self.t = Some(self.k.saturating_mul(self.s));
        }
    }

    /// Checks positivity and finiteness of every field.
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |what: &str| Err(ScheduleError::Input(what.to_string()));
        if self.a == 0 || self.d == 0 || self.b == 0 {
            return bad("A, D and b must be >= 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and >= 0");
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad("h must be finite and > 0");
        }
        Ok(())
    }

    /// Outer iterations times inner iterations.
    pub fn total_steps(&self) -> usize {
        self.k.saturating_mul(self.s)
    }
}

/// [`Schedule::convex`].
pub fn convex_schedule(
    constants: &ProblemConstants,
    n: usize,
    epsilon: f64,
    b: usize,
    x0_gap: f64,
) -> Result<Schedule, ScheduleError> {
    Schedule::convex(constants, n, epsilon, b, x0_gap)
}

/// [`Schedule::nonconvex`] with `c_T = 1`.
pub fn nonconvex_schedule(
    constants: &ProblemConstants,
    n: usize,
    epsilon: f64,
    b: usize,
    c_a: f64,
    c_d: f64,
) -> Result<Schedule, ScheduleError> {
    Schedule::nonconvex(constants, n, epsilon, b, c_a, c_d, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::nonconvex_sequence;
    use crate::problem::Constant;
    use proptest::prelude::*;

    fn constants(mu: f64, l_f: f64, bg: f64, lf_outer: f64, h1: f64, h2: f64) -> ProblemConstants {
        let mut c = ProblemConstants::zero(10.0);
        c.mu = Constant::exact(mu);
        c.composite_smoothness = Constant::exact(l_f);
        c.jacobian_bound = Constant::exact(bg);
        c.outer_smoothness = Constant::exact(lf_outer);
        c.inner_variance = Constant::exact(h1);
        c.composite_variance = Constant::exact(h2);
        c
    }

    #[test]
    fn convex_step_and_inner_count() {
        let s = Schedule::convex(&constants(1.0, 2.0, 1.0, 1.0, 0.0, 0.0), 10, 1e-4, 1, 1.0).unwrap();
        assert!((s.eta - 1.0 / 540.0).abs() < 1e-18);
        assert_eq!(s.k, 2160);
        assert_eq!(s.h, 1.0);
    }

    #[test]
    fn convex_inner_batch_caps_at_n() {
        let s = Schedule::convex(&constants(1.0, 1.0, 1.0, 1.0, 0.0, 0.0), 10, 1e-4, 1, 1.0).unwrap();
        assert_eq!(s.a, 10);
        assert!(s.d >= s.a);
    }

    #[test]
    fn convex_requires_mu() {
        let err = Schedule::convex(&constants(0.0, 1.0, 1.0, 1.0, 0.0, 0.0), 10, 1e-4, 1, 1.0).unwrap_err();
        assert_eq!(err, ScheduleError::Mode(0.0));
    }

    #[test]
    fn convex_warns_on_estimated_constants() {
        let mut c = constants(1.0, 1.0, 1.0, 1.0, 0.0, 0.0);
        c.inner_variance = Constant::estimated(0.0);
        let s = Schedule::convex(&c, 10, 1e-4, 1, 1.0).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn nonconvex_worked_example() {
        let s = Schedule::nonconvex(&constants(0.0, 1.0, 1.0, 1.0, 1.0, 1.0), 32, 0.01, 1, 1.0, 1.0, 1.0).unwrap();
        assert!((s.eta - 0.15848931924611134).abs() < 1e-12);
        assert!((s.h - 1.0 / s.eta.sqrt()).abs() < 1e-12);
        assert_eq!((s.a, s.d, s.k), (7, 32, 16));
        assert_eq!(s.t, Some(631));
        assert_eq!(s.s, 40);
        assert!(s.notes.iter().any(|n| n.contains("epsilon^(2/5)")));
    }

    #[test]
    fn nonconvex_single_component() {
        let s = Schedule::nonconvex(&constants(0.0, 1.0, 1.0, 1.0, 1.0, 1.0), 1, 0.01, 1, 1.0, 1.0, 1.0).unwrap();
        assert_eq!((s.a, s.d), (1, 1));
    }

    #[test]
    fn nonconvex_full_anchor_has_no_anchor_term() {
        let c = constants(0.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let s = Schedule::nonconvex(&c, 32, 0.01, 1, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(nonconvex_sequence(&s, &c, 32).j0, 0.0);
    }

    #[test]
    fn overrides_are_recorded() {
        let mut s = Schedule::convex(&constants(1.0, 1.0, 1.0, 1.0, 0.0, 0.0), 10, 1e-4, 1, 1.0).unwrap();
        s.apply_overrides(&ScheduleOverrides { k: Some(7), eta: Some(0.5), ..Default::default() });
        assert_eq!(s.k, 7);
        assert_eq!(s.provenance.k, Provenance::Override);
        assert_eq!(s.provenance.a, Provenance::Derived);
        assert_eq!(s.t, Some(7 * s.s));
    }

    proptest! {
        #[test]
        fn convex_schedules_contract(mu in 0.05f64..2.0, ratio in 1.0f64..5.0, eps in 1e-6f64..1e-1, n in 1usize..200, b in 1usize..5) {
            let c = constants(mu, mu * ratio, 1.0, 1.0, 0.0, 0.0);
            let s = Schedule::convex(&c, n, eps, b, 1.0).unwrap();
            let r = convex_rates(&s, &c, n);
            prop_assert!(r.rho1 > 0.0 && r.rho < 1.0);
        }

        #[test]
        fn d_nonincreasing_in_epsilon(eps in 1e-4f64..0.5, factor in 1.0f64..10.0, n in 1usize..5000) {
            let c = constants(0.0, 1.0, 1.0, 1.0, 1.0, 1.0);
            let fine = Schedule::nonconvex(&c, n, eps / factor, 1, 1.0, 1.0, 1.0).unwrap();
            let coarse = Schedule::nonconvex(&c, n, eps, 1, 1.0, 1.0, 1.0).unwrap();
            prop_assert!(coarse.d <= fine.d);
        }

        #[test]
        fn eta_nondecreasing_in_b(eps in 1e-4f64..0.5, n in 1usize..5000, b in 1usize..16) {
            let c = constants(0.0, 1.0, 1.0, 1.0, 1.0, 1.0);
            let small = Schedule::nonconvex(&c, n, eps, b, 1.0, 1.0, 1.0).unwrap();
            let large = Schedule::nonconvex(&c, n, eps, b + 1, 1.0, 1.0, 1.0).unwrap();
            prop_assert!(large.eta >= small.eta);
        }

        #[test]
        fn a_and_k_nonincreasing_in_eta(eps in 1e-4f64..0.5, n in 1usize..5000) {
            let c = constants(0.0, 1.0, 1.0, 1.0, 1.0, 1.0);
            let s1 = Schedule::nonconvex(&c, n, eps, 1, 1.0, 1.0, 1.0).unwrap();
            let s2 = Schedule::nonconvex(&c, n, eps * 2.0f64.min(0.99 / eps), 1, 1.0, 1.0, 1.0).unwrap();
            if s2.eta >= s1.eta {
                prop_assert!(s2.a <= s1.a);
                prop_assert!(s2.k <= s1.k);
            }
        }
    }
}
