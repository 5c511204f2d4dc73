use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{composite_variance_at, inner_variance, mean_inner, CompositionProblem};

/// Half-width of the box `‖x‖∞ ≤ R` over which region-dependent
/// constants (`B_F`, `H1`, `H2`) are taken.
pub const DEFAULT_REGION: f64 = 10.0;

/// A problem constant and whether it is a proven bound or a sampled estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant {
    pub value: f64,
    pub exact: bool,
}

impl Constant {
    pub fn exact(value: f64) -> Self {
        Self { value, exact: true }
    }

    pub fn estimated(value: f64) -> Self {
        Self { value, exact: false }
    }
}

/// Constants consumed by the rate formulas and the step-size rules.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConstants {
    /// Strong-convexity modulus; `0` for non-convex problems.
    pub mu: Constant,
    /// `B_G`: bound on `‖∂Gⱼ‖`.
    pub jacobian_bound: Constant,
    /// `L_G`: Lipschitz constant of `∂Gⱼ`.
    pub inner_smoothness: Constant,
    /// `B_F`: bound on `‖∇Fᵢ‖` over the region.
    pub outer_gradient_bound: Constant,
    /// `L_F`: Lipschitz constant of `∇Fᵢ`.
    pub outer_smoothness: Constant,
    /// `L_f`: Lipschitz constant of `(∂Gⱼ)ᵀ∇Fᵢ(G(·))`.
    pub composite_smoothness: Constant,
    /// `H1`: bound on the inner-value variance.
    pub inner_variance: Constant,
    /// `H2`: bound on the composite-gradient variance.
    pub composite_variance: Constant,
    /// Box half-width used for the region-dependent constants.
    pub region: f64,
}

impl ProblemConstants {
    pub fn zero(region: f64) -> Self {
        let zero = Constant::exact(0.0);
        Self {
            mu: zero,
            jacobian_bound: zero,
            inner_smoothness: zero,
            outer_gradient_bound: zero,
            outer_smoothness: zero,
            composite_smoothness: zero,
            inner_variance: zero,
            composite_variance: zero,
            region,
        }
    }

    pub fn entries(&self) -> [(&'static str, Constant); 8] {
        [
            ("mu", self.mu),
            ("B_G", self.jacobian_bound),
            ("L_G", self.inner_smoothness),
            ("B_F", self.outer_gradient_bound),
            ("L_F", self.outer_smoothness),
            ("L_f", self.composite_smoothness),
            ("H1", self.inner_variance),
            ("H2", self.composite_variance),
        ]
    }

    /// Mutable access by the names used in [`ProblemConstants::entries`].
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Constant> {
        Some(match name {
            "mu" => &mut self.mu,
            "B_G" => &mut self.jacobian_bound,
            "L_G" => &mut self.inner_smoothness,
            "B_F" => &mut self.outer_gradient_bound,
            "L_F" => &mut self.outer_smoothness,
            "L_f" => &mut self.composite_smoothness,
            "H1" => &mut self.inner_variance,
            "H2" => &mut self.composite_variance,
            _ => return None,
        })
    }

    /// Names of constants that are sampled estimates rather than bounds.
    pub fn estimated_names(&self) -> Vec<&'static str> {
        self.entries().iter().filter(|(_, c)| !c.exact).map(|(name, _)| *name).collect()
    }

    pub fn any_estimated(&self) -> bool {
        self.entries().iter().any(|(_, c)| !c.exact)
    }
}

/// Maximum of `f` over the `2^dim` vertices of `[-region, region]^dim`.
pub fn box_vertex_max(dim: usize, region: f64, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
    assert!(dim < 31, "vertex enumeration limited to dim < 31");
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << dim) {
        let v = DVector::from_fn(dim, |r, _| if mask & (1 << r) != 0 { region } else { -region });
        best = best.max(f(&v));
    }
    best
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Sampled estimates of every constant over `samples` points drawn uniformly
/// from the box. Lipschitz constants come from difference quotients between
/// consecutive samples. All entries are flagged as estimated; `mu` is `0`.
pub fn estimate_constants<P: CompositionProblem + ?Sized>(
    problem: &P,
    region: f64,
    samples: usize,
    seed: u64,
) -> ProblemConstants {
    let n = problem.n();
    let dx = problem.dim_x();
    let all: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<DVector<f64>> = (0..samples.max(2))
        .map(|_| DVector::from_fn(dx, |_, _| rng.random_range(-region..=region)))
        .collect();

    let mut b_g: f64 = 0.0;
    let mut b_f: f64 = 0.0;
    let mut l_g: f64 = 0.0;
    let mut l_big_f: f64 = 0.0;
    let mut l_f: f64 = 0.0;
    let mut h1: f64 = 0.0;
    let mut h2: f64 = 0.0;

    type Probe = (DVector<f64>, Vec<DMatrix<f64>>, DVector<f64>, Vec<DVector<f64>>);
    let mut prev: Option<Probe> = None;
    for x in &points {
        let jacs: Vec<DMatrix<f64>> = all.iter().map(|&j| problem.inner_jacobian(j, x)).collect();
        let g = mean_inner(problem, &all, x);
        let grads: Vec<DVector<f64>> = all.iter().map(|&i| problem.outer_gradient(i, &g)).collect();
        for jac in &jacs {
            b_g = b_g.max(spectral_norm(jac));
        }
        for grad in &grads {
            b_f = b_f.max(grad.norm());
        }
        h1 = h1.max(inner_variance(problem, x));
        h2 = h2.max(composite_variance_at(problem, x));

        if let Some((px, pjacs, pg, pgrads)) = &prev {
            let dxn = (x - px).norm();
            let dwn = (&g - pg).norm();
            if dxn > 0.0 {
                for j in 0..n {
                    l_g = l_g.max(spectral_norm(&(&jacs[j] - &pjacs[j])) / dxn);
                    for i in 0..n {
                        let diff = jacs[j].tr_mul(&grads[i]) - pjacs[j].tr_mul(&pgrads[i]);
                        l_f = l_f.max(diff.norm() / dxn);
                    }
                }
            }
            if dwn > 0.0 {
                for i in 0..n {
                    l_big_f = l_big_f.max((&grads[i] - &pgrads[i]).norm() / dwn);
                }
            }
        }
        prev = Some((x.clone(), jacs, g, grads));
    }

    ProblemConstants {
        mu: Constant::estimated(0.0),
        jacobian_bound: Constant::estimated(b_g),
        inner_smoothness: Constant::estimated(l_g),
        outer_gradient_bound: Constant::estimated(b_f),
        outer_smoothness: Constant::estimated(l_big_f),
        composite_smoothness: Constant::estimated(l_f),
        inner_variance: Constant::estimated(h1),
        composite_variance: Constant::estimated(h2),
        region,
    }
}
