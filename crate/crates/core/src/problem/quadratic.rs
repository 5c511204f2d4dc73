use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::constants::spectral_norm;
use super::{
    box_vertex_max, composite_variance_at, inner_variance, CompositionProblem, Constant, Optimum, ProblemConstants,
    ProblemError, DEFAULT_REGION,
};

const VERTEX_LIMIT: usize = 12;
const VARIANCE_SAMPLES: usize = 1000;
const CONDITION_FLOOR: f64 = 1e-3;
const MAX_REGENERATIONS: u64 = 64;

/// `Gⱼ(x) = Aⱼx + bⱼ + β·E·sin(x)` and `Fᵢ(w) = (κ/2)‖w − cᵢ‖²`.
///
/// `E` embeds the first `min(N, M)` coordinates. With `β = 0` this is the
/// linear-composed quadratic; with `β > 0` it is a smooth non-convex problem.
#[derive(Clone, Debug)]
pub struct QuadraticComposition {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
    weight: f64,
    beta: f64,
    constants: ProblemConstants,
    optimum: Option<Optimum>,
}

impl QuadraticComposition {
    /// Builds an instance from explicit parts with `β = 0`.
    pub fn from_parts(
        a: Vec<DMatrix<f64>>,
        b: Vec<DVector<f64>>,
        c: Vec<DVector<f64>>,
        weight: f64,
    ) -> Result<Self, ProblemError> {
        Self::assemble(a, b, c, weight, 0.0, DEFAULT_REGION, 0)
    }

    /// Random linear-composed quadratic; requires `dim_w ≥ dim_x` so that the
    /// instance is strongly convex. Ill-conditioned draws are regenerated with
    /// `seed + 1, seed + 2, …`.
    pub fn lcq(n: usize, dim_x: usize, dim_w: usize, seed: u64, region: f64) -> Result<Self, ProblemError> {
        if dim_w < dim_x {
            return Err(ProblemError::InvalidParameter(format!(
                "linear-composed quadratic needs dim_w >= dim_x (got {dim_w} < {dim_x})"
            )));
        }
        for attempt in 0..MAX_REGENERATIONS {
            let (a, b, c) = generate(n, dim_x, dim_w, seed.wrapping_add(attempt))?;
            let p = Self::assemble(a, b, c, 1.0, 0.0, region, seed)?;
            if p.constants.mu.value >= CONDITION_FLOOR {
                return Ok(p);
            }
        }
        Err(ProblemError::Degenerate("could not draw a well-conditioned instance".into()))
    }

    /// Random instance with curvature `beta`; `beta = 0` gives the same draw
    /// as [`QuadraticComposition::lcq`] without the conditioning retry.
    pub fn random(
        n: usize,
        dim_x: usize,
        dim_w: usize,
        beta: f64,
        seed: u64,
        region: f64,
    ) -> Result<Self, ProblemError> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!("beta must be finite and >= 0, got {beta}")));
        }
        let (a, b, c) = generate(n, dim_x, dim_w, seed)?;
        Self::assemble(a, b, c, 1.0, beta, region, seed)
    }

    fn assemble(
        a: Vec<DMatrix<f64>>,
        b: Vec<DVector<f64>>,
        c: Vec<DVector<f64>>,
        weight: f64,
        beta: f64,
        region: f64,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        let n = a.len();
        if n == 0 || b.len() != n || c.len() != n {
            return Err(ProblemError::InvalidParameter("need n >= 1 matching inner and outer parts".into()));
        }
        let (m, d) = a[0].shape();
        if m == 0 || d == 0 {
            return Err(ProblemError::InvalidParameter("dimensions must be positive".into()));
        }
        if a.iter().any(|aj| aj.shape() != (m, d)) || b.iter().chain(c.iter()).any(|v| v.len() != m) {
            return Err(ProblemError::InvalidParameter("inconsistent component dimensions".into()));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!("weight must be positive, got {weight}")));
        }
        let mut p = Self { a, b, c, weight, beta, constants: ProblemConstants::zero(region), optimum: None };
        p.constants = p.compute_constants(region, seed);
        if beta == 0.0 && p.constants.mu.value > 0.0 {
            p.optimum = p.solve_optimum();
        }
        Ok(p)
    }

    fn a_bar(&self) -> DMatrix<f64> {
        let (m, d) = self.a[0].shape();
        self.a.iter().fold(DMatrix::zeros(m, d), |acc, aj| acc + aj) / self.a.len() as f64
    }

    fn mean_of(vs: &[DVector<f64>]) -> DVector<f64> {
        vs.iter().fold(DVector::zeros(vs[0].len()), |acc, v| acc + v) / vs.len() as f64
    }

    fn solve_optimum(&self) -> Option<Optimum> {
        let a_bar = self.a_bar();
        let rhs = a_bar.tr_mul(&(Self::mean_of(&self.c) - Self::mean_of(&self.b)));
        let x = (a_bar.tr_mul(&a_bar)).cholesky()?.solve(&rhs);
        let value = super::objective(self, &x).ok()?;
        Some(Optimum { x, value })
    }

    fn compute_constants(&self, region: f64, seed: u64) -> ProblemConstants {
        let (m, d) = self.a[0].shape();
        let a_bar = self.a_bar();
        let b_bar = Self::mean_of(&self.b);
        let norm_a_bar = spectral_norm(&a_bar);
        let max_norm_a = self.a.iter().map(spectral_norm).fold(0.0, f64::max);
        let outer_smoothness = Constant::exact(self.weight);

        if self.beta == 0.0 {
            let ata = a_bar.tr_mul(&a_bar);
            let lambda_min = if m < d { 0.0 } else { ata.symmetric_eigen().eigenvalues.min().max(0.0) };
            let l_f = self.weight * self.a.iter().map(|aj| spectral_norm(&aj.tr_mul(&a_bar))).fold(0.0, f64::max);
            let (b_f, h1, h2) = if d <= VERTEX_LIMIT {
                let b_f = box_vertex_max(d, region, |x| {
                    let g = &a_bar * x + &b_bar;
                    self.c.iter().map(|ci| self.weight * (&g - ci).norm()).fold(0.0, f64::max)
                });
                (
                    Constant::exact(b_f),
                    Constant::exact(box_vertex_max(d, region, |x| inner_variance(self, x))),
                    Constant::exact(box_vertex_max(d, region, |x| composite_variance_at(self, x))),
                )
            } else {
                let (h1, h2) = self.sampled_variances(region, seed);
                (Constant::exact(self.outer_bound(&a_bar, &b_bar, norm_a_bar, region)), h1, h2)
            };
            ProblemConstants {
                mu: Constant::exact(self.weight * lambda_min),
                jacobian_bound: Constant::exact(max_norm_a),
                inner_smoothness: Constant::exact(0.0),
                outer_gradient_bound: b_f,
                outer_smoothness,
                composite_smoothness: Constant::exact(l_f),
                inner_variance: h1,
                composite_variance: h2,
                region,
            }
        } else {
            let b_g = max_norm_a + self.beta;
            let b_g_bar = norm_a_bar + self.beta;
            let residual_sup = self
                .c
                .iter()
                .map(|ci| {
                    (0..m)
                        .map(|r| {
                            let row: f64 = (0..d).map(|col| a_bar[(r, col)].abs()).sum();
                            row * region + (b_bar[r] - ci[r]).abs()
                        })
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
                + self.beta;
            let l_f = self.weight * (b_g * b_g_bar + self.beta * residual_sup);
            let (h1, h2) = self.sampled_variances(region, seed);
            ProblemConstants {
                mu: Constant::exact(0.0),
                jacobian_bound: Constant::exact(b_g),
                inner_smoothness: Constant::exact(self.beta),
                outer_gradient_bound: Constant::exact(self.outer_bound(&a_bar, &b_bar, norm_a_bar, region)),
                outer_smoothness,
                composite_smoothness: Constant::exact(l_f),
                inner_variance: h1,
                composite_variance: h2,
                region,
            }
        }
    }

    fn outer_bound(&self, a_bar: &DMatrix<f64>, b_bar: &DVector<f64>, norm_a_bar: f64, region: f64) -> f64 {
        let (m, d) = a_bar.shape();
        let lift = self.beta * (m.min(d) as f64).sqrt();
        self.c
            .iter()
            .map(|ci| self.weight * (norm_a_bar * region * (d as f64).sqrt() + (b_bar - ci).norm() + lift))
            .fold(0.0, f64::max)
    }

    fn sampled_variances(&self, region: f64, seed: u64) -> (Constant, Constant) {
        use rand::Rng;
        let d = self.dim_x();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00_D15E_A5E5);
        let mut h1: f64 = 0.0;
        let mut h2: f64 = 0.0;
        for _ in 0..VARIANCE_SAMPLES {
            let x = DVector::from_fn(d, |_, _| rng.random_range(-region..=region));
            h1 = h1.max(inner_variance(self, &x));
            h2 = h2.max(composite_variance_at(self, &x));
        }
        (Constant::estimated(h1), Constant::estimated(h2))
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn inner_matrix(&self, j: usize) -> &DMatrix<f64> {
        &self.a[j]
    }
}

type Parts = (Vec<DMatrix<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>);

fn generate(n: usize, dim_x: usize, dim_w: usize, seed: u64) -> Result<Parts, ProblemError> {
    if n == 0 || dim_x == 0 || dim_w == 0 {
        return Err(ProblemError::InvalidParameter("n, dim_x and dim_w must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let scale = 0.3 / (dim_x as f64).sqrt();
    let b_center = DVector::from_fn(dim_w, |_, _| normal());
    let c_center = DVector::from_fn(dim_w, |_, _| normal());
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        a.push(DMatrix::from_fn(dim_w, dim_x, |r, col| f64::from(u8::from(r == col)) + scale * normal()));
        b.push(&b_center + DVector::from_fn(dim_w, |_, _| 0.5 * normal()));
    }
    let c = (0..n).map(|_| &c_center + DVector::from_fn(dim_w, |_, _| 0.5 * normal())).collect();
    Ok((a, b, c))
}

impl CompositionProblem for QuadraticComposition {
    fn n(&self) -> usize {
        self.a.len()
    }

    fn dim_x(&self) -> usize {
        self.a[0].ncols()
    }

    fn dim_w(&self) -> usize {
        self.a[0].nrows()
    }

    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.a[j] * x + &self.b[j];
        if self.beta != 0.0 {
            for r in 0..self.dim_w().min(self.dim_x()) {
                g[r] += self.beta * x[r].sin();
            }
        }
        g
    }

    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = self.a[j].clone();
        if self.beta != 0.0 {
            for r in 0..self.dim_w().min(self.dim_x()) {
                jac[(r, r)] += self.beta * x[r].cos();
            }
        }
        jac
    }

    fn outer_value(&self, i: usize, w: &DVector<f64>) -> f64 {
        0.5 * self.weight * (w - &self.c[i]).norm_squared()
    }

    fn outer_gradient(&self, i: usize, w: &DVector<f64>) -> DVector<f64> {
        (w - &self.c[i]) * self.weight
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }
}

/// Random linear-composed quadratic over the default region.
pub fn make_lcq(n: usize, dim_x: usize, dim_w: usize, seed: u64) -> Result<QuadraticComposition, ProblemError> {
    QuadraticComposition::lcq(n, dim_x, dim_w, seed, DEFAULT_REGION)
}

/// Two-component scalar instance with `f(x) = 4x² − 4x + 2`.
pub fn make_lcq_reference() -> QuadraticComposition {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let vec1 = |v: f64| DVector::from_element(1, v);
    QuadraticComposition::from_parts(vec![one(1.0), one(3.0)], vec![vec1(0.0), vec1(0.0)], vec![vec1(0.0), vec1(2.0)], 2.0)
        .expect("reference instance is well formed")
}

/// Random smooth non-convex instance with curvature `beta`.
pub fn make_nonconvex_synthetic(
    n: usize,
    dim_x: usize,
    dim_w: usize,
    beta: f64,
    seed: u64,
) -> Result<QuadraticComposition, ProblemError> {
    QuadraticComposition::random(n, dim_x, dim_w, beta, seed, DEFAULT_REGION)
}
