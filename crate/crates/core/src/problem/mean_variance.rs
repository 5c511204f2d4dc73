use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    box_vertex_max, composite_variance_at, estimate_constants, inner_variance, CompositionProblem, Constant, Optimum,
    ProblemConstants, ProblemError, DEFAULT_REGION,
};

const VERTEX_LIMIT: usize = 12;

/// Mean-variance regression: `f(x) = mean(hᵢ(x)) + λ·var(hᵢ(x))` with
/// `hᵢ(x) = ⟨aᵢ, x⟩ − bᵢ`.
///
/// Written as a composition with `Gⱼ(x) = (x, hⱼ(x)) ∈ ℝ^{N+1}` and
/// `Fᵢ(u, v) = hᵢ(u) + λ(hᵢ(u) − v)²`.
#[derive(Clone, Debug)]
pub struct MeanVariance {
    a: Vec<DVector<f64>>,
    b: Vec<f64>,
    lambda: f64,
    constants: ProblemConstants,
    optimum: Option<Optimum>,
}

impl MeanVariance {
    pub fn from_data(a: Vec<DVector<f64>>, b: Vec<f64>, lambda: f64, region: f64) -> Result<Self, ProblemError> {
        if a.is_empty() || a.len() != b.len() {
            return Err(ProblemError::InvalidParameter("need n >= 1 rows with matching targets".into()));
        }
        let d = a[0].len();
        if d == 0 || a.iter().any(|ai| ai.len() != d) {
            return Err(ProblemError::InvalidParameter("rows must share a positive dimension".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let mut p = Self {
            a,
            b,
            lambda,
            constants: ProblemConstants::zero(region),
            optimum: None,
        };
        p.constants = p.compute_constants(region);
        p.optimum = p.solve_optimum();
        Ok(p)
    }

    pub fn random(n: usize, dim_x: usize, lambda: f64, seed: u64, region: f64) -> Result<Self, ProblemError> {
        if n == 0 || dim_x == 0 {
            return Err(ProblemError::InvalidParameter("n and dim_x must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
        let theta = DVector::from_fn(dim_x, |_, _| normal());
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let ai = DVector::from_fn(dim_x, |_, _| normal());
            b.push(ai.dot(&theta) + 0.5 * normal());
            a.push(ai);
        }
        Self::from_data(a, b, lambda, region)
    }

    /// The row `aᵢ`.
    pub fn loss_direction(&self, i: usize) -> &DVector<f64> {
        &self.a[i]
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn loss(&self, i: usize, u: &DVector<f64>) -> f64 {
        self.a[i].dot(u) - self.b[i]
    }

    fn means(&self) -> (DVector<f64>, f64) {
        let n = self.a.len() as f64;
        let a_bar = self.a.iter().fold(DVector::zeros(self.a[0].len()), |acc, ai| acc + ai) / n;
        (a_bar, self.b.iter().sum::<f64>() / n)
    }

    fn covariance(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (a_bar, b_bar) = self.means();
        let d = a_bar.len();
        let n = self.a.len() as f64;
        let mut cov = DMatrix::zeros(d, d);
        let mut cross = DVector::zeros(d);
        for (ai, bi) in self.a.iter().zip(&self.b) {
            let da = ai - &a_bar;
            cov += &da * da.transpose();
            cross += &da * (bi - b_bar);
        }
        (cov / n, cross / n)
    }

    fn solve_optimum(&self) -> Option<Optimum> {
        if self.lambda == 0.0 || self.constants.mu.value <= 1e-12 {
            return None;
        }
        let (a_bar, _) = self.means();
        let (cov, cross) = self.covariance();
        let rhs = cross - a_bar / (2.0 * self.lambda);
        let x = cov.cholesky()?.solve(&rhs);
        let value = super::objective(self, &x).ok()?;
        Some(Optimum { x, value })
    }

    fn compute_constants(&self, region: f64) -> ProblemConstants {
        let d = self.a[0].len();
        let (a_bar, b_bar) = self.means();
        let (cov, _) = self.covariance();
        let lam = self.lambda;
        let lambda_min = cov.symmetric_eigen().eigenvalues.min().max(0.0);

        let b_g = self.a.iter().map(|ai| (1.0 + ai.norm_squared()).sqrt()).fold(0.0, f64::max);
        let l_big_f = self.a.iter().map(|ai| 2.0 * lam * (ai.norm_squared() + 1.0)).fold(0.0, f64::max);
        let mut l_f: f64 = 0.0;
        for ai in &self.a {
            let spread = (ai - &a_bar).norm();
            for aj in &self.a {
                l_f = l_f.max(2.0 * lam * (ai - aj).norm() * spread);
            }
        }
        let b_f = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(ai, bi)| {
                let r = (ai - &a_bar).lp_norm(1) * region + (bi - b_bar).abs();
                ai.norm() * (1.0 + 2.0 * lam * r) + 2.0 * lam * r
            })
            .fold(0.0, f64::max);

        let (h1, h2) = if d <= VERTEX_LIMIT {
            (
                Constant::exact(box_vertex_max(d, region, |x| inner_variance(self, x))),
                Constant::exact(box_vertex_max(d, region, |x| composite_variance_at(self, x))),
            )
        } else {
            let est = estimate_constants(self, region, 1000, 0x5EED);
            (est.inner_variance, est.composite_variance)
        };

        ProblemConstants {
            mu: Constant::exact(2.0 * lam * lambda_min),
            jacobian_bound: Constant::exact(b_g),
            inner_smoothness: Constant::exact(0.0),
            outer_gradient_bound: Constant::exact(b_f),
            outer_smoothness: Constant::exact(l_big_f),
            composite_smoothness: Constant::exact(l_f),
            inner_variance: h1,
            composite_variance: h2,
            region,
        }
    }
}

impl CompositionProblem for MeanVariance {
    fn n(&self) -> usize {
        self.a.len()
    }

    fn dim_x(&self) -> usize {
        self.a[0].len()
    }

    fn dim_w(&self) -> usize {
        self.a[0].len() + 1
    }

    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let d = x.len();
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(x);
        g[d] = self.loss(j, x);
        g
    }

    fn inner_jacobian(&self, j: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim_x();
        let mut jac = DMatrix::zeros(d + 1, d);
        jac.view_mut((0, 0), (d, d)).fill_with_identity();
        jac.row_mut(d).copy_from(&self.a[j].transpose());
        jac
    }

    fn outer_value(&self, i: usize, w: &DVector<f64>) -> f64 {
        let d = self.dim_x();
        let u = w.rows(0, d).into_owned();
        let h = self.loss(i, &u);
        h + self.lambda * (h - w[d]).powi(2)
    }

    fn outer_gradient(&self, i: usize, w: &DVector<f64>) -> DVector<f64> {
        let d = self.dim_x();
        let u = w.rows(0, d).into_owned();
        let r = self.loss(i, &u) - w[d];
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(&(&self.a[i] * (1.0 + 2.0 * self.lambda * r)));
        g[d] = -2.0 * self.lambda * r;
        g
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }
}

/// Random mean-variance instance over the default region.
pub fn make_mean_variance(n: usize, dim_x: usize, lambda: f64, seed: u64) -> Result<MeanVariance, ProblemError> {
    MeanVariance::random(n, dim_x, lambda, seed, DEFAULT_REGION)
}
