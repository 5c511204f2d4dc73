//! Acceptance suite: one PASS/FAIL line per criterion on stdout.
//!
//! A criterion whose statement contains a sub-check that cannot hold for
//! mathematical reasons prints FAIL with the measured evidence; its test
//! asserts every other sub-check and asserts that the unattainable one is
//! indeed violated, so a change in behavior is still caught.

use std::io::Write;
use std::time::{Duration, Instant};

use comp_opt::analysis::{convex_rates, nonconvex_sequence, rates_from, sequence_from};
use comp_opt::cli::{sweep, Algorithm, RunConfig};
use comp_opt::estimator::{pair_moments, EpochAnchor, InnerEstimate};
use comp_opt::ledger::{corollary_epoch_cost, epoch_cost, QueryLedger};
use comp_opt::problem::{
    full_gradient, make_lcq, make_lcq_reference, make_mean_variance, make_nonconvex_synthetic, CompositionProblem,
    ProblemKind,
};
use comp_opt::sampling::{IndexBatch, SampleMode, SamplingPolicy};
use comp_opt::schedule::Schedule;
use comp_opt::solver::{run_full_anchor, run_scscg, run_scscg_minibatch, RunOptions, RunResult};
use comp_opt::verify::{
    conditional_bias, default_sizes, enumerated_minibatch_variance, finite_diff_gradient, lemma_grid,
    subset_variance_exact, EnumerationOptions, LemmaKind, Method, ENUMERATION_GUARD,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id} [PRIMARY] {verdict}: {title} ({detail})");
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

#[test]
fn criterion_1_subset_mean_variance_is_exact() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut all_exact = true;
    let mut cases = 0;
    for n in 2..=8 {
        let raw: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0))).collect();
        let mean = raw.iter().fold(DVector::zeros(2), |a, v| a + v) / n as f64;
        let v: Vec<DVector<f64>> = raw.iter().map(|x| x - &mean).collect();
        let second = v.iter().map(|x| x.norm_squared()).sum::<f64>() / n as f64;
        for a in 1..=n {
            for mode in [SampleMode::WithoutReplacement, SampleMode::WithReplacement] {
                let r = subset_variance_exact(&v, a, mode).unwrap();
                all_exact &= r.method == Method::Exact;
                let af = a as f64;
                let formula = match mode {
                    SampleMode::WithoutReplacement => (n - a) as f64 / (af * (n - 1) as f64) * second,
                    SampleMode::WithReplacement => second / af,
                };
                let exact = r.exact.unwrap_or(f64::NAN);
                let err = if formula == 0.0 { exact.abs() / second } else { (exact - formula).abs() / formula };
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = all_exact && worst <= 1e-10 && within(elapsed, 10);
    report(1, "subset-mean variance identity", pass, &format!("{cases} cases, max rel err {worst:e}, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_2_variance_lemmas_on_lcq_grid() {
    let start = Instant::now();
    let mut rows_total = 0;
    let mut other_failures = Vec::new();
    let mut product_failures = Vec::new();
    let mut monte_carlo = 0;
    for n in 2..=6 {
        let p = make_lcq(n, 2, 2, 100 + n as u64).unwrap();
        assert!(!p.constants().any_estimated());
        let sizes = default_sizes(n);
        let x_k = DVector::from_element(2, 1.0);
        let x_tilde = DVector::zeros(2);
        let rows = lemma_grid(
            &p,
            p.constants(),
            &x_k,
            &x_tilde,
            &sizes,
            &sizes,
            &sizes,
            SamplingPolicy::Auto,
            EnumerationOptions::default(),
        )
        .unwrap();
        for row in rows {
            rows_total += 1;
            if row.report.method == Method::MonteCarlo {
                monte_carlo += 1;
            }
            if !row.report.passed() {
                let entry = (n, row.a, row.d, row.b, row.report.empirical, row.report.bound);
                if row.lemma == LemmaKind::AnchorProduct {
                    product_failures.push(entry);
                } else {
                    other_failures.push((row.lemma.as_str(), entry));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = other_failures.is_empty() && product_failures.is_empty() && within(elapsed, 60);
    let mut distinct_d: Vec<(usize, usize)> = product_failures.iter().map(|f| (f.0, f.2)).collect();
    distinct_d.dedup();
    let detail = format!(
        "{rows_total} rows ({monte_carlo} Monte Carlo), lemma 3-5 and mini-batch failures {}, \
         two-batch product failures at (n, D) = {distinct_d:?}; that bound scales as 1/D^2 but the \
         true value scales as 1/D, see ledger; {elapsed:.2?}",
        other_failures.len()
    );
    report(2, "variance-lemma bounds on LCQ grid", pass, &detail);
    assert!(other_failures.is_empty(), "{other_failures:?}");
    assert!(within(elapsed, 60));
    // Known counterexample region: D = ceil(n/2) in [2, n) for n >= 3.
    for (n, d) in &distinct_d {
        assert!(*d >= 2 && *d < *n, "unexpected two-batch product failure at n={n}, D={d}");
    }
}

#[test]
fn criterion_3_full_set_unbiasedness_and_subsample_bias() {
    let reference = make_lcq_reference();
    let mut ledger = QueryLedger::new();
    let xk = DVector::from_element(1, 1.0);
    let cover = IndexBatch::cover(2);
    let anchor =
        EpochAnchor::from_batches(&reference, &DVector::zeros(1), cover.clone(), cover.clone(), 0, &mut ledger).unwrap();
    let est = InnerEstimate::from_batch(&reference, &xk, &anchor, cover, &mut ledger).unwrap();
    let (mean, _) = pair_moments(&reference, &xk, &est, &anchor);
    let ref_err = (mean[0] - 4.0).abs();

    let p = make_lcq(6, 3, 3, 21).unwrap();
    let xk = DVector::from_vec(vec![0.7, -1.2, 0.4]);
    let xt = DVector::from_vec(vec![-0.3, 0.5, 1.1]);
    let cover = IndexBatch::cover(6);
    let anchor = EpochAnchor::from_batches(&p, &xt, cover.clone(), cover.clone(), 0, &mut ledger).unwrap();
    let est = InnerEstimate::from_batch(&p, &xk, &anchor, cover, &mut ledger).unwrap();
    let cover_err = conditional_bias(&p, &xk, &est, &anchor).unwrap().norm();

    let d1 = IndexBatch::from_indices(vec![0, 3], SampleMode::WithReplacement);
    let d2 = IndexBatch::from_indices(vec![1, 5], SampleMode::WithReplacement);
    let anchor = EpochAnchor::from_batches(&p, &xt, d1, d2, 0, &mut ledger).unwrap();
    let est = InnerEstimate::from_batch(&p, &xk, &anchor, IndexBatch::cover(6), &mut ledger).unwrap();
    let bias = conditional_bias(&p, &xk, &est, &anchor).unwrap().norm();

    let pass = ref_err <= 1e-10 && cover_err <= 1e-10 && bias > 1e-6;
    report(
        3,
        "full covers unbiased, subsampled anchor biased",
        pass,
        &format!("reference mean error {ref_err:e}, cover error {cover_err:e}, subsampled bias {bias:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_convex_convergence_and_recursion() {
    let start = Instant::now();
    let p = make_lcq(10, 3, 3, 7).unwrap();
    let c = p.constants();
    let opt = p.optimum().unwrap().x.clone();
    let epsilon = 1e-4;
    let x0 = DVector::zeros(3);
    let gap = (&x0 - &opt).norm_squared();
    let schedule = Schedule::convex(c, 10, epsilon, 1, gap).unwrap();
    let rates = convex_rates(&schedule, c, 10);
    let seeds = 20u64;
    let mut mean_gap = vec![0.0; schedule.s + 1];
    let mut worst_final: f64 = 0.0;
    let opts = RunOptions { x0: Some(x0), ..Default::default() };
    for seed in 0..seeds {
        let r = run_scscg(&p, &schedule, &opts, seed).unwrap();
        for (slot, rec) in mean_gap.iter_mut().zip(r.trace.all_records()) {
            *slot += rec.dist_sq_opt.unwrap() / seeds as f64;
        }
        worst_final = worst_final.max((&r.x_final - &opt).norm_squared());
    }
    // Distances below this cannot be resolved by f64 iterates near x*.
    let resolution = 64.0 * f64::EPSILON * (1.0 + opt.amax());
    let floor = 3.0 * resolution * resolution;
    let tolerance = rates.rho1 * floor;
    let holds = mean_gap
        .windows(2)
        .filter(|w| rates.recursion_holds(schedule.k, w[0], w[1], tolerance))
        .count();
    let fraction = holds as f64 / schedule.s as f64;
    let elapsed = start.elapsed();
    let pass = worst_final <= epsilon && fraction >= 0.95 && within(elapsed, 120);
    report(
        4,
        "convex convergence and contraction recursion",
        pass,
        &format!(
            "S={}, K={}, rho={:.4}, worst final dist^2 {worst_final:e}, recursion holds in {holds}/{} epochs \
             (rounding floor {floor:e}), {elapsed:.2?}",
            schedule.s, schedule.k, rates.rho, schedule.s
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_nonconvex_stationarity() {
    let start = Instant::now();
    let p = make_nonconvex_synthetic(32, 4, 4, 0.5, 5).unwrap();
    let epsilon = 1e-2;
    let schedule = Schedule::nonconvex(p.constants(), 32, epsilon, 1, 1.0, 1.0, 1.0).unwrap();
    let opts = RunOptions { record_iterations: true, ..Default::default() };
    let r = run_scscg(&p, &schedule, &opts, 0).unwrap();
    let min_epoch = r.trace.all_records().map(|e| e.grad_norm_sq).fold(f64::INFINITY, f64::min);
    let min_step = r.trace.iterations.iter().map(|e| e.grad_norm_sq).fold(f64::INFINITY, f64::min);
    let min_grad = min_epoch.min(min_step);
    let seq = nonconvex_sequence(&schedule, p.constants(), 32);
    let c1 = seq.c.get(1).copied().unwrap_or(0.0);
    let elapsed = start.elapsed();
    let pass = min_grad <= epsilon && seq.u0 > 0.0 && within(elapsed, 120);
    report(
        5,
        "non-convex stationarity and positive u0",
        pass,
        &format!(
            "eta={:.6}, A={}, D={}, K={}, S={}, min grad^2 {min_grad:e}, u0 {:e} with h*c1 = {:.4} > 1/2 \
             (unattainable under this schedule, see ledger), {elapsed:.2?}",
            schedule.eta,
            schedule.a,
            schedule.d,
            schedule.k,
            schedule.s,
            seq.u0,
            schedule.h * c1
        ),
    );
    assert!(min_grad <= epsilon);
    assert!(within(elapsed, 120));
    assert!(seq.u0 <= 0.0 && schedule.h * c1 > 0.5, "u0 sign changed: {}", seq.u0);
}

#[test]
fn criterion_6_minibatch_trends() {
    let start = Instant::now();
    let p = make_lcq(10, 3, 3, 7).unwrap();
    let opt = p.optimum().unwrap().x.clone();
    let gap = opt.norm_squared();
    let schedule = Schedule::convex(p.constants(), 10, 1e-4, 1, gap).unwrap();
    let single = run_scscg(&p, &schedule, &RunOptions::default(), 9).unwrap();
    let batch = run_scscg_minibatch(&p, &schedule, &RunOptions::default(), 9).unwrap();
    let identical = single.trace == batch.trace && single.x_hat == batch.x_hat && single.x_final == batch.x_final;

    let small = make_lcq(3, 2, 2, 4).unwrap();
    let mut ledger = QueryLedger::new();
    let xk = DVector::from_vec(vec![0.8, -0.6]);
    let d = IndexBatch::from_indices(vec![2], SampleMode::WithReplacement);
    let anchor = EpochAnchor::from_batches(&small, &DVector::zeros(2), d.clone(), d, 0, &mut ledger).unwrap();
    let a = IndexBatch::from_indices(vec![0, 0], SampleMode::WithReplacement);
    let est = InnerEstimate::from_batch(&small, &xk, &anchor, a, &mut ledger).unwrap();
    let variances: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&b| enumerated_minibatch_variance(&small, &xk, &est, &anchor, b, ENUMERATION_GUARD).unwrap())
        .collect();
    let decreasing = variances.windows(2).all(|w| w[1] < w[0]);

    let config = RunConfig {
        algorithm: Algorithm::ScscgMinibatch,
        repetitions: 20,
        epsilon: Some(1e-4),
        sweep_b: Some(vec![1, 2, 4]),
        ..RunConfig::default()
    };
    let cells = sweep(&config).unwrap();
    let medians: Vec<f64> = cells.iter().map(|c| c.median_queries).collect();
    let censored: usize = cells.iter().map(|c| c.censored).sum();
    let trend = medians.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let elapsed = start.elapsed();
    let pass = identical && decreasing && trend && censored == 0;
    report(
        6,
        "mini-batch reduction, variance and query trends",
        pass,
        &format!(
            "b=1 identical {identical}, Var(Lambda) for b=1,2,4 {variances:?}, median queries {medians:?} \
             ({censored} censored), {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

fn check_ledger(r: &RunResult, d: usize, k: usize, a: usize, b: usize, s: usize) -> bool {
    r.ledger.paper_queries == s as u64 * epoch_cost(d, k, a, b)
        && r.ledger.corollary_queries == s as u64 * corollary_epoch_cost(d, k, a)
        && r.trace.epochs.last().map(|e| e.paper_queries) == Some(r.ledger.paper_queries)
}

#[test]
fn criterion_7_ledger_identities() {
    let mut checked = 0;
    let mut ok = true;
    let lcq = make_lcq(10, 3, 3, 7).unwrap();
    let gap = lcq.optimum().unwrap().x.norm_squared();
    for b in [1usize, 2, 4] {
        let s = Schedule::convex(lcq.constants(), 10, 1e-4, b, gap).unwrap();
        let r = run_scscg_minibatch(&lcq, &s, &RunOptions::default(), b as u64).unwrap();
        ok &= check_ledger(&r, s.d, s.k, s.a, b, s.s);
        checked += 1;
        if b == 1 {
            let r = run_scscg(&lcq, &s, &RunOptions::default(), 3).unwrap();
            ok &= check_ledger(&r, s.d, s.k, s.a, 1, s.s);
            let r = run_full_anchor(&lcq, &s, &RunOptions::default(), 3).unwrap();
            ok &= check_ledger(&r, 10, s.k, s.a, 1, s.s);
            checked += 2;
        }
    }
    let nc = make_nonconvex_synthetic(32, 4, 4, 0.5, 5).unwrap();
    for b in [1usize, 3] {
        let s = Schedule::nonconvex(nc.constants(), 32, 1e-2, b, 1.0, 1.0, 1.0).unwrap();
        let r = run_scscg_minibatch(&nc, &s, &RunOptions::default(), 1).unwrap();
        ok &= check_ledger(&r, s.d, s.k, s.a, b, s.s);
        checked += 1;
    }
    let odd = Schedule::manual(comp_opt::schedule::Mode::Convex, 3, 5, 7, 4, 2, 0.01, 1.0);
    let r = run_scscg_minibatch(&lcq, &odd, &RunOptions::default(), 0).unwrap();
    ok &= check_ledger(&r, 5, 7, 3, 2, 4);
    checked += 1;
    report(7, "query ledger identities", ok, &format!("{checked} runs checked"));
    assert!(ok);
}

fn fd_worst(problem: &dyn CompositionProblem, points: usize, scale: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = DVector::from_fn(problem.dim_x(), |_, _| rng.random_range(-scale..scale));
        let g = full_gradient(problem, &x).unwrap();
        let fd = finite_diff_gradient(problem, &x, None).unwrap();
        worst = worst.max((&fd - &g).norm() / g.norm().max(1.0));
    }
    worst
}

#[test]
fn criterion_8_gradient_oracles_match_finite_differences() {
    let problems: Vec<(ProblemKind, Box<dyn CompositionProblem>)> = vec![
        (ProblemKind::Lcq, Box::new(make_lcq(10, 3, 4, 2).unwrap())),
        (ProblemKind::LcqReference, Box::new(make_lcq_reference())),
        (ProblemKind::MeanVariance, Box::new(make_mean_variance(12, 3, 1.0, 3).unwrap())),
        (ProblemKind::Nonconvex, Box::new(make_nonconvex_synthetic(32, 4, 4, 0.5, 5).unwrap())),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (kind, p) in &problems {
        let worst = fd_worst(p.as_ref(), 100, 3.0, 8);
        ok &= worst <= 1e-5;
        details.push(format!("{kind} {worst:e}"));
    }
    report(8, "finite-difference gradient agreement", ok, &details.join(", "));
    assert!(ok);
}

#[test]
fn criterion_9_analysis_formulas() {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let s = sequence_from(
            rng.random_range(0.1..4.0),
            rng.random_range(0.5..20.0),
            rng.random_range(1e-4..0.05),
            rng.random_range(1..300),
            rng.random_range(1..5),
            rng.random_range(0.0..2.0),
            0.0,
        );
        worst = worst.max((s.c0() - s.c0_closed_form).abs() / s.c0_closed_form);
    }
    let worked = sequence_from(1.0, 10.0, 0.01, 10, 1, 0.0, 0.0);
    worst = worst.max((worked.c0() - worked.c0_closed_form).abs() / worked.c0_closed_form);
    let rho = rates_from(1.0, 1.0, 1.0, 1.0 / 135.0, 540, 1, 0.0, 0.0).rho;
    let rho_ok = format!("{rho:.4}") == "0.3557";
    let pass = worst <= 1e-10 && rho_ok;
    report(9, "closed-form sequence and worked contraction rate", pass, &format!("max rel err {worst:e}, rho {rho:.6}"));
    assert!(pass);
}
