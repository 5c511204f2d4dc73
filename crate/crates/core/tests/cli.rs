use std::fs;
use std::path::Path;
use std::process::Command;

use comp_opt::cli::{prepare, queries_to_target, run_algorithm, sweep, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_comp-opt"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_writes_one_row_per_epoch_and_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let cfg = write_config(dir.path(), "run.cfg", "problem=lcq\nn=10\ndim_x=3\ndim_w=3\nepsilon=1e-4\n");
    let status = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "s,f_value,grad_norm_sq,dist_sq_opt,paper_queries,paper_queries_corollary,raw_queries");
    assert!(text.contains("# schedule.k=") && text.contains("(derived)"));
    let s: usize = text.lines().find_map(|l| l.strip_prefix("# schedule.s=")).unwrap().split(' ').next().unwrap().parse().unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), s);
    let last: f64 = rows.last().unwrap()[3].parse().unwrap();
    assert!(last <= 1e-4);
}

#[test]
fn overrides_are_marked_in_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let cfg = write_config(dir.path(), "o.cfg", "n=5\ndim_x=2\ndim_w=2\nk=7\ns=3\n");
    let status = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("# schedule.k=7 (override)"));
    assert!(text.contains("# schedule.s=3 (override)"));
    assert!(text.contains("# schedule.eta=") && text.contains("(derived)"));
    assert_eq!(data_rows(&text).len(), 3);
}

#[test]
fn fixed_seed_repetitions_are_identical_and_varied_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rep.csv");
    let cfg = write_config(dir.path(), "r.cfg", "n=6\ndim_x=2\ndim_w=2\nrepetitions=3\nfixed_seed=true\nmaster_seed=11\nd=2\na=2\n");
    assert_eq!(bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap().code(), Some(0));
    let files: Vec<String> = (0..3).map(|r| fs::read_to_string(dir.path().join(format!("rep.rep{r}.csv"))).unwrap()).collect();
    assert_eq!(files[0], files[1]);
    assert_eq!(files[1], files[2]);

    let cfg = write_config(dir.path(), "v.cfg", "n=6\ndim_x=2\ndim_w=2\nrepetitions=2\nmaster_seed=11\nd=2\na=2\n");
    let out = dir.path().join("var.csv");
    assert_eq!(bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap().code(), Some(0));
    let a = fs::read_to_string(dir.path().join("var.rep0.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("var.rep1.csv")).unwrap();
    assert_ne!(data_rows(&a), data_rows(&b));
}

#[test]
fn output_is_byte_stable_and_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.cfg", "n=6\ndim_x=2\ndim_w=2\nrepetitions=2\nd=3\na=2\n");
    let mut outputs = Vec::new();
    for threads in ["0", "1", "4"] {
        let out = dir.path().join(format!("t{threads}.csv"));
        let status = bin()
            .env("COMP_OPT_THREADS", threads)
            .arg("run")
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(fs::read_to_string(dir.path().join(format!("t{threads}.rep1.csv"))).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn malformed_config_exits_one_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "n=4\n# fine\nalgorithm=newton\n");
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "div.cfg", "n=4\ndim_x=2\ndim_w=2\neta=50\nk=200\ns=2\n");
    let out = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("d.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verbose_writes_iteration_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "it.cfg", "n=4\ndim_x=2\ndim_w=2\nk=5\ns=2\n");
    let out = dir.path().join("it.csv");
    let status = bin().arg("run").arg("--verbose").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let iters = fs::read_to_string(dir.path().join("it.iterations.csv")).unwrap();
    assert_eq!(iters.lines().count(), 1 + 10);
}

#[test]
fn verify_full_covers_give_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cov.cfg",
        "n=4\ndim_x=2\ndim_w=2\ngrid_a=4\ngrid_d=4\ngrid_b=1\nverify_x=0.5,0.5\nverify_x_tilde=0.5,0.5\n",
    );
    let out = dir.path().join("v.csv");
    let status = bin().arg("verify").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 5);
    for row in rows {
        let lhs: f64 = row[5].parse().unwrap();
        assert!(lhs <= 1e-24, "{row:?}");
        assert_eq!(row[11], "pass");
    }
}

#[test]
fn verify_corrupted_inner_variance_fails_inner_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "h1.cfg",
        "n=4\ndim_x=2\ndim_w=2\ngrid_a=1\ngrid_d=1\ngrid_b=1\nconstant.H1=0\nverify_x=0,0\n",
    );
    let out = dir.path().join("h1.csv");
    let status = bin().arg("verify").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let text = fs::read_to_string(&out).unwrap();
    let inner = data_rows(&text).into_iter().find(|r| r[0] == "inner_value").unwrap();
    assert_eq!(inner[11], "fail");
}

#[test]
fn verify_default_grid_fails_only_two_batch_product_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.csv");
    let cfg = write_config(dir.path(), "g.cfg", "n=6\ndim_x=2\ndim_w=2\n");
    let status = bin().arg("verify").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    let text = fs::read_to_string(&out).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 27 * 5);
    let failing: Vec<&Vec<String>> = rows.iter().filter(|r| r[11] == "fail").collect();
    assert!(failing.iter().all(|r| r[0] == "anchor_product" && r[2] == "3"), "{failing:?}");
    assert_eq!(status.code(), Some(if failing.is_empty() { 0 } else { 1 }));
}

#[test]
fn single_cell_sweep_matches_run_threshold_scan() {
    let config = RunConfig::from_text("n=8\ndim_x=2\ndim_w=2\nepsilon=1e-4\nrepetitions=1\nmaster_seed=5\n").unwrap();
    let cells = sweep(&config).unwrap();
    assert_eq!(cells.len(), 1);
    let prep = prepare(&config).unwrap();
    let result = run_algorithm(&prep, config.algorithm, 5).unwrap();
    let (q, _) = queries_to_target(&result, prep.schedule.mode, 1e-4).unwrap();
    assert_eq!(cells[0].median_queries, q as f64);
    assert_eq!(cells[0].censored, 0);
}

#[test]
fn halving_epsilon_does_not_reduce_queries() {
    let config = RunConfig::from_text(
        "n=8\ndim_x=2\ndim_w=2\nrepetitions=5\nalgorithm=scscg_minibatch\nsweep_epsilon=1e-3,5e-4,2.5e-4\nsweep_b=2\n",
    )
    .unwrap();
    let cells = sweep(&config).unwrap();
    let medians: Vec<f64> = cells.iter().map(|c| c.median_queries).collect();
    assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");
}

#[test]
fn sweep_command_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        "n=6\ndim_x=2\ndim_w=2\nrepetitions=3\nalgorithm=scscg_minibatch\nsweep_b=1,2\nsweep_algorithms=scscg_minibatch,full_anchor\n",
    );
    let status = bin().arg("sweep").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("algorithm,n,epsilon,b,"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn nonconvex_problem_runs_with_derived_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nc.csv");
    let cfg = write_config(dir.path(), "nc.cfg", "problem=nonconvex\nn=32\ndim_x=4\ndim_w=4\nbeta=0.5\nepsilon=0.01\n");
    let status = bin().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("# schedule.mode=nonconvex"));
    assert!(text.contains("(estimated)"));
    assert_eq!(data_rows(&text).len(), 40);
    assert!(data_rows(&text).iter().all(|r| r[3].is_empty()));
}
