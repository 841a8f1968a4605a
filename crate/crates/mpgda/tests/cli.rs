//! End-to-end checks of the experiment runner: exit codes, output files,
//! aggregate arithmetic, config round-trips, and plot-data emission.

use std::path::Path;

use mpgda::cli::main_with_args;

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["mpgda"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn run_analytic_writes_results_and_dk_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run(&[
        "run",
        "--set",
        "experiment=analytic",
        "--set",
        "algorithm=pa",
        "--set",
        "max_outer=40",
        "--set",
        "epsilon=1e-12",
        "--out",
        out,
    ]);
    assert_eq!(code, 0);
    for file in ["trace_pa_seed0.csv", "per_seed_pa.csv", "aggregate_pa.csv", "results_pa.json"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
    let trace = read_csv(&dir.path().join("trace_pa_seed0.csv"));
    assert_eq!(trace[0], vec!["schema_version", "k", "objective", "g_beta", "d_k", "elapsed_s"]);
    assert_eq!(trace.len(), 41);
    // The analytic experiment has a reference point, so d_k is populated
    // and eventually sinks below 1e-3.
    let d_last: f64 = trace.last().unwrap()[4].parse().unwrap();
    assert!(d_last <= 1e-3);
}

#[test]
fn aggregate_is_arithmetic_mean_of_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run(&[
        "run",
        "--set",
        "experiment=fspca-synthetic",
        "--set",
        "seeds=0,1,2",
        "--set",
        "r=2",
        "--set",
        "max_outer=120",
        "--out",
        out,
    ]);
    assert_eq!(code, 0);
    let per_seed = read_csv(&dir.path().join("per_seed_pa.csv"));
    let objs: Vec<f64> = per_seed[1..].iter().map(|row| row[4].parse().unwrap()).collect();
    let mean = objs.iter().sum::<f64>() / objs.len() as f64;
    let agg = read_csv(&dir.path().join("aggregate_pa.csv"));
    let agg_mean: f64 = agg[1][3].parse().unwrap();
    assert!((mean - agg_mean).abs() <= 1e-12);
}

#[test]
fn rerun_from_embedded_config_reproduces_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("first");
    let code = run(&[
        "run",
        "--set",
        "experiment=analytic",
        "--set",
        "algorithm=pa",
        "--set",
        "max_outer=30",
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    // Extract the embedded config and replay it into a fresh directory.
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("results_pa.json")).unwrap())
            .unwrap();
    let cfg = json["config"].as_object().unwrap();
    let config_path = dir.path().join("replay.cfg");
    let text: String = cfg
        .iter()
        .map(|(k, v)| format!("{k}={}\n", v.as_str().unwrap()))
        .collect();
    std::fs::write(&config_path, text).unwrap();

    let out2 = dir.path().join("second");
    let code = run(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let a = read_csv(&out1.join("trace_pa_seed0.csv"));
    let b = read_csv(&out2.join("trace_pa_seed0.csv"));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        // Identical except the wall-clock column.
        assert_eq!(ra[..5], rb[..5]);
    }
}

#[test]
fn validation_failures_exit_nonzero() {
    assert_eq!(run(&["run", "--set", "experiment=analytic", "--set", "bogus=1"]), 1);
    assert_eq!(run(&["run", "--set", "experiment=analytic", "--set", "seeds="]), 1);
    assert_eq!(run(&["run", "--set", "experiment=nope"]), 1);
    assert_eq!(run(&["run"]), 1); // no experiment key at all
    assert_eq!(run(&["plotdata"]), 1); // no traces given
}

#[test]
fn gradcheck_passes_and_corruption_fails() {
    assert_eq!(run(&["gradcheck", "--set", "experiment=analytic"]), 0);
    assert_eq!(
        run(&[
            "gradcheck",
            "--set",
            "experiment=ssc-synthetic",
            "--set",
            "ssc_n=10",
            "--set",
            "ssc_dim=5",
        ]),
        0
    );
    assert_eq!(
        run(&[
            "gradcheck",
            "--set",
            "experiment=analytic",
            "--set",
            "debug_corrupt_gradient=true",
        ]),
        1
    );
}

#[test]
fn plotdata_emits_log_files_and_clips_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("toy_trace.csv");
    std::fs::write(
        &trace,
        "schema_version,k,objective,g_beta,d_k,elapsed_s\n\
         1,0,1.0,0.5,0.1,0.001\n\
         1,1,0.9,0.2,0,0.002\n\
         1,2,0.8,0.1,,0.003\n",
    )
    .unwrap();
    let code = run(&["plotdata", trace.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let iters = read_csv(&dir.path().join("toy_trace_dk_iters.csv"));
    assert_eq!(iters[0], vec!["k", "log10_dk"]);
    // Row with empty d_k is dropped; the zero row is clipped at 1e-16.
    assert_eq!(iters.len(), 3);
    let clipped: f64 = iters[2][1].parse().unwrap();
    assert!((clipped - (-16.0)).abs() < 1e-12);
    assert!(dir.path().join("toy_trace_dk_time.csv").exists());
}

#[test]
fn plotdata_merges_multiple_traces_by_k() {
    let dir = tempfile::tempdir().unwrap();
    let t1 = dir.path().join("a_trace.csv");
    let t2 = dir.path().join("b_trace.csv");
    std::fs::write(
        &t1,
        "schema_version,k,objective,g_beta,d_k,elapsed_s\n1,0,1,1,0.1,0\n1,1,1,1,0.01,0\n",
    )
    .unwrap();
    std::fs::write(
        &t2,
        "schema_version,k,objective,g_beta,d_k,elapsed_s\n1,0,1,1,0.2,0\n1,2,1,1,0.002,0\n",
    )
    .unwrap();
    let code = run(&[
        "plotdata",
        t1.to_str().unwrap(),
        t2.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let merged = read_csv(&dir.path().join("merged_dk_iters.csv"));
    assert_eq!(merged[0], vec!["k", "log10_dk_a_trace", "log10_dk_b_trace"]);
    assert_eq!(merged.len(), 4); // k = 0, 1, 2
    assert_eq!(merged[2][2], ""); // b has no k=1 row
}

#[test]
fn pga_run_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "run",
        "--set",
        "experiment=analytic",
        "--set",
        "algorithm=pga",
        "--set",
        "max_outer=10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
}
