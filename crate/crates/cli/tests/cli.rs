use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use kmeflow_cli::output::body_of;

fn kmeflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmeflow"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = kmeflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Header keys in order, then the column line.
fn shape(path: &Path) -> (Vec<String>, String) {
    let text = read(path);
    let keys = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l[2..].split(':').next().unwrap().to_string())
        .collect();
    (keys, body_of(&text).lines().next().unwrap().to_string())
}

/// Rows of a CSV body as string fields, header excluded.
fn rows(path: &Path) -> Vec<Vec<String>> {
    body_of(&read(path))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const HEADER_KEYS: [&str; 7] = [
    "tool",
    "command",
    "seed",
    "created_unix",
    "sobol",
    "enkf_variant",
    "config",
];

fn dir_str(d: &Path) -> &str {
    d.to_str().unwrap()
}

#[test]
fn toy_tables_have_fixed_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&[
        "toy",
        "--case",
        "gauss-to-gauss",
        "--ensemble-size",
        "60",
        "--n-steps",
        "5",
        "--out",
        dir_str(d),
    ]);
    let golden = [
        ("samples_t0.csv", "particle,x"),
        ("samples_t1.csv", "particle,x"),
        ("target_pdf.csv", "x,pdf,prior_pdf"),
        (
            "metrics.csv",
            "case,kernel,bandwidth,epsilon,ensemble_size,n_steps,baseline,mean,var,w2,mmd2",
        ),
        (
            "flow_steps.csv",
            "step,residual,drift_norm,baseline_norm,max_alpha",
        ),
    ];
    for (file, columns) in golden {
        let (keys, line) = shape(&d.join(file));
        assert_eq!(keys, HEADER_KEYS, "{file}");
        assert_eq!(line, columns, "{file}");
    }
    assert_eq!(rows(&d.join("samples_t1.csv")).len(), 60);
    assert_eq!(rows(&d.join("flow_steps.csv")).len(), 5);
    assert_eq!(rows(&d.join("target_pdf.csv")).len(), 1001);
    assert!(d.join("config.toml").exists());
}

#[test]
fn toy_gaussian_preset_recovers_the_posterior() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "toy",
        "--case",
        "gauss-to-gauss",
        "--out",
        dir_str(tmp.path()),
    ]);
    let row = &rows(&tmp.path().join("metrics.csv"))[0];
    let mean: f64 = row[7].parse().unwrap();
    let var: f64 = row[8].parse().unwrap();
    assert_eq!(&row[1..4], ["rbf", "5", "0.000000001"]);
    assert!((mean - 2.0).abs() <= 0.15, "mean {mean}");
    assert!((var - 0.5).abs() <= 0.12, "var {var}");
}

#[test]
fn other_commands_have_fixed_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let skew = d.join("skew");
    ok(&[
        "skew",
        "--dims",
        "1,2",
        "--ensemble-sizes",
        "40",
        "--n-steps",
        "3",
        "--n-replicates",
        "2",
        "--save-samples",
        "--out",
        dir_str(&skew),
    ]);
    let sweep = d.join("sweep");
    ok(&[
        "bandwidth-sweep",
        "--bandwidths",
        "2",
        "--ensemble-size",
        "40",
        "--n-steps",
        "3",
        "--n-replicates",
        "2",
        "--out",
        dir_str(&sweep),
    ]);
    let lorenz = d.join("lorenz");
    ok(&[
        "lorenz63",
        "--ensemble-sizes",
        "20",
        "--n-steps",
        "3",
        "--n-cycles",
        "2",
        "--n-replicates",
        "2",
        "--traces",
        "--out",
        dir_str(&lorenz),
    ]);
    let golden = [
        (
            skew.join("skew_w2.csv"),
            "d,N,kernel,bandwidth,w2_mean,w2_stderr",
            4,
        ),
        (
            skew.join("skew_replicates.csv"),
            "d,N,kernel,replicate,bandwidth,w2,mean,skewness",
            8,
        ),
        (
            skew.join("skew_samples.csv"),
            "d,N,kernel,particle,x_t0,x_t1",
            160,
        ),
        (
            sweep.join("bandwidth_w2.csv"),
            "bandwidth,N,w2_mean,w2_stderr",
            1,
        ),
        (
            lorenz.join("lorenz_rmse.csv"),
            "replicate,method,ensemble_size,rmse,retries,wall_time_s",
            6,
        ),
        (
            lorenz.join("lorenz_summary.csv"),
            "method,ensemble_size,replicates,rmse_mean,rmse_stderr,total_retries,failed",
            3,
        ),
        (
            lorenz.join("lorenz_trace.csv"),
            "method,ensemble_size,replicate,cycle,obs_x,obs_y,obs_z,mean_x,mean_y,mean_z",
            12,
        ),
    ];
    for (path, columns, n) in golden {
        let (keys, line) = shape(&path);
        assert_eq!(keys, HEADER_KEYS, "{}", path.display());
        assert_eq!(line, columns, "{}", path.display());
        assert_eq!(rows(&path).len(), n, "{}", path.display());
    }
    // The quadratic kernel has no bandwidth.
    for r in rows(&skew.join("skew_w2.csv")) {
        assert_eq!(r[3] == "NA", r[2] == "quadratic");
    }
}

#[test]
fn json_tables_carry_metadata_and_nulls() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "skew",
        "--dims",
        "1",
        "--ensemble-sizes",
        "30",
        "--n-steps",
        "2",
        "--n-replicates",
        "1",
        "--format",
        "json",
        "--seed",
        "4",
        "--out",
        dir_str(tmp.path()),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&read(&tmp.path().join("skew_w2.json"))).unwrap();
    assert_eq!(v["columns"][0], "d");
    assert_eq!(v["metadata"]["seed"], "4");
    assert_eq!(v["metadata"]["config"]["experiment"], "skew");
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    // One replicate has no standard error.
    assert!(rows.iter().all(|r| r[5].is_null()));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dir_str(tmp.path());
    let code = |args: &[&str]| kmeflow(args).status.code();
    assert_eq!(
        code(&[
            "toy",
            "--case",
            "gauss-to-gauss",
            "--n-steps",
            "0",
            "--out",
            out
        ]),
        Some(2)
    );
    assert_eq!(code(&["toy", "--case", "banana", "--out", out]), Some(2));
    assert_eq!(code(&["toy", "--epsilon=-1", "--out", out]), Some(2));
    assert_eq!(code(&["toy", "--preset", "fig4", "--out", out]), Some(2));
    assert_eq!(code(&["skew", "--dims", "65", "--out", out]), Some(2));
    assert_eq!(
        code(&["lorenz63", "--dt-obs", "0.0505", "--out", out]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "toy",
            "--case",
            "gauss-to-mixture",
            "--baseline",
            "kalman-bucy",
            "--out",
            out
        ]),
        Some(2)
    );
    assert_eq!(code(&["toy", "--no-such-flag"]), Some(2));
    let stray = tmp.path().join("stray.toml");
    fs::write(&stray, "dims = [1]\n").unwrap();
    assert_eq!(
        code(&["toy", "--config", dir_str(&stray), "--out", out]),
        Some(2)
    );
    let typo = tmp.path().join("typo.toml");
    fs::write(&typo, "n_stepz = 3\n").unwrap();
    assert_eq!(
        code(&["toy", "--config", dir_str(&typo), "--out", out]),
        Some(2)
    );

    // Too few particles for ten dimensions at this bandwidth: the speed guard trips.
    let o = kmeflow(&[
        "bandwidth-sweep",
        "--bandwidths",
        "1.5",
        "--ensemble-size",
        "40",
        "--n-steps",
        "3",
        "--n-replicates",
        "2",
        "--seed",
        "9",
        "--out",
        out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));

    // A file where the output directory should be is a runtime failure.
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let o = kmeflow(&[
        "toy",
        "--n-steps",
        "2",
        "--ensemble-size",
        "20",
        "--out",
        dir_str(&blocker),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn deterministic_runs_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let d = tmp.path().join(name);
        ok(&[
            "skew",
            "--dims",
            "3",
            "--ensemble-sizes",
            "80",
            "--n-steps",
            "4",
            "--n-replicates",
            "3",
            "--deterministic",
            "--threads",
            threads,
            "--seed",
            "11",
            "--out",
            dir_str(&d),
        ]);
        let l = tmp.path().join(format!("{name}-l"));
        ok(&[
            "lorenz63",
            "--methods",
            "kme-kalman,enkf",
            "--ensemble-sizes",
            "30",
            "--n-steps",
            "3",
            "--n-cycles",
            "3",
            "--n-replicates",
            "2",
            "--deterministic",
            "--threads",
            threads,
            "--seed",
            "11",
            "--out",
            dir_str(&l),
        ]);
        (
            body_of(&read(&d.join("skew_replicates.csv"))),
            body_of(&read(&l.join("lorenz_rmse.csv"))),
        )
    };
    let a = run("1", "a");
    let b = run("3", "b");
    let c = run("3", "c");
    assert_eq!(a, b);
    assert_eq!(b, c);
    assert!(a.1.lines().skip(1).all(|l| l.ends_with(",NA")));
}

#[test]
fn seeds_change_the_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let body = |seed: &str| {
        let d = tmp.path().join(seed);
        ok(&[
            "toy",
            "--ensemble-size",
            "30",
            "--n-steps",
            "2",
            "--seed",
            seed,
            "--out",
            dir_str(&d),
        ]);
        body_of(&read(&d.join("samples_t0.csv")))
    };
    assert_ne!(body("1"), body("2"));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    ok(&[
        "bandwidth-sweep",
        "--bandwidths",
        "3,2",
        "--ensemble-size",
        "80",
        "--n-steps",
        "3",
        "--n-replicates",
        "2",
        "--seed",
        "9",
        "--deterministic",
        "--out",
        dir_str(&first),
    ]);
    let second = tmp.path().join("second");
    ok(&[
        "bandwidth-sweep",
        "--config",
        dir_str(&first.join("config.toml")),
        "--out",
        dir_str(&second),
    ]);
    let a = body_of(&read(&first.join("bandwidth_w2.csv")));
    assert_eq!(a, body_of(&read(&second.join("bandwidth_w2.csv"))));
    let echoed = read(&second.join("config.toml"));
    assert_eq!(
        body_of(&echoed),
        body_of(&read(&first.join("config.toml"))).replace("first", "second")
    );
}

#[test]
fn repeated_bandwidths_run_once() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&[
        "bandwidth-sweep",
        "--bandwidths",
        "2,1,2,1",
        "--ensemble-size",
        "30",
        "--n-steps",
        "2",
        "--n-replicates",
        "1",
        "--out",
        dir_str(tmp.path()),
    ]);
    let bw: Vec<String> = rows(&tmp.path().join("bandwidth_w2.csv"))
        .into_iter()
        .map(|r| r[0].clone())
        .collect();
    assert_eq!(bw, ["2", "1"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("more than once"));
}

#[test]
fn lorenz_smoke_run_is_quick() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    ok(&[
        "lorenz63",
        "--n-cycles",
        "5",
        "--n-replicates",
        "1",
        "--out",
        dir_str(tmp.path()),
    ]);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "{secs} s");
    let summary = rows(&tmp.path().join("lorenz_summary.csv"));
    assert_eq!(summary.len(), 15);
    assert!(summary.iter().all(|r| r[6] == "0"));
}

#[test]
fn one_dimensional_skew_examples() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["skew", "--preset", "fig2", "--out", dir_str(tmp.path())]);
    for r in rows(&tmp.path().join("skew_replicates.csv")) {
        let mean: f64 = r[6].parse().unwrap();
        let skew: f64 = r[7].parse().unwrap();
        match r[2].as_str() {
            "rbf" => assert!(mean < 0.0, "replicate {}: mean {mean}", r[3]),
            "quadratic" => assert!(skew.abs() <= 0.15, "replicate {}: skewness {skew}", r[3]),
            k => panic!("kernel {k}"),
        }
    }
}

#[test]
fn plot_draws_known_tables() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "toy",
        "--case",
        "all",
        "--ensemble-size",
        "40",
        "--n-steps",
        "2",
        "--out",
        dir_str(tmp.path()),
    ]);
    ok(&["plot", dir_str(tmp.path())]);
    for case in ["gauss-to-gauss", "mixture-to-mixture", "gauss-to-mixture"] {
        assert!(read(&tmp.path().join(case).join("toy.svg")).starts_with("<svg"));
    }
    assert_eq!(
        kmeflow(&[
            "plot",
            dir_str(&tmp.path().join("gauss-to-gauss").join("none"))
        ])
        .status
        .code(),
        Some(1)
    );
}
