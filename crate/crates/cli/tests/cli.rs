use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use transflow_core::checkpoint::Checkpoint;
use transflow_core::run::{read_series, SERIES_FILE, SERIES_HEADER};

fn transflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("TRANSFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn diagnostic(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("a diagnostic line");
    serde_json::from_str(line).expect("diagnostic is JSON")
}

fn lambda_of(out: &Output) -> f64 {
    let text = stdout(out);
    let line = text.lines().find(|l| l.starts_with("lambda ")).expect("lambda line");
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn eig_on_a_flat_torus_gives_zero_and_a_loadable_field_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = transflow(dir.path(), &["eig", "--scenario", "flat-taut", "--dims", "16"]);
    assert!(out.status.success(), "{out:?}");
    assert!(lambda_of(&out).abs() < 1e-10);
    let ck = Checkpoint::<f64>::load(&dir.path().join("f_min.bin")).unwrap();
    assert!(ck.state.f.is_some() && ck.model.is_some());
}

#[test]
fn eig_backends_agree() {
    let dir = tempfile::tempdir().unwrap();
    let args = |backend| ["eig", "--scenario", "weighted-exact", "--dims", "32", "--backend", backend, "--output", backend];
    let eigen = lambda_of(&transflow(dir.path(), &args("eigen")));
    let minimize = lambda_of(&transflow(dir.path(), &args("minimize")));
    assert!((eigen - minimize).abs() < 1e-6 * (1.0 + eigen.abs()), "{eigen} vs {minimize}");
}

#[test]
fn eig_backend_on_a_twisted_class_exits_with_mode_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let out = transflow(dir.path(), &["eig", "--scenario", "twisted-nontaut", "--dims", "16"]);
    assert_eq!(out.status.code(), Some(4));
    let diag = diagnostic(&out);
    assert_eq!(diag["error"], "ModeUnsupported");
    assert_eq!(diag["exit_code"], 4);
}

#[test]
fn ricci_run_on_a_flat_torus_stays_at_zero_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let out = transflow(
        dir.path(),
        &["run", "--scenario", "flat-taut", "--dims", "16", "--flow", "ricci", "--horizon", "0.05", "--output", "flat"],
    );
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(dir.path().join("flat").join(SERIES_FILE)).unwrap();
    assert_eq!(text.lines().next(), Some(SERIES_HEADER));
    let rows = read_series(&dir.path().join("flat").join(SERIES_FILE)).unwrap();
    assert!(rows.len() >= 2);
    assert!(rows.iter().all(|r| r.lambda.abs() < 1e-8));
    assert!((rows.last().unwrap().t - 0.05).abs() < 1e-12);
}

#[test]
fn ricci_run_from_a_config_file_keeps_lambda_nondecreasing() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "scenario = \"conformal-taut\"\ndims = 32\nflow = \"ricci\"\nhorizon = 0.1\nlambda_every = 20\noutput = \"conf\"\n",
    )
    .unwrap();
    let out = transflow(dir.path(), &["run", "--config", "run.toml"]);
    assert!(out.status.success(), "{out:?}");
    let rows = read_series(&dir.path().join("conf").join(SERIES_FILE)).unwrap();
    for pair in rows.windows(2) {
        assert!(pair[1].lambda >= pair[0].lambda - 1e-7, "{} -> {}", pair[0].lambda, pair[1].lambda);
    }
}

#[test]
fn resume_after_an_interruption_reproduces_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "run", "--scenario", "weighted-exact", "--dims", "16", "--flow", "ricci", "--horizon", "0.02", "--checkpoint-every", "10",
        "--lambda-every", "5", "--output", "full",
    ];
    assert!(transflow(dir.path(), &args).status.success());
    let full = dir.path().join("full");
    let cut = dir.path().join("cut");
    fs::create_dir(&cut).unwrap();
    let mut checkpoints = Vec::new();
    for entry in fs::read_dir(&full).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.starts_with("ckpt-") {
            checkpoints.push(name.clone());
        }
        fs::copy(&path, cut.join(&name)).unwrap();
    }
    checkpoints.sort();
    assert!(checkpoints.len() >= 3, "{checkpoints:?}");
    let keep = checkpoints.len() / 2;
    let last = checkpoints.last().unwrap().clone();
    for name in &checkpoints[keep..] {
        fs::remove_file(cut.join(name)).unwrap();
    }
    let series = fs::read_to_string(full.join(SERIES_FILE)).unwrap();

    let out = transflow(dir.path(), &["resume", "cut"]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(fs::read_to_string(cut.join(SERIES_FILE)).unwrap(), series);
    assert_eq!(fs::read(cut.join(&last)).unwrap(), fs::read(full.join(&last)).unwrap());
}

#[test]
fn usage_errors_exit_five() {
    let dir = tempfile::tempdir().unwrap();
    let out = transflow(dir.path(), &["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(5));

    fs::write(dir.path().join("bad.toml"), "scenario = \"flat-taut\"\nflow = \"ricci\"\nhorizon = 1.0\noutput = \"o\"\nspeed = 2\n").unwrap();
    let out = transflow(dir.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(diagnostic(&out)["message"].as_str().unwrap().contains("speed"));

    let out = transflow(dir.path(), &["eig", "--scenario", "klein-bottle"]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn verify_writes_a_report_and_signals_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = transflow(dir.path(), &["verify", "--suite", "entropy", "--dims", "32", "--report", "entropy.json"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("entropy.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("eigen vs minimize"));

    // at 16 nodes the discretization error exceeds the reference tolerance
    let out = transflow(dir.path(), &["verify", "--suite", "entropy", "--dims", "16"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn a_degenerating_metric_exits_two_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = transflow(
        dir.path(),
        &[
            "run", "--scenario", "conformal-taut", "--dims", "16", "--flow", "ricci", "--horizon", "5", "--cfl", "1", "--lambda-every",
            "100000", "--output", "blow",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(diagnostic(&out)["error"], "SingularMetric");
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("blow").join("diagnostic.json")).unwrap()).unwrap();
    assert_eq!(record["error"], "SingularMetric");
}

#[test]
fn thread_count_is_validated_and_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let eig = |threads: &str, output: &str| {
        Command::new(env!("CARGO_BIN_EXE_transflow"))
            .args(["eig", "--scenario", "anisotropic", "--dims", "32", "--output", output])
            .current_dir(dir.path())
            .env("TRANSFLOW_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(eig("0", "zero").status.code(), Some(5));
    let one = eig("1", "one.bin");
    let four = eig("4", "four.bin");
    assert!(one.status.success() && four.status.success());
    assert_eq!(stdout(&one), stdout(&four));
    assert_eq!(fs::read(dir.path().join("one.bin")).unwrap(), fs::read(dir.path().join("four.bin")).unwrap());
}
