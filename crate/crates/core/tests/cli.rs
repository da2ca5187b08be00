use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilinear-dof"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path) -> (String, String, String) {
    let d = dir.to_str().unwrap();
    ok(&["generate", "--out-dir", d, "--seed", "3", "--genes", "150"]);
    (format!("{d}/y.csv"), format!("{d}/x.csv"), format!("{d}/z.csv"))
}

#[test]
fn test_output_is_sorted_and_summarised() {
    let dir = tempfile::tempdir().unwrap();
    let (y, x, z) = generate(dir.path());
    let text = ok(&[
        "test", "--y", &y, "--x", &x, "--z", &z, "--coef", "age", "--format", "csv",
    ]);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["id", "estimate", "std_error", "t_stat", "df_resid", "p_value", "method"]
    );
    let p: Vec<f64> = rdr.records().map(|r| r.unwrap()[5].parse().unwrap()).collect();
    assert_eq!(p.len(), 150);
    assert!(p.windows(2).all(|w| w[0] <= w[1]));

    let json: serde_json::Value = serde_json::from_str(&ok(&[
        "test", "--y", &y, "--x", &x, "--z", &z, "--coef", "2", "--format", "json",
    ]))
    .unwrap();
    assert_eq!(json["summary"]["coefficient"], "age");
    assert_eq!(json["summary"]["tests"], 150);
    assert!(json["summary"]["significant"].as_u64().unwrap() > 0);
}

#[test]
fn none_method_is_classical_regression() {
    let dir = tempfile::tempdir().unwrap();
    let (y, x, z) = generate(dir.path());
    let a = ok(&[
        "test", "--y", &y, "--x", &x, "--z", &z, "--coef", "age", "--method", "none", "--format", "csv",
    ]);
    let b = ok(&[
        "test", "--y", &y, "--x", &x, "--z", &z, "--coef", "age", "--method", "naive", "--r-hat", "0", "--format",
        "csv",
    ]);
    assert_eq!(a.replace(",none", ""), b.replace(",naive", "").replace(",none", ""));
    assert!(a.lines().nth(1).unwrap().ends_with(",none"));
}

#[test]
fn fit_and_scree() {
    let dir = tempfile::tempdir().unwrap();
    let (y, x, z) = generate(dir.path());
    let fit = ok(&[
        "fit", "--y", &y, "--x", &x, "--z", &z, "--r-hat", "2", "--format", "json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&fit).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 150);
    assert_eq!(v["summary"]["mu_hat"].as_array().unwrap().len(), 2);
    let scree = ok(&[
        "scree",
        "--y",
        &y,
        "--x",
        &x,
        "--z",
        &z,
        "--components",
        "3",
        "--format",
        "csv",
    ]);
    assert_eq!(scree.lines().count(), 4);
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.json");
    let args = [
        "simulate",
        "--n",
        "10",
        "--m",
        "40",
        "--replicates",
        "200",
        "--seed",
        "4",
        "--format",
        "json",
    ];
    let stdout = ok(&args);
    let mut with_out = args.to_vec();
    with_out.extend(["--out", out.to_str().unwrap()]);
    assert_eq!(ok(&with_out), "");
    assert_eq!(std::fs::read_to_string(&out).unwrap(), stdout);
}

#[test]
fn errors_carry_codes_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let (y, x, z) = generate(dir.path());
    let out = run(&["test", "--y", &y, "--x", &x, "--z", &z, "--coef", "height"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[INVALID_ARGUMENT]"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,g1\ns1,abc\n").unwrap();
    let out = run(&["scree", "--y", bad.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[PARSE_ERROR]"));

    let out = run(&["test", "--y", &y, "--x", &x, "--coef", "age", "--method", "mandel"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));

    let missing = run(&["fit", "--y", "/nonexistent/y.csv"]);
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[IO_ERROR]"));

    // stochastic commands refuse to run without a seed
    assert_eq!(run(&["simulate", "--n", "5", "--m", "5"]).status.code(), Some(2));
    assert_eq!(
        run(&["--threads", "0", "simulate", "--n", "5", "--m", "5", "--seed", "1"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn generated_truth_marks_signals() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let text = std::fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let signals = rdr.records().filter(|r| &r.as_ref().unwrap()[3] == "1").count();
    assert_eq!(signals, 5);
}
