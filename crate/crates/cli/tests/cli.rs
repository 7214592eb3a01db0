use std::path::Path;
use std::process::{Command, Output};

use vortes::{Mode, Trace};

fn vortes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vortes"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Non-zero exit with exactly one `error:` line on stderr.
fn assert_one_line_error(out: &Output) -> String {
    assert!(!out.status.success());
    let err = stderr(out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with("error: "), "stderr: {err}");
    lines[0].to_string()
}

const QUICK: &[&str] = &["--m", "15", "--m-var", "4", "--burn", "60", "--keep", "40"];

fn simulate(dir: &Path, case: &str) {
    let out = vortes(&[
        "simulate", "--case", case, "--n", "90", "--n-test", "40", "--seed", "5", "--out", p(dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
}

fn fit(dir: &Path, mode: &str, out_dir: &Path, extra: &[&str]) {
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    let mut args = vec![
        "fit", "--train", p(&train), "--test", p(&test), "--mode", mode, "--out", p(out_dir),
    ];
    args.extend(QUICK);
    args.extend(extra);
    let out = vortes(&args);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn help_lists_every_flag_with_default() {
    let out = vortes(&["fit", "--help"]);
    assert!(out.status.success());
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--m ", "--m-var", "--nu ", "--q ", "--lambda ", "--nu-var", "--lambda-var", "--k ",
        "--sigma-mu", "--lambda-c", "--lambda-d", "--move-probs", "--burn", "--keep", "--thin",
        "--seed", "--sigma-estimate", "--mode", "--response", "--config",
    ] {
        let line = help
            .split("\n      -")
            .find(|chunk| chunk.starts_with(&format!("{} ", &flag.trim_end()[1..])))
            .unwrap_or_else(|| panic!("{flag} missing from help"));
        if !matches!(flag, "--config") {
            assert!(line.contains("[default: "), "{flag} has no default: {line}");
        }
    }
}

#[test]
fn simulate_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    simulate(&dir.path().join("a"), "3");
    simulate(&dir.path().join("b"), "3");
    for f in ["train.csv", "test.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b);
    }
    let train = std::fs::read_to_string(dir.path().join("a/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 91);
    let out_dir = dir.path().join("x");
    let e = assert_one_line_error(&vortes(&["simulate", "--case", "4", "--out", p(&out_dir)]));
    assert!(e.contains("--case"));
    let e = assert_one_line_error(&vortes(&["simulate", "--case", "1", "--d", "4", "--out", p(&out_dir)]));
    assert!(e.contains("--d"));
    assert!(!out_dir.exists());
}

#[test]
fn fit_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "1");
    let homo = dir.path().join("homo");
    let het = dir.path().join("het");
    fit(&data, "homoscedastic", &homo, &[]);
    fit(&data, "heteroscedastic", &het, &["--binary"]);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(homo.join("summary.json")).unwrap()).unwrap();
    assert!(summary["wall_seconds"].as_f64().unwrap() >= 0.0);
    assert!(summary["rmse_train"].as_f64().unwrap() > 0.0);
    assert!(summary["acceptance_rates"]["mean"]["add_center"].is_number());
    assert_eq!(summary["hyperparameters"]["m"], 15);

    let t = Trace::load(homo.join("trace.csv")).unwrap();
    assert_eq!(t.mode, Mode::Homoscedastic);
    assert_eq!((t.n_train, t.n_test, t.n_draws), (90, 40, 40));
    let header = std::fs::read_to_string(homo.join("trace.csv")).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.contains("sigma") && !header.contains("s_train"));

    let t = Trace::load(het.join("trace.avtr")).unwrap();
    assert_eq!(t.mode, Mode::Heteroscedastic);
    assert_eq!(t.s_test.len(), 40 * 40);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "1");
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "m = 7\nk = 2\n# comment\n").unwrap();
    let out = dir.path().join("fit");
    fit(&data, "homoscedastic", &out, &["--config", p(&conf), "--k", "4"]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    // QUICK passes --m 15, which beats the file
    assert_eq!(summary["hyperparameters"]["m"], 15);
    assert_eq!(summary["hyperparameters"]["k"], 4.0);

    std::fs::write(&conf, "bogus = 1\n").unwrap();
    let e = assert_one_line_error(&vortes(&[
        "fit", "--train", p(&data.join("train.csv")), "--config", p(&conf), "--out", p(&out),
    ]));
    assert!(e.contains("bogus"));
}

#[test]
fn diagnose_formats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "3");
    let homo = dir.path().join("homo");
    let het = dir.path().join("het");
    fit(&data, "homoscedastic", &homo, &[]);
    fit(&data, "heteroscedastic", &het, &[]);
    let diag = dir.path().join("diag");
    let out = vortes(&[
        "diagnose",
        "--trace", p(&het.join("trace.csv")),
        "--homo-trace", p(&homo.join("trace.csv")),
        "--test", p(&data.join("test.csv")),
        "--out", p(&diag),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["e_stat"].as_f64().unwrap() >= 0.0);
    assert!(json["rmse_f"].is_number());

    let qq = std::fs::read_to_string(diag.join("qq.csv")).unwrap();
    assert_eq!(qq.lines().count(), 1 + 40);

    let ev = std::fs::read_to_string(diag.join("h_evidence.csv")).unwrap();
    let (rows, reference) = ev.split_once("\n\n").unwrap();
    let mut rows = rows.lines();
    assert_eq!(rows.next().unwrap(), "index,s_median,s_lower,s_upper");
    let rows: Vec<Vec<f64>> = rows
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.len() == 4 && r[2] <= r[1] && r[1] <= r[3]));
    assert!(rows.windows(2).all(|w| w[0][1] <= w[1][1]));
    let mut reference = reference.lines();
    assert_eq!(reference.next().unwrap(), "sigma_median,sigma_lower,sigma_upper");
    let sigma: Vec<f64> = reference.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(sigma.len(), 3);

    // the training file has 90 rows, the trace 40 test rows
    let e = assert_one_line_error(&vortes(&[
        "diagnose",
        "--trace", p(&het.join("trace.csv")),
        "--test", p(&data.join("train.csv")),
        "--out", p(&diag),
    ]));
    assert!(e.contains("mismatch"), "{e}");
}

#[test]
fn predict_summarizes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "2");
    let het = dir.path().join("het");
    fit(&data, "heteroscedastic", &het, &[]);
    let pred = dir.path().join("pred.csv");
    let out = vortes(&["predict", "--trace", p(&het.join("trace.csv")), "--out", p(&pred)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&pred).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "row,f_mean,f_lower,f_upper,s_median,s_lower,s_upper");
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3]);
        assert!(v[5] <= v[4] && v[4] <= v[6] && v[5] > 0.0);
    }
}

#[test]
fn cv_selects_from_grid_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "2");
    let train = data.join("train.csv");
    let run = |out: &Path, k: &str| {
        let mut args = vec![
            "cv", "--train", p(&train), "--out", p(out),
            "--grid-nu-q", "3:0.9", "--grid-k", k, "--grid-lambda-c", "2", "--folds", "3",
        ];
        args.extend(QUICK);
        let o = vortes(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        o
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a, "1,3");
    run(&b, "1,3");
    let scores = std::fs::read(a.join("cv_scores.csv")).unwrap();
    assert_eq!(scores, std::fs::read(b.join("cv_scores.csv")).unwrap());
    let text = String::from_utf8(scores).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 1);

    let single = dir.path().join("single");
    let out = run(&single, "2");
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["best"]["k"], 2.0);
    let conf = std::fs::read_to_string(single.join("best.conf")).unwrap();
    assert!(conf.contains("k = 2\n"));

    let e = assert_one_line_error(&vortes(&[
        "cv", "--train", p(&data.join("train.csv")), "--out", p(&single), "--grid-nu-q", "3,0.9",
    ]));
    assert!(e.contains("--grid-nu-q"));
}

#[test]
fn reproduce_cars_without_data_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let e = assert_one_line_error(&vortes(&["reproduce", "cars", "--out", p(&out)]));
    assert!(e.contains("--data"));
    let missing = dir.path().join("cars.csv");
    let e = assert_one_line_error(&vortes(&[
        "reproduce", "cars", "--data", p(&missing), "--out", p(&out),
    ]));
    assert!(e.contains("not found"));
    assert!(!out.exists());
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "1");
    let before = std::fs::read(data.join("train.csv")).unwrap();
    fit(&data, "heteroscedastic", &dir.path().join("fit"), &[]);
    assert_eq!(before, std::fs::read(data.join("train.csv")).unwrap());
    let names: Vec<_> = std::fs::read_dir(&data).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2);
}

#[test]
fn bad_thread_setting_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vortes"))
        .env("VORTES_THREADS", "zero")
        .args(["simulate", "--case", "1", "--out", p(dir.path())])
        .output()
        .unwrap();
    let e = assert_one_line_error(&out);
    assert!(e.contains("VORTES_THREADS"));
}
