//! Command-line driver for the `vortes` sampler.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod cv;
pub mod pipeline;
pub mod reproduce;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vortes::data_io::{simulate, CsvFrame, SimSpec};
use vortes::diagnostics::{h_evidence, qq_data, rmse, HEvidenceData, PitMode, PitVector};
use vortes::tessellation::MoveKind;
use vortes::trace::MoveStats;
use vortes::{Mode, Rows, Trace};

use args::{
    Cli, Command, CvArgs, DiagnoseArgs, FitArgs, PitArg, PredictArgs, ReproduceArgs, RowsArg,
    SimulateArgs,
};
use pipeline::{evaluate, hints, prepare, summarize_rows};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "VORTES_THREADS";

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .with_context(|| format!("not a file path: {}", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Binary for `.avtr`, CSV otherwise.
pub fn save_trace(trace: &Trace, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e == "avtr") {
        trace.write_binary(&mut buf)?;
    } else {
        trace.write_text(&mut buf)?;
    }
    write_atomic(path, &buf)
}

/// `uniform,pit` with one row per observation.
pub fn write_qq(path: &Path, pit: &PitVector) -> Result<()> {
    let mut out = String::from("uniform,pit\n");
    for (u, p) in qq_data(pit) {
        out.push_str(&format!("{u},{p}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Per-observation rows sorted by median, a blank line, then the reference
/// sigma block.
pub fn write_h_evidence(path: &Path, data: &HEvidenceData) -> Result<()> {
    let mut out = String::from("index,s_median,s_lower,s_upper\n");
    for r in &data.rows {
        out.push_str(&format!("{},{},{},{}\n", r.index, r.median, r.lower, r.upper));
    }
    out.push_str("\nsigma_median,sigma_lower,sigma_upper\n");
    out.push_str(&format!(
        "{},{},{}\n",
        data.sigma_median, data.sigma_lower, data.sigma_upper
    ));
    write_atomic(path, out.as_bytes())
}

fn read_frame(path: &Path) -> Result<CsvFrame> {
    CsvFrame::read(path).with_context(|| format!("cannot load {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn rates(stats: &MoveStats) -> BTreeMap<&'static str, Option<f64>> {
    MoveKind::ALL.iter().map(|&k| (k.name(), stats.rate(k))).collect()
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    create_dir(&args.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let spec = |n| SimSpec {
        n,
        d: args.d as usize,
        variance_case: args.case,
        seed: args.seed,
    };
    let train = simulate(&spec(args.n), &mut rng)?;
    let test = simulate(&spec(args.n_test), &mut rng)?;
    train.write_csv(args.out.join("train.csv"))?;
    test.write_csv(args.out.join("test.csv"))?;
    Ok(())
}

pub fn fit_cmd(args: &FitArgs) -> Result<()> {
    let hyper = args.hyper.resolve()?;
    let mode = Mode::from(args.mode);
    let train = read_frame(&args.data.train)?;
    let test = args.data.test.as_deref().map(read_frame).transpose()?;
    let prepared = prepare(
        &train,
        test.as_ref(),
        &args.data.response,
        &hints(&args.data.categorical, &args.data.ignore),
    )?;
    let priors = hyper.resolve(&prepared.train.x, &prepared.train.y)?;
    let start = Instant::now();
    let trace = pipeline::fit(&prepared, &hyper, mode)?;
    let wall = start.elapsed().as_secs_f64();

    create_dir(&args.out)?;
    let trace_name = if args.binary { "trace.avtr" } else { "trace.csv" };
    save_trace(&trace, &args.out.join(trace_name))?;
    let scaling = &prepared.train.scaling;
    let y: Vec<f64> = prepared.train.y.iter().map(|&v| scaling.unscale_y(v)).collect();
    let rmse_train = rmse(&trace.f_mean(Rows::Train), &y)?;
    write_json(
        &args.out.join("summary.json"),
        &serde_json::json!({
            "mode": mode,
            "trace": trace_name,
            "n_train": trace.n_train,
            "n_test": trace.n_test,
            "n_draws": trace.n_draws,
            "wall_seconds": wall,
            "rmse_train": rmse_train,
            "acceptance_rates": {
                "mean": rates(&trace.acceptance.mean),
                "variance": if mode == Mode::Heteroscedastic {
                    serde_json::to_value(rates(&trace.acceptance.variance))?
                } else {
                    serde_json::Value::Null
                },
            },
            "acceptance": trace.acceptance,
            "hyperparameters": hyper,
            "priors": priors,
            "scaling": scaling,
            "columns": prepared.train.columns.iter().map(|c| &c.name).collect::<Vec<_>>(),
        }),
    )?;
    Ok(())
}

pub fn predict_cmd(args: &PredictArgs) -> Result<()> {
    let trace = Trace::load(&args.trace)?;
    let rows = match args.rows {
        RowsArg::Train => Rows::Train,
        RowsArg::Test => Rows::Test,
    };
    if trace.n_rows(rows) == 0 {
        bail!("trace holds no {:?} rows", args.rows);
    }
    let summary = summarize_rows(&trace, rows, args.alpha)?;
    let mut out = String::from("row,f_mean,f_lower,f_upper,s_median,s_lower,s_upper\n");
    for r in summary {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.row, r.f_mean, r.f_lower, r.f_upper, r.s_median, r.s_lower, r.s_upper
        ));
    }
    write_atomic(&args.out, out.as_bytes())
}

pub fn diagnose_cmd(args: &DiagnoseArgs) -> Result<serde_json::Value> {
    let trace = Trace::load(&args.trace)?;
    let homo = args.homo_trace.as_deref().map(Trace::load).transpose()?;
    let test = read_frame(&args.test)?;
    let (y, f_true) = pipeline::response_columns(&test, &args.response)?;
    let mode = match args.pit {
        PitArg::Sampled => PitMode::default(),
        PitArg::Analytic => PitMode::Analytic,
    };
    let (eval, pit) = evaluate(&trace, &y, f_true.as_deref(), mode, args.seed)?;
    let evidence = homo
        .as_ref()
        .map(|h| h_evidence(&trace, h, Rows::Test))
        .transpose()?;

    create_dir(&args.out)?;
    write_qq(&args.out.join("qq.csv"), &pit)?;
    if let Some(ev) = &evidence {
        write_h_evidence(&args.out.join("h_evidence.csv"), ev)?;
    }
    let summary = serde_json::json!({
        "mode": trace.mode,
        "n": eval.n,
        "e_stat": eval.e_stat,
        "rmse": eval.rmse,
        "rmse_f": eval.rmse_f,
        "coverage_90": eval.coverage_90,
        "overlap_fraction": evidence.as_ref().map(|e| e.overlap_fraction()),
    });
    write_json(&args.out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn cv_cmd(args: &CvArgs) -> Result<cv::CvResult> {
    let base = args.hyper.resolve()?;
    let cells = cv::grid(&args.grid)?;
    let frame = read_frame(&args.train)?;
    let result = cv::cross_validate(
        &frame,
        &args.response,
        &hints(&args.categorical, &args.ignore),
        &base,
        args.mode.into(),
        &cells,
        args.grid.folds,
    )?;
    create_dir(&args.out)?;
    cv::write_scores(&args.out.join("cv_scores.csv"), &result)?;
    let best = result.best_score().params.apply(&base);
    write_atomic(&args.out.join("best.conf"), best.to_config_string().as_bytes())?;
    Ok(result)
}

pub fn reproduce_cmd(args: &ReproduceArgs) -> Result<Vec<reproduce::Criterion>> {
    reproduce::run(args)
}

/// Sizes the global worker pool from `VORTES_THREADS` when set.
pub fn init_thread_pool() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the worker pool")
}

pub fn run(cli: &Cli) -> Result<()> {
    init_thread_pool()?;
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Diagnose(a) => {
            let summary = diagnose_cmd(a)?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Command::Cv(a) => {
            let result = cv_cmd(a)?;
            let best = result.best_score();
            println!("{}", serde_json::to_string(&serde_json::json!({ "best": best }))?);
            Ok(())
        }
        Command::Reproduce(a) => {
            let rows = reproduce_cmd(a)?;
            print!("{}", reproduce::render_table(&rows));
            Ok(())
        }
    }
}
