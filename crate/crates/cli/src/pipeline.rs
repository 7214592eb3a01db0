//! Encoding, fitting and scoring shared by the subcommands.

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vortes::data_io::{apply_scaling, CsvFrame, Encoder, SchemaHints, Table, F_TRUE_COLUMN};
use vortes::diagnostics::{
    e_stat_uniformity, pit_values, posterior_interval, rmse, PitMode, PitVector,
};
use vortes::{run_mcmc, Dataset, Hyperparams, Matrix, Mode, Rows, Trace};

/// Seed offset of the predictive draws used for PIT values, so they never
/// share a stream with the sampler.
pub const PIT_SEED_OFFSET: u64 = 0x5049_5400;

pub struct Prepared {
    pub train: Dataset<f64>,
    pub test: Option<Table>,
    pub test_x: Option<Matrix<f64>>,
}

pub fn hints(categorical: &[String], ignore: &[String]) -> SchemaHints {
    SchemaHints {
        categorical: categorical.iter().cloned().collect(),
        ignore: ignore.iter().cloned().collect(),
    }
}

/// Learns the encoding and scaling from `train` and applies both to `test`.
pub fn prepare(
    train: &CsvFrame,
    test: Option<&CsvFrame>,
    response: &str,
    hints: &SchemaHints,
) -> Result<Prepared> {
    let encoder = Encoder::fit(train, response, hints)?;
    let table = encoder.encode(train, &train.headers)?;
    let dataset = Dataset::<f64>::from_training(&table)?;
    let test = test
        .map(|frame| encoder.encode(frame, &train.headers))
        .transpose()?;
    let test_x = test
        .as_ref()
        .map(|t| apply_scaling::<f64>(&t.x, &dataset.scaling))
        .transpose()?;
    Ok(Prepared {
        train: dataset,
        test,
        test_x,
    })
}

pub fn fit(prepared: &Prepared, hyper: &Hyperparams, mode: Mode) -> Result<Trace> {
    Ok(run_mcmc(
        &prepared.train,
        prepared.test_x.as_ref(),
        hyper,
        mode,
    )?)
}

/// Held-out accuracy and calibration of a trace.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub n: usize,
    pub e_stat: f64,
    pub rmse: f64,
    /// Against the noiseless truth, when the data carry it.
    pub rmse_f: Option<f64>,
    /// Share of responses inside the central 90% predictive interval.
    pub coverage_90: f64,
}

pub fn pit(trace: &Trace, y: &[f64], mode: PitMode, seed: u64) -> Result<PitVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(PIT_SEED_OFFSET));
    Ok(pit_values(trace, Rows::Test, y, mode, &mut rng)?)
}

pub fn evaluate(
    trace: &Trace,
    y: &[f64],
    f_true: Option<&[f64]>,
    mode: PitMode,
    seed: u64,
) -> Result<(Evaluation, PitVector)> {
    if trace.n_test == 0 {
        bail!("trace holds no test predictions; fit with --test");
    }
    if trace.n_test != y.len() {
        bail!(
            "observation count mismatch: trace has {} test rows, data has {}",
            trace.n_test,
            y.len()
        );
    }
    let pit = pit(trace, y, mode, seed)?;
    let f_mean = trace.f_mean(Rows::Test);
    let inside = pit.values.iter().filter(|&&u| (0.05..=0.95).contains(&u)).count();
    let eval = Evaluation {
        n: y.len(),
        e_stat: e_stat_uniformity(&pit)?,
        rmse: rmse(&f_mean, y)?,
        rmse_f: f_true.map(|f| rmse(&f_mean, f)).transpose()?,
        coverage_90: inside as f64 / y.len() as f64,
    };
    Ok((eval, pit))
}

/// Response and optional truth column of a CSV frame.
pub fn response_columns(frame: &CsvFrame, response: &str) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let parse = |name: &str, col: usize| -> Result<Vec<f64>> {
        frame
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let cell = row[col].trim();
                let v: f64 = cell
                    .parse()
                    .with_context(|| format!("row {}: column {name} is not numeric: {cell:?}", i + 1))?;
                if !v.is_finite() {
                    bail!("row {}: column {name} is not finite", i + 1);
                }
                Ok(v)
            })
            .collect()
    };
    let col = frame
        .column_index(response)
        .with_context(|| format!("response column {response:?} not found"))?;
    let y = parse(response, col)?;
    let f = frame
        .column_index(F_TRUE_COLUMN)
        .map(|c| parse(F_TRUE_COLUMN, c))
        .transpose()?;
    Ok((y, f))
}

/// Per-row posterior summary on the original response scale.
#[derive(Debug, Clone, Serialize)]
pub struct RowSummary {
    pub row: usize,
    pub f_mean: f64,
    pub f_lower: f64,
    pub f_upper: f64,
    pub s_median: f64,
    pub s_lower: f64,
    pub s_upper: f64,
}

pub fn summarize_rows(trace: &Trace, rows: Rows, alpha: f64) -> Result<Vec<RowSummary>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!("alpha must lie in (0, 1), got {alpha}");
    }
    if trace.is_empty() {
        bail!("trace has no draws");
    }
    let f_mean = trace.f_mean(rows);
    (0..trace.n_rows(rows))
        .map(|i| {
            let f = trace.f_draws(rows, i);
            let s = trace.s_draws(rows, i);
            let (f_lower, f_upper) = posterior_interval(&f, alpha)?;
            let (s_lower, s_upper) = posterior_interval(&s, alpha)?;
            Ok(RowSummary {
                row: i,
                f_mean: f_mean[i],
                f_lower,
                f_upper,
                s_median: vortes::diagnostics::quantile(&s, 0.5)?,
                s_lower,
                s_upper,
            })
        })
        .collect()
}
