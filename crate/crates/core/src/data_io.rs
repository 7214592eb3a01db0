//! Dataset ingestion, encoding, scaling, splitting and the Friedman
//! simulator.
//!
//! Covariates are min-max scaled to [0, 1] per column and the response is
//! range-scaled to [-0.5, 0.5], always with training statistics. Predictions
//! go back to the original scale through [`Scaling`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, VortesError};
use crate::matrix::Matrix;
use crate::scalar::Real;

/// Reserved column holding the true mean in simulated files.
pub const F_TRUE_COLUMN: &str = "__f_true";
/// Reserved column holding the true noise standard deviation.
pub const S_TRUE_COLUMN: &str = "__s_true";

/// A CSV file as text cells, header first.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvFrame {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvFrame {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| VortesError::Data(format!("{}: {e}", path.display())))?;
        Self::from_reader(&mut reader)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        Self::from_reader(&mut reader)
    }

    fn from_reader<R: std::io::Read>(reader: &mut csv::Reader<R>) -> Result<Self> {
        let headers: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(VortesError::Data("CSV has no header row".into()));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            headers: self.headers.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Random row-disjoint split; the first part gets `round(fraction * n)`
    /// rows.
    pub fn split<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(Self, Self)> {
        let (a, b) = split_indices(self.len(), fraction, rng)?;
        Ok((self.select_rows(&a), self.select_rows(&b)))
    }
}

/// Shuffled indices `0..n` cut into `round(fraction * n)` and the rest.
pub fn split_indices<R: Rng + ?Sized>(
    n: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(VortesError::Data(format!(
            "split fraction {fraction} must lie in (0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = (fraction * n as f64).round() as usize;
    let rest = idx.split_off(cut);
    Ok((idx, rest))
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// How a predictor column is encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    /// One indicator per level of a categorical source column.
    Level {
        source: String,
        level: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
}

/// Hints overriding type inference for named columns.
#[derive(Debug, Clone, Default)]
pub struct SchemaHints {
    pub categorical: BTreeSet<String>,
    pub ignore: BTreeSet<String>,
}

#[derive(Debug, Clone)]
enum EncodedSource {
    Numeric { column: usize },
    Categorical { column: usize, levels: Vec<String> },
}

/// Column encoding learned from training rows. Categorical levels come from
/// the training data only; one indicator column per level.
#[derive(Debug, Clone)]
pub struct Encoder {
    response: String,
    sources: Vec<EncodedSource>,
    columns: Vec<ColumnMeta>,
}

/// Encoded, unscaled data.
#[derive(Debug, Clone)]
pub struct Table {
    pub x: Matrix<f64>,
    /// Response, when the frame has the response column.
    pub y: Option<Vec<f64>>,
    pub columns: Vec<ColumnMeta>,
    /// Reserved columns (`__f_true`, `__s_true`) carried alongside.
    pub extras: BTreeMap<String, Vec<f64>>,
}

impl Encoder {
    pub fn fit(frame: &CsvFrame, response: &str, hints: &SchemaHints) -> Result<Self> {
        if frame.is_empty() {
            return Err(VortesError::EmptyInput("training rows"));
        }
        if frame.column_index(response).is_none() {
            return Err(VortesError::Data(format!(
                "response column '{response}' not found"
            )));
        }
        let mut sources = Vec::new();
        let mut columns = Vec::new();
        for (c, name) in frame.headers.iter().enumerate() {
            if name == response
                || name == F_TRUE_COLUMN
                || name == S_TRUE_COLUMN
                || hints.ignore.contains(name)
            {
                continue;
            }
            let mut numeric = !hints.categorical.contains(name);
            for (r, row) in frame.rows.iter().enumerate() {
                let cell = &row[c];
                if is_missing(cell) {
                    return Err(VortesError::MissingValue {
                        row: r + 1,
                        column: name.clone(),
                    });
                }
                if numeric && cell.parse::<f64>().map_or(true, |v| !v.is_finite()) {
                    numeric = false;
                }
            }
            if numeric {
                sources.push(EncodedSource::Numeric { column: c });
                columns.push(ColumnMeta {
                    name: name.clone(),
                    kind: ColumnKind::Continuous,
                });
            } else {
                let levels: Vec<String> = frame
                    .rows
                    .iter()
                    .map(|row| row[c].clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                for level in &levels {
                    columns.push(ColumnMeta {
                        name: format!("{name}={level}"),
                        kind: ColumnKind::Level {
                            source: name.clone(),
                            level: level.clone(),
                        },
                    });
                }
                sources.push(EncodedSource::Categorical { column: c, levels });
            }
        }
        if columns.is_empty() {
            return Err(VortesError::Data("no predictor columns".into()));
        }
        Ok(Self {
            response: response.to_string(),
            sources,
            columns,
        })
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    /// Encodes a frame with the training layout. Columns are matched by name,
    /// so a test file may order them differently or omit the response.
    pub fn encode(&self, frame: &CsvFrame, train_headers: &[String]) -> Result<Table> {
        let lookup = |c: usize| -> Result<usize> {
            let name = &train_headers[c];
            frame
                .column_index(name)
                .ok_or_else(|| VortesError::Data(format!("column '{name}' missing")))
        };
        let n = frame.len();
        let p = self.columns.len();
        let mut x = Matrix::zeros(n, p);
        let mut out_col = 0;
        for src in &self.sources {
            match src {
                EncodedSource::Numeric { column } => {
                    let c = lookup(*column)?;
                    for (r, row) in frame.rows.iter().enumerate() {
                        let cell = &row[c];
                        if is_missing(cell) {
                            return Err(VortesError::MissingValue {
                                row: r + 1,
                                column: frame.headers[c].clone(),
                            });
                        }
                        let v: f64 = cell.parse().map_err(|_| {
                            VortesError::Data(format!(
                                "row {}, column '{}': '{cell}' is not numeric",
                                r + 1,
                                frame.headers[c]
                            ))
                        })?;
                        x.set(r, out_col, v);
                    }
                    out_col += 1;
                }
                EncodedSource::Categorical { column, levels } => {
                    let c = lookup(*column)?;
                    for (r, row) in frame.rows.iter().enumerate() {
                        let cell = &row[c];
                        if is_missing(cell) {
                            return Err(VortesError::MissingValue {
                                row: r + 1,
                                column: frame.headers[c].clone(),
                            });
                        }
                        match levels.iter().position(|l| l == cell) {
                            Some(k) => x.set(r, out_col + k, 1.0),
                            None => log::warn!(
                                "row {}: unseen level '{cell}' in column '{}', encoded as all zeros",
                                r + 1,
                                frame.headers[c]
                            ),
                        }
                    }
                    out_col += levels.len();
                }
            }
        }
        let y = match frame.column_index(&self.response) {
            Some(c) => Some(numeric_column(frame, c)?),
            None => None,
        };
        let mut extras = BTreeMap::new();
        for name in [F_TRUE_COLUMN, S_TRUE_COLUMN] {
            if let Some(c) = frame.column_index(name) {
                extras.insert(name.to_string(), numeric_column(frame, c)?);
            }
        }
        Ok(Table {
            x,
            y,
            columns: self.columns.clone(),
            extras,
        })
    }
}

fn numeric_column(frame: &CsvFrame, c: usize) -> Result<Vec<f64>> {
    frame
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let cell = &row[c];
            if is_missing(cell) {
                return Err(VortesError::MissingValue {
                    row: r + 1,
                    column: frame.headers[c].clone(),
                });
            }
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    VortesError::Data(format!(
                        "row {}, column '{}': '{cell}' is not a finite number",
                        r + 1,
                        frame.headers[c]
                    ))
                })
        })
        .collect()
}

/// Min-max scaling learned from training data.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaling {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// `y_orig = y_scale * y_scaled + y_shift`.
    pub y_shift: f64,
    pub y_scale: f64,
}

impl Scaling {
    pub fn fit(x: &Matrix<f64>, y: &[f64]) -> Result<Self> {
        if x.rows() == 0 || y.is_empty() {
            return Err(VortesError::EmptyInput("training data"));
        }
        if x.cols() == 0 {
            return Err(VortesError::Data("no covariates".into()));
        }
        let mut x_min = vec![f64::INFINITY; x.cols()];
        let mut x_max = vec![f64::NEG_INFINITY; x.cols()];
        for row in x.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                x_min[j] = x_min[j].min(v);
                x_max[j] = x_max[j].max(v);
            }
        }
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        Ok(Self {
            x_min,
            x_max,
            y_shift: 0.5 * (hi + lo),
            y_scale: if range > 0.0 { range } else { 1.0 },
        })
    }

    pub fn scale_x<T: Real>(&self, x: &Matrix<f64>) -> Result<Matrix<T>> {
        if x.cols() != self.x_min.len() {
            return Err(VortesError::DimensionMismatch(format!(
                "{} columns, scaling expects {}",
                x.cols(),
                self.x_min.len()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let range = self.x_max[j] - self.x_min[j];
                let v = if range > 0.0 {
                    (x.get(i, j) - self.x_min[j]) / range
                } else {
                    0.0
                };
                out.set(i, j, T::of(v));
            }
        }
        Ok(out)
    }

    pub fn unscale_x(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let range = self.x_max[j] - self.x_min[j];
                out.set(i, j, self.x_min[j] + x.get(i, j) * range);
            }
        }
        out
    }

    #[inline]
    pub fn scale_y(&self, y: f64) -> f64 {
        (y - self.y_shift) / self.y_scale
    }

    #[inline]
    pub fn unscale_y(&self, y: f64) -> f64 {
        self.y_scale * y + self.y_shift
    }

    /// Standard deviations scale without the shift.
    #[inline]
    pub fn unscale_sd(&self, s: f64) -> f64 {
        self.y_scale * s
    }
}

/// Scaled covariates and response ready for the sampler.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub scaling: Scaling,
    pub columns: Vec<ColumnMeta>,
}

impl<T: Real> Dataset<T> {
    /// Scales a training table with its own statistics.
    pub fn from_training(table: &Table) -> Result<Self> {
        let y = table
            .y
            .as_ref()
            .ok_or_else(|| VortesError::Data("training data has no response".into()))?;
        Self::from_raw(&table.x, y, table.columns.clone())
    }

    pub fn from_raw(x: &Matrix<f64>, y: &[f64], columns: Vec<ColumnMeta>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(VortesError::DimensionMismatch(format!(
                "{} rows but {} responses",
                x.rows(),
                y.len()
            )));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(VortesError::Data(
                "non-finite value in training data".into(),
            ));
        }
        let scaling = Scaling::fit(x, y)?;
        let xs = scaling.scale_x(x)?;
        let ys = y.iter().map(|&v| T::of(scaling.scale_y(v))).collect();
        Ok(Self {
            x: xs,
            y: ys,
            scaling,
            columns,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }
}

/// Scales held-out covariates with training statistics. Values outside
/// [0, 1] are kept as they are.
pub fn apply_scaling<T: Real>(x: &Matrix<f64>, train: &Scaling) -> Result<Matrix<T>> {
    if !x.is_finite() {
        return Err(VortesError::Data(
            "non-finite value in test covariates".into(),
        ));
    }
    train.scale_x(x)
}

/// Reads and encodes a whole CSV file, learning the encoding from all rows.
pub fn load_csv(
    path: impl AsRef<Path>,
    response: &str,
    hints: &SchemaHints,
) -> Result<(Table, Encoder)> {
    let frame = CsvFrame::read(path)?;
    let encoder = Encoder::fit(&frame, response, hints)?;
    let table = encoder.encode(&frame, &frame.headers)?;
    Ok((table, encoder))
}

/// Friedman mean function; uses the first five entries of `x`.
pub fn friedman_f(x: &[f64]) -> f64 {
    10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5).powi(2)
        + 10.0 * x[3]
        + 5.0 * x[4]
}

/// Noise standard deviation of the three simulation cases.
///
/// Case 3 uses `20 x4` rather than the mean function's `10 x4`, as in the
/// published case list.
pub fn friedman_s(x: &[f64], case: u8) -> f64 {
    match case {
        1 => 1.0,
        2 => 5.0 * x[0] + 2.0 * x[1],
        3 => {
            0.5 * (10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                + 20.0 * (x[2] - 0.5).powi(2)
                + 20.0 * x[3]
                + 5.0 * x[4])
        }
        _ => panic!("variance case must be 1, 2 or 3"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimSpec {
    pub n: usize,
    pub d: usize,
    pub variance_case: u8,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < 5 {
            return Err(VortesError::Data(format!(
                "d = {} but the Friedman function needs at least 5 covariates",
                self.d
            )));
        }
        if !(1..=3).contains(&self.variance_case) {
            return Err(VortesError::Data(format!(
                "variance case {} is not one of 1, 2, 3",
                self.variance_case
            )));
        }
        Ok(())
    }
}

/// Simulated data on the original scale, with the truth attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub x: Matrix<f64>,
    pub y: Vec<f64>,
    pub f_true: Vec<f64>,
    pub s_true: Vec<f64>,
}

pub fn simulate<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SimData> {
    spec.validate()?;
    let mut data = Vec::with_capacity(spec.n * spec.d);
    let mut y = Vec::with_capacity(spec.n);
    let mut f_true = Vec::with_capacity(spec.n);
    let mut s_true = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = (0..spec.d).map(|_| rng.random::<f64>()).collect();
        let f = friedman_f(&row);
        let s = friedman_s(&row, spec.variance_case);
        let z: f64 = StandardNormal.sample(rng);
        y.push(f + s * z);
        f_true.push(f);
        s_true.push(s);
        data.extend(row);
    }
    Ok(SimData {
        x: Matrix::from_vec(spec.n, spec.d, data)?,
        y,
        f_true,
        s_true,
    })
}

impl SimData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn columns(&self) -> Vec<ColumnMeta> {
        (1..=self.x.cols())
            .map(|j| ColumnMeta {
                name: format!("x{j}"),
                kind: ColumnKind::Continuous,
            })
            .collect()
    }

    /// Writes `x1..xd, y, __f_true, __s_true`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.columns().into_iter().map(|c| c.name).collect();
        header.extend(["y".to_string(), F_TRUE_COLUMN.into(), S_TRUE_COLUMN.into()]);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            rec.push(self.f_true[i].to_string());
            rec.push(self.s_true[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
