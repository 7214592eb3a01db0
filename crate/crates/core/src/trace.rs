//! Posterior draws kept by the sampler, and their on-disk formats.
//!
//! Both formats share one column layout, named by a single header line:
//!
//! ```text
//! draw, [sigma], f_train_0.., f_test_0.., [s_train_0.., s_test_0..],
//! mean_b_0.., mean_d_0.., mean_acc_0.., [var_b_0.., var_d_0.., var_acc_0..]
//! ```
//!
//! `sigma` is present only for homoscedastic traces and the `s_*`/`var_*`
//! blocks only for heteroscedastic ones. All f and s values are on the
//! original response scale. The text form writes one comma-separated row per
//! draw using the shortest round-tripping decimal for each double. The
//! binary form is `b"AVTR"`, a version byte, the header line as a
//! length-prefixed (u32 LE) UTF-8 string, the draw count (u32 LE), then the
//! row-major values as f64 LE.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VortesError};
use crate::tessellation::MoveKind;

pub const BINARY_MAGIC: &[u8; 4] = b"AVTR";
pub const BINARY_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Homoscedastic,
    Heteroscedastic,
}

impl std::str::FromStr for Mode {
    type Err = VortesError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homoscedastic" | "homo" => Ok(Mode::Homoscedastic),
            "heteroscedastic" | "hetero" => Ok(Mode::Heteroscedastic),
            _ => Err(VortesError::Config(format!("unknown mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Homoscedastic => "homoscedastic",
            Mode::Heteroscedastic => "heteroscedastic",
        })
    }
}

/// Proposal and acceptance counts per move kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: [u64; 6],
    pub accepted: [u64; 6],
    pub infeasible: [u64; 6],
}

impl MoveStats {
    pub fn record(&mut self, kind: MoveKind, feasible: bool, accepted: bool) {
        let k = kind.index();
        self.proposed[k] += 1;
        if !feasible {
            self.infeasible[k] += 1;
        }
        if accepted {
            self.accepted[k] += 1;
        }
    }

    pub fn rate(&self, kind: MoveKind) -> Option<f64> {
        let k = kind.index();
        (self.proposed[k] > 0).then(|| self.accepted[k] as f64 / self.proposed[k] as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub mean: MoveStats,
    pub variance: MoveStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub mode: Mode,
    pub n_train: usize,
    pub n_test: usize,
    /// Number of mean tessellations.
    pub m: usize,
    /// Number of variance tessellations; 0 for homoscedastic traces.
    pub m_var: usize,
    pub n_draws: usize,
    pub seed: u64,
    pub f_train: Vec<f64>,
    pub f_test: Vec<f64>,
    pub s_train: Vec<f64>,
    pub s_test: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mean_cells: Vec<u32>,
    pub mean_dims: Vec<u32>,
    pub mean_accepted: Vec<bool>,
    pub var_cells: Vec<u32>,
    pub var_dims: Vec<u32>,
    pub var_accepted: Vec<bool>,
    /// Post-burn-in move statistics.
    pub acceptance: Acceptance,
}

/// Which observation set a per-row query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rows {
    Train,
    Test,
}

impl Trace {
    pub fn empty(
        mode: Mode,
        n_train: usize,
        n_test: usize,
        m: usize,
        m_var: usize,
        seed: u64,
    ) -> Self {
        Self {
            mode,
            n_train,
            n_test,
            m,
            m_var: if mode == Mode::Homoscedastic {
                0
            } else {
                m_var
            },
            n_draws: 0,
            seed,
            f_train: Vec::new(),
            f_test: Vec::new(),
            s_train: Vec::new(),
            s_test: Vec::new(),
            sigma: Vec::new(),
            mean_cells: Vec::new(),
            mean_dims: Vec::new(),
            mean_accepted: Vec::new(),
            var_cells: Vec::new(),
            var_dims: Vec::new(),
            var_accepted: Vec::new(),
            acceptance: Acceptance::default(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_draws == 0
    }

    pub fn n_rows(&self, rows: Rows) -> usize {
        match rows {
            Rows::Train => self.n_train,
            Rows::Test => self.n_test,
        }
    }

    /// Posterior draw `k` of f at observation `i`.
    pub fn f(&self, rows: Rows, k: usize, i: usize) -> f64 {
        match rows {
            Rows::Train => self.f_train[k * self.n_train + i],
            Rows::Test => self.f_test[k * self.n_test + i],
        }
    }

    /// Posterior draw `k` of the noise standard deviation at observation `i`.
    pub fn s(&self, rows: Rows, k: usize, i: usize) -> f64 {
        match self.mode {
            Mode::Homoscedastic => self.sigma[k],
            Mode::Heteroscedastic => match rows {
                Rows::Train => self.s_train[k * self.n_train + i],
                Rows::Test => self.s_test[k * self.n_test + i],
            },
        }
    }

    /// All draws of f at observation `i`.
    pub fn f_draws(&self, rows: Rows, i: usize) -> Vec<f64> {
        (0..self.n_draws).map(|k| self.f(rows, k, i)).collect()
    }

    pub fn s_draws(&self, rows: Rows, i: usize) -> Vec<f64> {
        (0..self.n_draws).map(|k| self.s(rows, k, i)).collect()
    }

    /// Posterior mean of f per observation.
    pub fn f_mean(&self, rows: Rows) -> Vec<f64> {
        let n = self.n_rows(rows);
        let mut out = vec![0.0; n];
        for k in 0..self.n_draws {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.f(rows, k, i);
            }
        }
        let denom = self.n_draws.max(1) as f64;
        out.iter_mut().for_each(|v| *v /= denom);
        out
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut cols = vec!["draw".to_string()];
        if self.mode == Mode::Homoscedastic {
            cols.push("sigma".into());
        }
        cols.extend((0..self.n_train).map(|i| format!("f_train_{i}")));
        cols.extend((0..self.n_test).map(|i| format!("f_test_{i}")));
        if self.mode == Mode::Heteroscedastic {
            cols.extend((0..self.n_train).map(|i| format!("s_train_{i}")));
            cols.extend((0..self.n_test).map(|i| format!("s_test_{i}")));
        }
        for (prefix, count) in [("mean", self.m), ("var", self.m_var)] {
            cols.extend((0..count).map(|j| format!("{prefix}_b_{j}")));
            cols.extend((0..count).map(|j| format!("{prefix}_d_{j}")));
            cols.extend((0..count).map(|j| format!("{prefix}_acc_{j}")));
        }
        cols
    }

    fn row_values(&self, k: usize) -> Vec<f64> {
        let mut row = vec![k as f64];
        if self.mode == Mode::Homoscedastic {
            row.push(self.sigma[k]);
        }
        row.extend_from_slice(&self.f_train[k * self.n_train..(k + 1) * self.n_train]);
        row.extend_from_slice(&self.f_test[k * self.n_test..(k + 1) * self.n_test]);
        if self.mode == Mode::Heteroscedastic {
            row.extend_from_slice(&self.s_train[k * self.n_train..(k + 1) * self.n_train]);
            row.extend_from_slice(&self.s_test[k * self.n_test..(k + 1) * self.n_test]);
        }
        let blocks = [
            (
                self.m,
                &self.mean_cells,
                &self.mean_dims,
                &self.mean_accepted,
            ),
            (
                self.m_var,
                &self.var_cells,
                &self.var_dims,
                &self.var_accepted,
            ),
        ];
        for (count, cells, dims, acc) in blocks {
            let r = k * count..(k + 1) * count;
            row.extend(cells[r.clone()].iter().map(|&v| v as f64));
            row.extend(dims[r.clone()].iter().map(|&v| v as f64));
            row.extend(acc[r].iter().map(|&v| if v { 1.0 } else { 0.0 }));
        }
        row
    }

    pub fn write_text<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "{}", self.column_names().join(","))?;
        let mut line = String::new();
        for k in 0..self.n_draws {
            line.clear();
            for (c, v) in self.row_values(k).iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&[BINARY_VERSION])?;
        let header = self.column_names().join(",");
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&(self.n_draws as u32).to_le_bytes())?;
        for k in 0..self.n_draws {
            for v in self.row_values(k) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the binary form for `.avtr` paths and text otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)?;
        if path.extension().is_some_and(|e| e == "avtr") {
            self.write_binary(file)
        } else {
            self.write_text(file)
        }
    }

    /// Reads either format, detected from the magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path.as_ref())?.read_to_end(&mut bytes)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(&bytes)
        } else {
            Self::read_text(BufReader::new(bytes.as_slice()))
        }
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| VortesError::TraceFormat("empty trace file".into()))??;
        let names: Vec<&str> = header.split(',').collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| VortesError::TraceFormat(format!("line {}: {e}", lineno + 2)))?;
            rows.push(values);
        }
        Self::from_columns(&names, &rows)
    }

    pub fn read_binary(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| VortesError::TraceFormat(m.to_string());
        if bytes.len() < 9 || &bytes[..4] != BINARY_MAGIC {
            return Err(err("missing AVTR magic"));
        }
        if bytes[4] != BINARY_VERSION {
            return Err(VortesError::TraceFormat(format!(
                "unsupported binary trace version {}",
                bytes[4]
            )));
        }
        let u32_at = |off: usize| -> Result<usize> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| err("truncated trace"))
        };
        let hlen = u32_at(5)?;
        let header = bytes
            .get(9..9 + hlen)
            .ok_or_else(|| err("truncated header"))?;
        let header = std::str::from_utf8(header).map_err(|_| err("header is not UTF-8"))?;
        let names: Vec<&str> = header.split(',').collect();
        let n_draws = u32_at(9 + hlen)?;
        let body = &bytes[13 + hlen..];
        let width = names.len();
        if body.len() != n_draws * width * 8 {
            return Err(err("body size does not match header"));
        }
        let rows: Vec<Vec<f64>> = body
            .chunks_exact(width * 8)
            .map(|row| {
                row.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        Self::from_columns(&names, &rows)
    }

    fn from_columns(names: &[&str], rows: &[Vec<f64>]) -> Result<Self> {
        let count = |prefix: &str| names.iter().filter(|n| n.starts_with(prefix)).count();
        let homo = names.contains(&"sigma");
        let mode = if homo {
            Mode::Homoscedastic
        } else {
            Mode::Heteroscedastic
        };
        let n_train = count("f_train_");
        let n_test = count("f_test_");
        let m = count("mean_b_");
        let m_var = count("var_b_");
        let mut trace = Trace::empty(mode, n_train, n_test, m, m_var, 0);
        let expected = trace.column_names();
        if expected.len() != names.len() || expected.iter().zip(names).any(|(a, b)| a != b) {
            return Err(VortesError::TraceFormat(
                "column header does not follow the trace layout".into(),
            ));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(VortesError::TraceFormat(format!(
                    "draw {k} has {} values, header has {}",
                    row.len(),
                    names.len()
                )));
            }
            let mut it = row.iter().copied().skip(1);
            let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<f64>>();
            if homo {
                trace.sigma.extend(take(1));
            }
            trace.f_train.extend(take(n_train));
            trace.f_test.extend(take(n_test));
            if !homo {
                trace.s_train.extend(take(n_train));
                trace.s_test.extend(take(n_test));
            }
            trace
                .mean_cells
                .extend(take(m).into_iter().map(|v| v as u32));
            trace
                .mean_dims
                .extend(take(m).into_iter().map(|v| v as u32));
            trace
                .mean_accepted
                .extend(take(m).into_iter().map(|v| v != 0.0));
            trace
                .var_cells
                .extend(take(m_var).into_iter().map(|v| v as u32));
            trace
                .var_dims
                .extend(take(m_var).into_iter().map(|v| v as u32));
            trace
                .var_accepted
                .extend(take(m_var).into_iter().map(|v| v != 0.0));
        }
        trace.n_draws = rows.len();
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mode: Mode) -> Trace {
        let mut t = Trace::empty(mode, 2, 1, 2, 1, 5);
        for k in 0..3 {
            let kf = k as f64;
            t.f_train.extend([0.1 + kf, -2.5e-7]);
            t.f_test.push(1.0 / 3.0 + kf);
            match mode {
                Mode::Homoscedastic => t.sigma.push(0.7 + kf),
                Mode::Heteroscedastic => {
                    t.s_train.extend([1.5, 2.0 + kf]);
                    t.s_test.push(std::f64::consts::PI);
                    t.var_cells.push(2);
                    t.var_dims.push(1);
                    t.var_accepted.push(k % 2 == 0);
                }
            }
            t.mean_cells.extend([1, 3]);
            t.mean_dims.extend([1, 2]);
            t.mean_accepted.extend([true, false]);
            t.n_draws += 1;
        }
        t
    }

    #[test]
    fn text_and_binary_roundtrip() {
        for mode in [Mode::Homoscedastic, Mode::Heteroscedastic] {
            let t = sample(mode);
            let mut text = Vec::new();
            t.write_text(&mut text).unwrap();
            let back = Trace::read_text(BufReader::new(text.as_slice())).unwrap();
            let expected = Trace {
                seed: 0,
                ..t.clone()
            };
            assert_eq!(back, expected);
            let mut bin = Vec::new();
            t.write_binary(&mut bin).unwrap();
            assert_eq!(&bin[..4], b"AVTR");
            assert_eq!(bin[4], 1);
            assert_eq!(Trace::read_binary(&bin).unwrap(), expected);
        }
    }

    #[test]
    fn homoscedastic_layout_has_sigma_and_no_s() {
        let cols = sample(Mode::Homoscedastic).column_names();
        assert!(cols.contains(&"sigma".to_string()));
        assert!(!cols.iter().any(|c| c.starts_with("s_")));
        let cols = sample(Mode::Heteroscedastic).column_names();
        assert!(!cols.contains(&"sigma".to_string()));
        assert!(cols.contains(&"s_test_0".to_string()));
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Trace::read_binary(b"NOPE").is_err());
        let mut bin = Vec::new();
        sample(Mode::Heteroscedastic)
            .write_binary(&mut bin)
            .unwrap();
        bin.truncate(bin.len() - 3);
        assert!(Trace::read_binary(&bin).is_err());
        let text = "draw,f_train_0,bogus\n0,1,2\n";
        assert!(Trace::read_text(BufReader::new(text.as_bytes())).is_err());
    }

    #[test]
    fn accessors_follow_mode() {
        let h = sample(Mode::Homoscedastic);
        assert_eq!(h.s(Rows::Test, 2, 0), 2.7);
        assert_eq!(h.f_draws(Rows::Train, 0), vec![0.1, 1.1, 2.1]);
        let v = sample(Mode::Heteroscedastic);
        assert_eq!(v.s_draws(Rows::Train, 1), vec![2.0, 3.0, 4.0]);
        assert_eq!(v.f_mean(Rows::Test)[0], 1.0 / 3.0 + 1.0);
    }
}
