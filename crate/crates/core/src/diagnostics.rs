//! Calibration and accuracy metrics computed from traces.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, VortesError};
use crate::scalar::CompensatedSum;
use crate::trace::{Mode, Rows, Trace};

fn check_sample(v: &[f64], what: &'static str) -> Result<()> {
    if v.is_empty() {
        return Err(VortesError::EmptyInput(what));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(VortesError::Data(format!(
            "{what} contains a non-finite value"
        )));
    }
    Ok(())
}

/// `sum_i sum_j |a_i - b_j|` for sorted `b` with prefix sums `prefix`.
fn cross_sum(a: &[f64], b_sorted: &[f64], prefix: &[f64]) -> f64 {
    let total = prefix[b_sorted.len()];
    let mut acc = CompensatedSum::new();
    for &x in a {
        let k = b_sorted.partition_point(|&v| v < x);
        let below = k as f64 * x - prefix[k];
        let above = (total - prefix[k]) - (b_sorted.len() - k) as f64 * x;
        acc.add(below + above);
    }
    acc.value()
}

fn sorted_with_prefix(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(s.len() + 1);
    let mut acc = CompensatedSum::new();
    prefix.push(0.0);
    for &x in &s {
        acc.add(x);
        prefix.push(acc.value());
    }
    (s, prefix)
}

fn combine(cross: f64, within_u: f64, within_v: f64, n1: usize, n2: usize) -> f64 {
    let (n1, n2) = (n1 as f64, n2 as f64);
    2.0 * cross / (n1 * n2) - (within_u / (n1 * n1) + within_v / (n2 * n2))
}

/// Energy distance between two univariate samples:
/// `2/(n1 n2) sum|U_i - V_j| - 1/n1^2 sum|U_i - U_j| - 1/n2^2 sum|V_i - V_j|`.
///
/// Evaluated in O(n log n) with sorted prefix sums. Exactly symmetric and
/// exactly zero for identical samples.
pub fn e_statistic(u: &[f64], v: &[f64]) -> Result<f64> {
    check_sample(u, "first sample")?;
    check_sample(v, "second sample")?;
    let (us, up) = sorted_with_prefix(u);
    let (vs, vp) = sorted_with_prefix(v);
    let cross = 0.5 * (cross_sum(&us, &vs, &vp) + cross_sum(&vs, &us, &up));
    let within_u = cross_sum(&us, &us, &up);
    let within_v = cross_sum(&vs, &vs, &vp);
    Ok(combine(cross, within_u, within_v, u.len(), v.len()))
}

/// Direct O(n1 n2 + n1^2 + n2^2) evaluation of [`e_statistic`].
pub fn e_statistic_naive(u: &[f64], v: &[f64]) -> Result<f64> {
    check_sample(u, "first sample")?;
    check_sample(v, "second sample")?;
    let pairs = |a: &[f64], b: &[f64]| -> f64 {
        let mut acc = CompensatedSum::new();
        for &x in a {
            for &y in b {
                acc.add((x - y).abs());
            }
        }
        acc.value()
    };
    let cross = 0.5 * (pairs(u, v) + pairs(v, u));
    Ok(combine(cross, pairs(u, u), pairs(v, v), u.len(), v.len()))
}

/// Energy distance between samples of vectors under the Euclidean norm.
pub fn e_statistic_multi(u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(VortesError::EmptyInput("sample"));
    }
    let d = u[0].len();
    if u.iter().chain(v).any(|x| x.len() != d) {
        return Err(VortesError::DimensionMismatch(
            "sample vectors differ in length".into(),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let pairs = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut acc = CompensatedSum::new();
        for x in a {
            for y in b {
                acc.add(dist(x, y));
            }
        }
        acc.value()
    };
    let cross = 0.5 * (pairs(u, v) + pairs(v, u));
    Ok(combine(cross, pairs(u, u), pairs(v, v), u.len(), v.len()))
}

/// Predictive percentiles of observed responses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PitVector {
    pub values: Vec<f64>,
}

impl PitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VortesError::Data(format!("PIT value {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PitMode {
    /// `per_draw` predictive draws per kept posterior draw, ranked against
    /// the observation: `(#{y* <= y} + 0.5) / (K + 1)`.
    Sampled { per_draw: usize },
    /// Average predictive CDF at the observation.
    Analytic,
}

impl Default for PitMode {
    fn default() -> Self {
        PitMode::Sampled { per_draw: 1 }
    }
}

pub fn pit_values<R: Rng + ?Sized>(
    trace: &Trace,
    rows: Rows,
    y: &[f64],
    mode: PitMode,
    rng: &mut R,
) -> Result<PitVector> {
    if trace.is_empty() {
        return Err(VortesError::EmptyInput("trace"));
    }
    if y.len() != trace.n_rows(rows) {
        return Err(VortesError::DimensionMismatch(format!(
            "{} responses for {} trace rows",
            y.len(),
            trace.n_rows(rows)
        )));
    }
    let std_normal = Normal::standard();
    let values = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| match mode {
            PitMode::Analytic => {
                let mut acc = CompensatedSum::new();
                for k in 0..trace.n_draws {
                    let z = (yi - trace.f(rows, k, i)) / trace.s(rows, k, i);
                    acc.add(std_normal.cdf(z));
                }
                acc.value() / trace.n_draws as f64
            }
            PitMode::Sampled { per_draw } => {
                let per_draw = per_draw.max(1);
                let mut below = 0usize;
                for k in 0..trace.n_draws {
                    let (f, s) = (trace.f(rows, k, i), trace.s(rows, k, i));
                    for _ in 0..per_draw {
                        let z: f64 = StandardNormal.sample(rng);
                        if f + s * z <= yi {
                            below += 1;
                        }
                    }
                }
                let total = trace.n_draws * per_draw;
                (below as f64 + 0.5) / (total as f64 + 1.0)
            }
        })
        .collect();
    PitVector::new(values)
}

/// `(j - 0.5) / n` for `j = 1..n`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|j| (j as f64 - 0.5) / n as f64).collect()
}

/// `(uniform quantile, sorted PIT)` pairs.
pub fn qq_data(pit: &PitVector) -> Vec<(f64, f64)> {
    let mut sorted = pit.values.clone();
    sorted.sort_by(f64::total_cmp);
    uniform_grid(sorted.len()).into_iter().zip(sorted).collect()
}

/// Energy distance of the PIT sample from the uniform mid-grid.
pub fn e_stat_uniformity(pit: &PitVector) -> Result<f64> {
    e_statistic(&pit.values, &uniform_grid(pit.len()))
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(VortesError::EmptyInput("predictions"));
    }
    if pred.len() != truth.len() {
        return Err(VortesError::DimensionMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let sse: CompensatedSum<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .collect();
    Ok((sse.value() / pred.len() as f64).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `(n - 1) p` in the sorted sample, zero-based).
pub fn quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(VortesError::EmptyInput("samples"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&s, p))
}

fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Central `1 - alpha` interval: the `alpha/2` and `1 - alpha/2` quantiles.
pub fn posterior_interval(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(VortesError::InvalidHyperparameter {
            name: "alpha",
            reason: format!("must lie in (0, 1), got {alpha}"),
        });
    }
    if samples.is_empty() {
        return Err(VortesError::EmptyInput("samples"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&s, alpha / 2.0),
        quantile_sorted(&s, 1.0 - alpha / 2.0),
    ))
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(VortesError::DimensionMismatch(
            "need two equal-length samples of size >= 2".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HEvidenceRow {
    /// Observation index in the trace.
    pub index: usize,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-observation 90% intervals of `s(x)`, sorted by median, against the
/// homoscedastic sigma.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HEvidenceData {
    pub rows: Vec<HEvidenceRow>,
    pub sigma_median: f64,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
}

impl HEvidenceData {
    /// Fraction of rows whose interval contains the reference sigma.
    pub fn overlap_fraction(&self) -> f64 {
        let hits = self
            .rows
            .iter()
            .filter(|r| r.lower <= self.sigma_median && self.sigma_median <= r.upper)
            .count();
        hits as f64 / self.rows.len().max(1) as f64
    }
}

pub fn h_evidence(trace: &Trace, homoscedastic: &Trace, rows: Rows) -> Result<HEvidenceData> {
    if trace.is_empty() || homoscedastic.is_empty() {
        return Err(VortesError::EmptyInput("trace"));
    }
    if homoscedastic.mode != Mode::Homoscedastic {
        return Err(VortesError::Config(
            "reference trace is not homoscedastic".into(),
        ));
    }
    let n = trace.n_rows(rows);
    if n != homoscedastic.n_rows(rows) {
        return Err(VortesError::DimensionMismatch(format!(
            "traces cover {} and {} observations",
            n,
            homoscedastic.n_rows(rows)
        )));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = trace.s_draws(rows, i);
        s.sort_by(f64::total_cmp);
        out.push(HEvidenceRow {
            index: i,
            median: quantile_sorted(&s, 0.5),
            lower: quantile_sorted(&s, 0.05),
            upper: quantile_sorted(&s, 0.95),
        });
    }
    out.sort_by(|a, b| a.median.total_cmp(&b.median).then(a.index.cmp(&b.index)));
    let mut sigma = homoscedastic.sigma.clone();
    sigma.sort_by(f64::total_cmp);
    Ok(HEvidenceData {
        rows: out,
        sigma_median: quantile_sorted(&sigma, 0.5),
        sigma_lower: quantile_sorted(&sigma, 0.05),
        sigma_upper: quantile_sorted(&sigma, 0.95),
    })
}

/// Posterior median of `s(x_i)` per observation.
pub fn s_median(trace: &Trace, rows: Rows) -> Vec<f64> {
    (0..trace.n_rows(rows))
        .map(|i| {
            let mut s = trace.s_draws(rows, i);
            s.sort_by(f64::total_cmp);
            quantile_sorted(&s, 0.5)
        })
        .collect()
}
