//! Prior hyperparameters, their calibration from data, and the tessellation
//! structure prior.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, VortesError};
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tessellation::{MoveKind, Tessellation};

/// How the reference noise scale used for calibrating the sigma prior is
/// estimated from the (scaled) training response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaEstimate {
    SampleSd,
    OlsResidual,
}

/// Every prior and sampler setting. Fields left as `None` are calibrated
/// from the training data by [`Hyperparams::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of mean tessellations.
    pub m: usize,
    /// Number of variance tessellations.
    pub m_var: usize,
    pub nu: f64,
    pub q: f64,
    pub lambda: Option<f64>,
    pub nu_var: Option<f64>,
    pub lambda_var: Option<f64>,
    /// Multiplier setting the spread of the cell-mean prior.
    pub k: f64,
    pub sigma_mu: Option<f64>,
    /// Poisson rate for the number of centers.
    pub lambda_c: f64,
    /// Poisson rate for the number of dimensions (shifted to start at 1).
    pub lambda_d: f64,
    /// Selection probabilities in [`MoveKind::ALL`] order.
    pub move_probs: [f64; 6],
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub seed: u64,
    pub sigma_estimate: SigmaEstimate,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            m: 200,
            m_var: 40,
            nu: 3.0,
            q: 0.90,
            lambda: None,
            nu_var: None,
            lambda_var: None,
            k: 3.0,
            sigma_mu: None,
            lambda_c: 2.0,
            lambda_d: 1.0,
            move_probs: MoveKind::DEFAULT_PROBS,
            n_burn: 1000,
            n_keep: 2000,
            thin: 1,
            seed: 1,
            sigma_estimate: SigmaEstimate::SampleSd,
        }
    }
}

fn bad(name: &'static str, reason: impl Into<String>) -> VortesError {
    VortesError::InvalidHyperparameter {
        name,
        reason: reason.into(),
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(bad("m", "must be at least 1"));
        }
        if self.m_var == 0 {
            return Err(bad("m_var", "must be at least 1"));
        }
        if !(self.nu > 2.0) || !self.nu.is_finite() {
            return Err(bad(
                "nu",
                "must exceed 2 so the prior mean of sigma^2 exists",
            ));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(bad("q", "must lie in (0, 1)"));
        }
        for (name, v) in [("lambda", self.lambda), ("lambda_var", self.lambda_var)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(bad(name, "must be positive"));
                }
            }
        }
        if let Some(v) = self.nu_var {
            if !(v > 2.0) || !v.is_finite() {
                return Err(bad("nu_var", "must exceed 2"));
            }
        }
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(bad("k", "must be positive"));
        }
        if let Some(s) = self.sigma_mu {
            if !(s > 0.0) || !s.is_finite() {
                return Err(bad("sigma_mu", "must be positive"));
            }
        }
        if !(self.lambda_c > 0.0) || !self.lambda_c.is_finite() {
            return Err(bad("lambda_c", "must be positive"));
        }
        if !(self.lambda_d > 0.0) || !self.lambda_d.is_finite() {
            return Err(bad("lambda_d", "must be positive"));
        }
        if self
            .move_probs
            .iter()
            .any(|&p| !(p >= 0.0) || !p.is_finite())
        {
            return Err(bad("move_probs", "entries must be non-negative"));
        }
        let total: f64 = self.move_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad("move_probs", format!("sum to {total}, not 1")));
        }
        // A move whose reverse can never be proposed would break reversibility.
        for kind in MoveKind::ALL {
            if (self.move_probs[kind.index()] > 0.0)
                != (self.move_probs[kind.reverse().index()] > 0.0)
            {
                return Err(bad(
                    "move_probs",
                    format!(
                        "{} and its reverse must both be positive or both zero",
                        kind.name()
                    ),
                ));
            }
        }
        if self.thin == 0 {
            return Err(bad("thin", "must be at least 1"));
        }
        Ok(())
    }

    /// Fills in the data-calibrated settings. `y` is the scaled training
    /// response; `x` the scaled covariates (only used for the OLS estimate).
    pub fn resolve<T: Real>(&self, x: &Matrix<T>, y: &[T]) -> Result<PriorParams> {
        self.validate()?;
        let lambda = match self.lambda {
            Some(l) => l,
            None => {
                let sigma_hat = match self.sigma_estimate {
                    SigmaEstimate::SampleSd => sample_sd(y),
                    SigmaEstimate::OlsResidual => ols_residual_sd(x, y)?,
                };
                // A constant response has no spread to calibrate against.
                let sigma_hat = if sigma_hat > 0.0 { sigma_hat } else { 1e-3 };
                calibrate_sigma_lambda(self.nu, self.q, sigma_hat)?
            }
        };
        let (nu_cal, lambda_cal) = calibrate_variance_prior(self.nu, lambda, self.m_var)?;
        Ok(PriorParams {
            nu: self.nu,
            lambda,
            nu_var: self.nu_var.unwrap_or(nu_cal),
            lambda_var: self.lambda_var.unwrap_or(lambda_cal),
            sigma_mu: self
                .sigma_mu
                .unwrap_or_else(|| sigma_mu_from_k(self.k, self.m)),
            lambda_c: self.lambda_c,
            lambda_d: self.lambda_d,
        })
    }

    /// Flat `key = value` rendering, one field per line.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        let _ = writeln!(out, "m = {}", self.m);
        let _ = writeln!(out, "m_var = {}", self.m_var);
        let _ = writeln!(out, "nu = {}", self.nu);
        let _ = writeln!(out, "q = {}", self.q);
        let _ = writeln!(out, "lambda = {}", opt(self.lambda));
        let _ = writeln!(out, "nu_var = {}", opt(self.nu_var));
        let _ = writeln!(out, "lambda_var = {}", opt(self.lambda_var));
        let _ = writeln!(out, "k = {}", self.k);
        let _ = writeln!(out, "sigma_mu = {}", opt(self.sigma_mu));
        let _ = writeln!(out, "lambda_c = {}", self.lambda_c);
        let _ = writeln!(out, "lambda_d = {}", self.lambda_d);
        let probs: Vec<String> = self.move_probs.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "move_probs = {}", probs.join(","));
        let _ = writeln!(out, "n_burn = {}", self.n_burn);
        let _ = writeln!(out, "n_keep = {}", self.n_keep);
        let _ = writeln!(out, "thin = {}", self.thin);
        let _ = writeln!(out, "seed = {}", self.seed);
        let est = match self.sigma_estimate {
            SigmaEstimate::SampleSd => "sample_sd",
            SigmaEstimate::OlsResidual => "ols_residual",
        };
        let _ = writeln!(out, "sigma_estimate = {est}");
        out
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are errors.
    pub fn apply_config_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                VortesError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| VortesError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| VortesError::Config(format!("{key}: cannot parse '{value}'")))
        }
        fn opt(key: &str, value: &str) -> Result<Option<f64>> {
            if value == "auto" {
                Ok(None)
            } else {
                num(key, value).map(Some)
            }
        }
        match key {
            "m" => self.m = num(key, value)?,
            "m_var" => self.m_var = num(key, value)?,
            "nu" => self.nu = num(key, value)?,
            "q" => self.q = num(key, value)?,
            "lambda" => self.lambda = opt(key, value)?,
            "nu_var" => self.nu_var = opt(key, value)?,
            "lambda_var" => self.lambda_var = opt(key, value)?,
            "k" => self.k = num(key, value)?,
            "sigma_mu" => self.sigma_mu = opt(key, value)?,
            "lambda_c" => self.lambda_c = num(key, value)?,
            "lambda_d" => self.lambda_d = num(key, value)?,
            "move_probs" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?;
                self.move_probs = parts.try_into().map_err(|_| {
                    VortesError::Config("move_probs: expected six comma-separated values".into())
                })?;
            }
            "n_burn" => self.n_burn = num(key, value)?,
            "n_keep" => self.n_keep = num(key, value)?,
            "thin" => self.thin = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sigma_estimate" => {
                self.sigma_estimate = match value {
                    "sample_sd" => SigmaEstimate::SampleSd,
                    "ols_residual" => SigmaEstimate::OlsResidual,
                    _ => {
                        return Err(VortesError::Config(format!(
                            "sigma_estimate: unknown value '{value}'"
                        )))
                    }
                }
            }
            _ => return Err(VortesError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn as_map(&self) -> BTreeMap<String, String> {
        self.to_config_string()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

/// Fully resolved prior constants used inside the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub nu: f64,
    pub lambda: f64,
    pub nu_var: f64,
    pub lambda_var: f64,
    pub sigma_mu: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
}

/// Quantile of the chi-square distribution, polished with Newton steps so
/// that the CDF round-trips to near machine precision.
pub fn chi2_quantile(nu: f64, p: f64) -> f64 {
    let dist = ChiSquared::new(nu).expect("nu > 0");
    let mut x = dist.inverse_cdf(p);
    for _ in 0..8 {
        let f = dist.cdf(x) - p;
        let dens = dist.pdf(x);
        if !(dens > 0.0) {
            break;
        }
        let step = f / dens;
        let next = (x - step).max(x * 0.5);
        if (next - x).abs() <= 1e-15 * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// Scale of the sigma^2 prior such that `P(sigma^2 <= sigma_hat^2) = q` under
/// `sigma^2 ~ nu * lambda / chi2_nu`.
pub fn calibrate_sigma_lambda(nu: f64, q: f64, sigma_hat: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(bad("nu", "must be positive"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(bad("q", "must lie in (0, 1)"));
    }
    if !sigma_hat.is_finite() || !(sigma_hat > 0.0) {
        return Err(bad(
            "sigma_hat",
            format!("must be positive and finite, got {sigma_hat}"),
        ));
    }
    Ok(sigma_hat * sigma_hat * chi2_quantile(nu, 1.0 - q) / nu)
}

/// Per-factor prior `(nu', lambda')` for the product of `m_var` variance
/// factors, matching the prior mean of the single-variance prior.
pub fn calibrate_variance_prior(nu: f64, lambda: f64, m_var: usize) -> Result<(f64, f64)> {
    if !(nu > 2.0) || !nu.is_finite() {
        return Err(bad("nu", "must exceed 2 so the prior mean exists"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(bad("lambda", "must be positive"));
    }
    if m_var == 0 {
        return Err(bad("m_var", "must be at least 1"));
    }
    let inv_m = 1.0 / m_var as f64;
    let lambda_var = lambda.powf(inv_m);
    // 1 - (1 - 2/nu)^(1/m) without cancellation for large m
    let denom = -f64::exp_m1(inv_m * f64::ln_1p(-2.0 / nu));
    Ok((2.0 / denom, lambda_var))
}

/// Standard deviation of the cell-mean prior for a response scaled to
/// [-0.5, 0.5] and split across `m` additive tessellations.
pub fn sigma_mu_from_k(k: f64, m: usize) -> f64 {
    0.5 / (k * (m as f64).sqrt())
}

/// Log prior of a tessellation's discrete structure: number of dimensions
/// (Poisson(`lambda_d`) shifted to start at 1, truncated at `p`), the choice
/// of covariates (uniform over subsets of that size) and the number of
/// centers (Poisson(`lambda_c`) truncated to at least 1).
///
/// Center locations are covered separately by [`log_location_prior`].
pub fn log_tess_prior<T: Real>(
    tess: &Tessellation<T>,
    p: usize,
    lambda_c: f64,
    lambda_d: f64,
) -> f64 {
    log_structure_prior(tess.dims().len(), tess.num_cells(), p, lambda_c, lambda_d)
}

/// [`log_tess_prior`] from the raw counts.
pub fn log_structure_prior(d: usize, b: usize, p: usize, lambda_c: f64, lambda_d: f64) -> f64 {
    debug_assert!(d >= 1 && d <= p && b >= 1);
    // log sum_{k=1}^{p} lambda_d^(k-1)/(k-1)!
    let log_zd = log_sum_exp((0..p).map(|j| j as f64 * lambda_d.ln() - ln_gamma(j as f64 + 1.0)));
    let log_pd = (d - 1) as f64 * lambda_d.ln() - ln_gamma(d as f64) - log_zd;
    let log_subset = -ln_binomial(p as u64, d as u64);
    // log(e^lambda - 1)
    let log_zb = lambda_c + (-f64::exp(-lambda_c)).ln_1p();
    let log_pb = b as f64 * lambda_c.ln() - ln_gamma(b as f64 + 1.0) - log_zb;
    log_pd + log_subset + log_pb
}

/// Log prior of the center locations: a uniform `b`-subset of the `n`
/// training rows.
pub fn log_location_prior(b: usize, n: usize) -> f64 {
    -ln_binomial(n as u64, b as u64)
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn sample_sd<T: Real>(y: &[T]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let mean = y.iter().map(|v| v.to_f64c()).sum::<f64>() / n as f64;
    let ss: f64 = y.iter().map(|v| (v.to_f64c() - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Residual standard deviation of an ordinary least-squares fit with
/// intercept.
pub fn ols_residual_sd<T: Real>(x: &Matrix<T>, y: &[T]) -> Result<f64> {
    let n = x.rows();
    let p = x.cols() + 1;
    if n != y.len() {
        return Err(VortesError::DimensionMismatch("x rows vs y length".into()));
    }
    if n <= p {
        // Too few rows for a residual estimate; fall back to the raw spread.
        return Ok(sample_sd(y));
    }
    let design = nalgebra::DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            1.0
        } else {
            x.get(i, j - 1).to_f64c()
        }
    });
    let target = nalgebra::DVector::from_iterator(n, y.iter().map(|v| v.to_f64c()));
    let svd = design.clone().svd(true, true);
    let beta = svd
        .solve(&target, 1e-10)
        .map_err(|e| VortesError::Data(format!("least squares failed: {e}")))?;
    let resid = target - design * beta;
    Ok((resid.norm_squared() / (n - p) as f64).sqrt())
}
