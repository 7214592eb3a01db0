//! Sum-of-tessellations mean model.
//!
//! Each cell output has a `N(0, sigma_mu^2)` prior and the observations in a
//! cell are Gaussian with known, observation-specific variances `s^2(x_i)`,
//! so the cell means integrate out in closed form. Everything a cell needs is
//! the pair `W = sum 1/s^2` and `S = sum R/s^2` over its members.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, VortesError};
use crate::matrix::Matrix;
use crate::scalar::{CompensatedSum, Real};
use crate::tessellation::{Assignment, Role, Tessellation};

#[derive(Debug, Clone, PartialEq)]
pub struct MeanEnsemble<T> {
    tessellations: Vec<Tessellation<T>>,
}

impl<T: Real> MeanEnsemble<T> {
    pub fn new(tessellations: Vec<Tessellation<T>>) -> Result<Self> {
        if tessellations.is_empty() {
            return Err(VortesError::EmptyInput("mean ensemble"));
        }
        for t in &tessellations {
            t.validate_role(Role::Mean)?;
        }
        Ok(Self { tessellations })
    }

    pub fn len(&self) -> usize {
        self.tessellations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tessellations.is_empty()
    }

    pub fn tessellations(&self) -> &[Tessellation<T>] {
        &self.tessellations
    }

    pub fn get(&self, j: usize) -> &Tessellation<T> {
        &self.tessellations[j]
    }

    pub fn replace(&mut self, j: usize, tess: Tessellation<T>) {
        self.tessellations[j] = tess;
    }

    /// `f(x)`: sum of the per-tessellation outputs.
    pub fn predict_mean(&self, x: &[T]) -> T {
        self.tessellations
            .iter()
            .fold(T::zero(), |acc, t| acc + t.evaluate(x))
    }

    pub fn predict_all(&self, x: &Matrix<T>) -> Vec<T> {
        x.iter_rows().map(|row| self.predict_mean(row)).collect()
    }
}

/// `R_j`: the response minus every tessellation's fit except the `j`-th.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialResiduals<T> {
    pub values: Vec<T>,
    pub excluded_index: usize,
}

/// Partial residuals from a cached full fit, `y - fit + g_j(x)`.
pub fn partial_residuals<T: Real>(
    y: &[T],
    ens: &MeanEnsemble<T>,
    j: usize,
    x: &Matrix<T>,
    cached_fit: &[T],
) -> Result<PartialResiduals<T>> {
    if y.len() != x.rows() || cached_fit.len() != x.rows() {
        return Err(VortesError::DimensionMismatch(
            "y, cached fit and covariates must have one entry per row".into(),
        ));
    }
    let tess = ens.get(j);
    let values = x
        .iter_rows()
        .zip(y.iter().zip(cached_fit))
        .map(|(row, (&yi, &fi))| yi - fi + tess.evaluate(row))
        .collect();
    Ok(PartialResiduals {
        values,
        excluded_index: j,
    })
}

/// Sufficient statistics of one mean cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanCellStats<T> {
    /// Sum of precisions `1/s^2`.
    pub w: T,
    /// Precision-weighted residual sum `R/s^2`.
    pub s: T,
    pub n: usize,
}

impl<T: Real> MeanCellStats<T> {
    pub fn from_cell(residuals: &[T], s2: &[T]) -> Result<Self> {
        if residuals.len() != s2.len() {
            return Err(VortesError::DimensionMismatch(
                "residuals and variances differ in length".into(),
            ));
        }
        let mut w = CompensatedSum::new();
        let mut s = CompensatedSum::new();
        for (i, (&r, &v)) in residuals.iter().zip(s2).enumerate() {
            if !(v > T::zero()) {
                return Err(VortesError::NonPositiveVariance {
                    index: i,
                    value: v.to_f64c(),
                });
            }
            let prec = T::one() / v;
            w.add(prec);
            s.add(r * prec);
        }
        Ok(Self {
            w: w.value(),
            s: s.value(),
            n: residuals.len(),
        })
    }

    /// Log integrated likelihood up to structure-independent terms:
    /// `-1/2 log(sigma_mu^2 W + 1) + sigma_mu^2 S^2 / (2 (sigma_mu^2 W + 1))`.
    pub fn marginal_loglik(&self, sigma_mu: f64) -> f64 {
        let v = sigma_mu * sigma_mu;
        let w = self.w.to_f64c();
        let s = self.s.to_f64c();
        let a = v * w + 1.0;
        -0.5 * a.ln() + v * s * s / (2.0 * a)
    }

    /// Mean and variance of the full conditional of the cell output.
    pub fn posterior(&self, sigma_mu: f64) -> (f64, f64) {
        let prec = 1.0 / (sigma_mu * sigma_mu) + self.w.to_f64c();
        (self.s.to_f64c() / prec, 1.0 / prec)
    }

    pub fn draw<R: Rng + ?Sized>(&self, sigma_mu: f64, rng: &mut R) -> T {
        let (mean, var) = self.posterior(sigma_mu);
        let z: f64 = StandardNormal.sample(rng);
        T::of(mean + var.sqrt() * z)
    }
}

/// Per-cell statistics for all cells of an assignment.
pub fn mean_cell_stats<T: Real>(
    assignment: &Assignment,
    residuals: &[T],
    s2: &[T],
) -> Vec<MeanCellStats<T>> {
    let b = assignment.counts.len();
    let mut w = vec![CompensatedSum::<T>::new(); b];
    let mut s = vec![CompensatedSum::<T>::new(); b];
    for ((&cell, &r), &v) in assignment.cells.iter().zip(residuals).zip(s2) {
        let prec = T::one() / v;
        w[cell as usize].add(prec);
        s[cell as usize].add(r * prec);
    }
    (0..b)
        .map(|k| MeanCellStats {
            w: w[k].value(),
            s: s[k].value(),
            n: assignment.counts[k] as usize,
        })
        .collect()
}

pub fn mean_cell_marginal_loglik<T: Real>(
    residuals_in_cell: &[T],
    s2_at_obs: &[T],
    sigma_mu: f64,
) -> Result<f64> {
    Ok(MeanCellStats::from_cell(residuals_in_cell, s2_at_obs)?.marginal_loglik(sigma_mu))
}

pub fn draw_cell_mean<T: Real, R: Rng + ?Sized>(
    residuals_in_cell: &[T],
    s2_at_obs: &[T],
    sigma_mu: f64,
    rng: &mut R,
) -> Result<T> {
    Ok(MeanCellStats::from_cell(residuals_in_cell, s2_at_obs)?.draw(sigma_mu, rng))
}
