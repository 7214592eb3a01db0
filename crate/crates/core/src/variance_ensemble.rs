//! Product-of-tessellations variance model.
//!
//! Cell outputs are variance factors with a scaled-inverse-chi-squared
//! `(nu', lambda')` prior. Given the mean fit and all other factors, the
//! observations in a cell are `N(0, s^2_cell)` after dividing the squared
//! residual by the leave-one-out product, so a cell only needs its count and
//! the sum of those scaled squared residuals.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, VortesError};
use crate::matrix::Matrix;
use crate::scalar::{CompensatedSum, Real};
use crate::tessellation::{Assignment, Role, Tessellation};

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEnsemble<T> {
    tessellations: Vec<Tessellation<T>>,
}

impl<T: Real> VarianceEnsemble<T> {
    pub fn new(tessellations: Vec<Tessellation<T>>) -> Result<Self> {
        if tessellations.is_empty() {
            return Err(VortesError::EmptyInput("variance ensemble"));
        }
        for t in &tessellations {
            t.validate_role(Role::Variance)?;
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

    pub fn get(&self, l: usize) -> &Tessellation<T> {
        &self.tessellations[l]
    }

    pub fn replace(&mut self, l: usize, tess: Tessellation<T>) -> Result<()> {
        tess.validate_role(Role::Variance)?;
        self.tessellations[l] = tess;
        Ok(())
    }

    /// `s^2(x)`: product of the per-tessellation factors.
    pub fn predict_variance(&self, x: &[T]) -> T {
        self.tessellations
            .iter()
            .fold(T::one(), |acc, t| acc * t.evaluate(x))
    }

    pub fn predict_all(&self, x: &Matrix<T>) -> Vec<T> {
        x.iter_rows()
            .map(|row| self.predict_variance(row))
            .collect()
    }
}

/// Squared residuals scaled by the leave-one-out variance product.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledResiduals<T> {
    pub values: Vec<T>,
    pub excluded_index: usize,
}

/// `e_i^2 = (y_i - f_i)^2 * h_l(x_i) / s^2(x_i)`.
pub fn scaled_sq_residuals<T: Real>(
    y: &[T],
    mean_fit: &[T],
    var_ens: &VarianceEnsemble<T>,
    l: usize,
    x: &Matrix<T>,
    cached_s2: &[T],
) -> Result<ScaledResiduals<T>> {
    let n = x.rows();
    if y.len() != n || mean_fit.len() != n || cached_s2.len() != n {
        return Err(VortesError::DimensionMismatch(
            "y, mean fit, cached variance and covariates must align".into(),
        ));
    }
    let tess = var_ens.get(l);
    let mut values = Vec::with_capacity(n);
    for (i, row) in x.iter_rows().enumerate() {
        let s2 = cached_s2[i];
        if !(s2 > T::zero()) {
            return Err(VortesError::NonPositiveVariance {
                index: i,
                value: s2.to_f64c(),
            });
        }
        let r = y[i] - mean_fit[i];
        values.push(r * r * tess.evaluate(row) / s2);
    }
    Ok(ScaledResiduals {
        values,
        excluded_index: l,
    })
}

/// Sufficient statistics of one variance cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct VarianceCellStats<T> {
    pub sum_e2: T,
    pub n: usize,
}

fn check_prior(nu_var: f64, lambda_var: f64) -> Result<()> {
    if !(nu_var > 0.0) || !nu_var.is_finite() {
        return Err(VortesError::InvalidHyperparameter {
            name: "nu_var",
            reason: format!("must be positive, got {nu_var}"),
        });
    }
    if !(lambda_var > 0.0) || !lambda_var.is_finite() {
        return Err(VortesError::InvalidHyperparameter {
            name: "lambda_var",
            reason: format!("must be positive, got {lambda_var}"),
        });
    }
    Ok(())
}

impl<T: Real> VarianceCellStats<T> {
    pub fn from_cell(e2: &[T]) -> Result<Self> {
        if let Some((i, v)) = e2.iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
            return Err(VortesError::Data(format!(
                "scaled squared residual {v} at {i} is negative or NaN"
            )));
        }
        Ok(Self {
            sum_e2: e2.iter().copied().collect::<CompensatedSum<T>>().value(),
            n: e2.len(),
        })
    }

    /// Log of the integrated likelihood, including the per-cell prior
    /// normalization (the number of cells changes across proposals):
    ///
    /// `lnG((nu'+n)/2) - lnG(nu'/2) + (nu'/2) ln(nu' lambda') - (n/2) ln(pi)
    ///  - ((nu'+n)/2) ln(nu' lambda' + sum e^2)`.
    pub fn marginal_loglik(&self, nu_var: f64, lambda_var: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        let base = nu_var * lambda_var;
        ln_gamma(0.5 * (nu_var + n)) - ln_gamma(0.5 * nu_var) + 0.5 * nu_var * base.ln()
            - 0.5 * n * std::f64::consts::PI.ln()
            - 0.5 * (nu_var + n) * (base + self.sum_e2.to_f64c()).ln()
    }

    /// Degrees of freedom and scale of the scaled-inverse-chi-squared full
    /// conditional.
    pub fn posterior(&self, nu_var: f64, lambda_var: f64) -> (f64, f64) {
        let dof = nu_var + self.n as f64;
        (dof, (nu_var * lambda_var + self.sum_e2.to_f64c()) / dof)
    }

    pub fn draw<R: Rng + ?Sized>(&self, nu_var: f64, lambda_var: f64, rng: &mut R) -> T {
        let (dof, scale) = self.posterior(nu_var, lambda_var);
        T::of(draw_scaled_inv_chi2(dof, scale, rng))
    }
}

/// One draw of `dof * scale / chi2_dof`.
pub fn draw_scaled_inv_chi2<R: Rng + ?Sized>(dof: f64, scale: f64, rng: &mut R) -> f64 {
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    loop {
        let c: f64 = chi.sample(rng);
        // a zero chi-square draw would give an infinite variance
        if c > 0.0 {
            let v = dof * scale / c;
            if v.is_finite() && v > 0.0 {
                return v;
            }
        }
    }
}

pub fn variance_cell_stats<T: Real>(
    assignment: &Assignment,
    e2: &[T],
) -> Vec<VarianceCellStats<T>> {
    let b = assignment.counts.len();
    let mut sums = vec![CompensatedSum::<T>::new(); b];
    for (&cell, &v) in assignment.cells.iter().zip(e2) {
        sums[cell as usize].add(v);
    }
    (0..b)
        .map(|k| VarianceCellStats {
            sum_e2: sums[k].value(),
            n: assignment.counts[k] as usize,
        })
        .collect()
}

pub fn variance_cell_marginal_loglik<T: Real>(
    e2_in_cell: &[T],
    nu_var: f64,
    lambda_var: f64,
) -> Result<f64> {
    check_prior(nu_var, lambda_var)?;
    Ok(VarianceCellStats::from_cell(e2_in_cell)?.marginal_loglik(nu_var, lambda_var))
}

pub fn draw_cell_variance<T: Real, R: Rng + ?Sized>(
    e2_in_cell: &[T],
    nu_var: f64,
    lambda_var: f64,
    rng: &mut R,
) -> Result<T> {
    check_prior(nu_var, lambda_var)?;
    Ok(VarianceCellStats::from_cell(e2_in_cell)?.draw(nu_var, lambda_var, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(out: f64) -> Tessellation<f64> {
        Tessellation::new(vec![0], vec![vec![0.5]], vec![out]).unwrap()
    }

    #[test]
    fn scaled_residual_examples() {
        let x = Matrix::from_vec(2, 1, vec![0.1, 0.8]).unwrap();
        let y = [3.0, -1.0];
        let f = [1.0, 0.5];
        let ens = VarianceEnsemble::new(vec![single(2.5)]).unwrap();
        let s2 = ens.predict_all(&x);
        let e = scaled_sq_residuals(&y, &f, &ens, 0, &x, &s2).unwrap();
        assert_relative_eq!(e.values[0], 4.0);
        assert_relative_eq!(e.values[1], 2.25);

        let x1 = Matrix::from_vec(1, 1, vec![0.4]).unwrap();
        let ens = VarianceEnsemble::new(vec![single(4.0), single(1.0)]).unwrap();
        let s2 = ens.predict_all(&x1);
        let e = scaled_sq_residuals(&[2.0], &[0.0], &ens, 0, &x1, &s2).unwrap();
        assert_relative_eq!(e.values[0], 4.0);

        let ones = VarianceEnsemble::new(vec![single(1.0), single(1.0)]).unwrap();
        let s2 = ones.predict_all(&x);
        for l in 0..2 {
            let e = scaled_sq_residuals(&y, &f, &ones, l, &x, &s2).unwrap();
            assert_eq!(e.values, vec![4.0, 2.25]);
        }
        assert!(scaled_sq_residuals(&y, &f, &ones, 0, &x, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(
            variance_cell_marginal_loglik::<f64>(&[], 3.0, 0.5).unwrap(),
            0.0
        );
        let v = variance_cell_marginal_loglik(&[1.0], 2.0, 1.0).unwrap();
        assert_relative_eq!(v, -1.647_912, epsilon = 1e-5);
        let mut last = f64::INFINITY;
        for big in [1.0, 10.0, 100.0, 1e4, 1e8] {
            let v = variance_cell_marginal_loglik(&[big, 0.0], 4.0, 1.0).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(variance_cell_marginal_loglik(&[1.0], 0.0, 1.0).is_err());
        assert!(variance_cell_marginal_loglik(&[1.0], 2.0, -1.0).is_err());
    }

    #[test]
    fn posterior_examples() {
        let empty = VarianceCellStats::<f64>::from_cell(&[]).unwrap();
        assert_eq!(empty.posterior(5.0, 0.7), (5.0, 0.7));
        let two = VarianceCellStats::from_cell(&[2.0, 2.0]).unwrap();
        let (dof, scale) = two.posterior(4.0, 1.0);
        assert_eq!(dof, 6.0);
        assert_relative_eq!(scale, 8.0 / 6.0);
    }

    #[test]
    fn large_cells_concentrate_at_mean_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = 2.5;
        let e2: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                v * z * z
            })
            .collect();
        let draw: f64 = draw_cell_variance(&e2, 50.0, 1.0, &mut rng).unwrap();
        assert!((draw - v).abs() / v < 0.05, "{draw}");
    }

    #[test]
    fn predict_variance_products() {
        let ones = VarianceEnsemble::new(vec![single(1.0), single(1.0)]).unwrap();
        assert_eq!(ones.predict_variance(&[0.3]), 1.0);
        let ens = VarianceEnsemble::new(vec![single(2.0), single(3.0)]).unwrap();
        assert_eq!(ens.predict_variance(&[0.3]), 6.0);
        assert!(VarianceEnsemble::new(vec![single(0.0)]).is_err());
    }

    #[test]
    fn predict_variance_matches_manual_product_and_leave_one_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Matrix::from_vec(25, 3, (0..75).map(|_| rng.random()).collect()).unwrap();
        let tess: Vec<_> = (0..3)
            .map(|j| {
                Tessellation::anchored(vec![j], vec![j, j + 4], &x, vec![0.5 + j as f64, 1.7])
                    .unwrap()
            })
            .collect();
        let ens = VarianceEnsemble::new(tess.clone()).unwrap();
        for row in x.iter_rows() {
            let manual: f64 = tess.iter().map(|t| t.evaluate(row)).product();
            let s2 = ens.predict_variance(row);
            assert_relative_eq!(s2, manual, max_relative = 1e-14);
            for l in 0..3 {
                let loo: f64 = (0..3)
                    .filter(|&q| q != l)
                    .map(|q| tess[q].evaluate(row))
                    .product();
                assert!((tess[l].evaluate(row) * loo - s2).abs() <= 1e-10 * s2);
            }
        }
    }
}
