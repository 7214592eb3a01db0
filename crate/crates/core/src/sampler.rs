//! Metropolis-within-Gibbs sampler for the mean and variance ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{Dataset, Scaling};
use crate::error::{Result, VortesError};
use crate::matrix::Matrix;
use crate::mean_ensemble::{mean_cell_stats, MeanCellStats, MeanEnsemble};
use crate::priors::{log_location_prior, log_tess_prior, Hyperparams, PriorParams};
use crate::scalar::Real;
use crate::tessellation::{propose_move_with, Assignment, MoveKind, Role, Tessellation};
use crate::trace::{Acceptance, Mode, MoveStats, Trace};
use crate::variance_ensemble::{draw_scaled_inv_chi2, variance_cell_stats, VarianceEnsemble};

/// Knobs that are not part of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    /// When false the variance tessellations keep their initial structure
    /// and only their outputs are redrawn.
    pub update_variance_structure: bool,
    /// Recompute the cached fits from scratch every this many iterations and
    /// fail if they drifted; 0 disables the check.
    pub audit_every: usize,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            update_variance_structure: true,
            audit_every: 0,
        }
    }
}

/// Tolerance of the cache audit, relative to the magnitude of the values.
pub const CACHE_TOLERANCE: f64 = 1e-8;

/// Everything that changes from one iteration to the next.
#[derive(Debug, Clone)]
pub struct SamplerState<T> {
    pub mean: MeanEnsemble<T>,
    pub variance: Option<VarianceEnsemble<T>>,
    /// Noise variance of the homoscedastic model, on the scaled response.
    pub sigma2: f64,
    /// `f(x_i)` for every training row.
    pub cached_f: Vec<T>,
    /// `s^2(x_i)` for every training row.
    pub cached_s2: Vec<T>,
    pub iteration: usize,
    mean_assign: Vec<Assignment>,
    var_assign: Vec<Assignment>,
    mean_test: Vec<Vec<u32>>,
    var_test: Vec<Vec<u32>>,
    mean_accepted: Vec<bool>,
    var_accepted: Vec<bool>,
}

/// The fixed parts of a run: data, resolved priors and options.
pub struct Sampler<'a, T> {
    pub x: &'a Matrix<T>,
    pub y: &'a [T],
    pub test_x: Option<&'a Matrix<T>>,
    pub priors: PriorParams,
    pub move_probs: [f64; 6],
    pub mode: Mode,
    pub m: usize,
    pub m_var: usize,
    pub options: SamplerOptions,
}

/// Result of one Metropolis-Hastings structure step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub kind: MoveKind,
    pub feasible: bool,
    pub accepted: bool,
}

fn first_bad<T: Real>(v: &[T]) -> Option<usize> {
    v.iter().position(|x| !x.is_finite())
}

impl<'a, T: Real> Sampler<'a, T> {
    pub fn new(
        x: &'a Matrix<T>,
        y: &'a [T],
        test_x: Option<&'a Matrix<T>>,
        hyper: &Hyperparams,
        mode: Mode,
    ) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(VortesError::EmptyInput("training covariates"));
        }
        if y.len() != x.rows() {
            return Err(VortesError::DimensionMismatch(format!(
                "{} rows but {} responses",
                x.rows(),
                y.len()
            )));
        }
        if let Some(t) = test_x {
            if t.cols() != x.cols() {
                return Err(VortesError::DimensionMismatch(format!(
                    "test data has {} columns, training data {}",
                    t.cols(),
                    x.cols()
                )));
            }
        }
        let priors = hyper.resolve(x, y)?;
        Ok(Self {
            x,
            y,
            test_x,
            priors,
            move_probs: hyper.move_probs,
            mode,
            m: hyper.m,
            m_var: hyper.m_var,
            options: SamplerOptions::default(),
        })
    }

    pub fn with_options(mut self, options: SamplerOptions) -> Self {
        self.options = options;
        self
    }

    fn n(&self) -> usize {
        self.x.rows()
    }

    fn test_cells(&self, tess: &Tessellation<T>) -> Vec<u32> {
        self.test_x
            .map(|t| {
                t.iter_rows()
                    .map(|r| tess.assign_cell(r).0 as u32)
                    .collect()
            })
            .unwrap_or_default()
    }

    fn single_cell<R: Rng + ?Sized>(&self, output: T, rng: &mut R) -> Result<Tessellation<T>> {
        let covariate = rng.random_range(0..self.x.cols());
        let row = rng.random_range(0..self.n());
        Tessellation::anchored(vec![covariate], vec![row], self.x, vec![output])
    }

    /// Starting point: single-cell tessellations on one random covariate,
    /// mean outputs zero and variance factors `lambda'` so that the initial
    /// variance is `lambda`.
    pub fn init_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SamplerState<T>> {
        let n = self.n();
        let mut mean = Vec::with_capacity(self.m);
        for _ in 0..self.m {
            mean.push(self.single_cell(T::zero(), rng)?);
        }
        let (variance, sigma2) = match self.mode {
            Mode::Homoscedastic => (None, self.priors.lambda),
            Mode::Heteroscedastic => {
                let mut var = Vec::with_capacity(self.m_var);
                for _ in 0..self.m_var {
                    var.push(self.single_cell(T::of(self.priors.lambda_var), rng)?);
                }
                (Some(VarianceEnsemble::new(var)?), self.priors.lambda)
            }
        };
        let mean = MeanEnsemble::new(mean)?;
        let mean_assign: Vec<_> = mean
            .tessellations()
            .iter()
            .map(|t| t.assign_all(self.x))
            .collect();
        let mean_test = mean
            .tessellations()
            .iter()
            .map(|t| self.test_cells(t))
            .collect();
        let (var_assign, var_test) = match &variance {
            Some(v) => (
                v.tessellations()
                    .iter()
                    .map(|t| t.assign_all(self.x))
                    .collect(),
                v.tessellations()
                    .iter()
                    .map(|t| self.test_cells(t))
                    .collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let mut state = SamplerState {
            mean,
            variance,
            sigma2,
            cached_f: vec![T::zero(); n],
            cached_s2: vec![T::of(sigma2); n],
            iteration: 0,
            mean_accepted: vec![false; mean_assign.len()],
            var_accepted: vec![false; var_assign.len()],
            mean_assign,
            var_assign,
            mean_test,
            var_test,
        };
        self.refresh_caches(&mut state);
        Ok(state)
    }

    /// Recomputes the cached fits from the stored assignments.
    pub fn refresh_caches(&self, state: &mut SamplerState<T>) {
        let n = self.n();
        let mut f = vec![T::zero(); n];
        for (tess, a) in state.mean.tessellations().iter().zip(&state.mean_assign) {
            let out = tess.outputs();
            for (fi, &c) in f.iter_mut().zip(&a.cells) {
                *fi = *fi + out[c as usize];
            }
        }
        state.cached_f = f;
        state.cached_s2 = match &state.variance {
            None => vec![T::of(state.sigma2); n],
            Some(v) => {
                let mut s2 = vec![T::one(); n];
                for (tess, a) in v.tessellations().iter().zip(&state.var_assign) {
                    let out = tess.outputs();
                    for (si, &c) in s2.iter_mut().zip(&a.cells) {
                        *si = *si * out[c as usize];
                    }
                }
                s2
            }
        };
    }

    /// Largest relative difference between the caches and a from-scratch
    /// evaluation of both ensembles.
    pub fn cache_drift(&self, state: &SamplerState<T>) -> f64 {
        let f = state.mean.predict_all(self.x);
        let s2 = match &state.variance {
            Some(v) => v.predict_all(self.x),
            None => vec![T::of(state.sigma2); self.n()],
        };
        let rel = |a: T, b: T| {
            let (a, b) = (a.to_f64c(), b.to_f64c());
            (a - b).abs() / a.abs().max(b.abs()).max(1.0)
        };
        let df = f.iter().zip(&state.cached_f).map(|(&a, &b)| rel(a, b));
        let ds = s2.iter().zip(&state.cached_s2).map(|(&a, &b)| rel(a, b));
        df.chain(ds).fold(0.0, f64::max)
    }

    fn log_acceptance(
        &self,
        current: &Tessellation<T>,
        candidate: &Tessellation<T>,
        ll_current: f64,
        ll_candidate: f64,
        log_proposal_ratio: f64,
        kind: MoveKind,
    ) -> f64 {
        let p = self.x.cols();
        let n = self.n();
        let pr = &self.priors;
        let prior = log_tess_prior(candidate, p, pr.lambda_c, pr.lambda_d)
            - log_tess_prior(current, p, pr.lambda_c, pr.lambda_d);
        let location = log_location_prior(candidate.num_cells(), n)
            - log_location_prior(current.num_cells(), n);
        let kind_ratio =
            (self.move_probs[kind.reverse().index()] / self.move_probs[kind.index()]).ln();
        ll_candidate - ll_current + prior + location + log_proposal_ratio + kind_ratio
    }

    fn accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
        log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha
    }

    /// One structure step plus the output redraw for tessellation `which`.
    pub fn mh_update_tessellation<R: Rng + ?Sized>(
        &self,
        state: &mut SamplerState<T>,
        which: (Role, usize),
        rng: &mut R,
    ) -> Result<StepOutcome> {
        match which.0 {
            Role::Mean => self.update_mean(state, which.1, rng),
            Role::Variance => self.update_variance(state, which.1, rng),
        }
    }

    fn nonfinite(&self, what: &str, state: &SamplerState<T>) -> VortesError {
        VortesError::NonFinite {
            what: what.to_string(),
            iteration: state.iteration,
        }
    }

    fn update_mean<R: Rng + ?Sized>(
        &self,
        state: &mut SamplerState<T>,
        j: usize,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let sigma_mu = self.priors.sigma_mu;
        let current = state.mean.get(j);
        let assign = &state.mean_assign[j];
        let out = current.outputs();
        let residuals: Vec<T> = (0..self.n())
            .map(|i| self.y[i] - state.cached_f[i] + out[assign.cells[i] as usize])
            .collect();
        let s2 = &state.cached_s2;

        let kind = MoveKind::sample(&self.move_probs, rng);
        let proposal = propose_move_with(current, assign, kind, self.x, rng)?;
        let mut feasible = false;
        let mut accepted = false;
        let mut stats = None;
        if let Some(prop) = proposal.filter(|p| !p.assignment.has_empty_cell()) {
            feasible = true;
            let cur_stats = mean_cell_stats(assign, &residuals, s2);
            let cand_stats = mean_cell_stats(&prop.assignment, &residuals, s2);
            let ll = |st: &[MeanCellStats<T>]| {
                st.iter().map(|c| c.marginal_loglik(sigma_mu)).sum::<f64>()
            };
            let log_alpha = self.log_acceptance(
                current,
                &prop.candidate,
                ll(&cur_stats),
                ll(&cand_stats),
                prop.log_proposal_ratio,
                kind,
            );
            if log_alpha.is_nan() {
                return Err(self.nonfinite("mean acceptance ratio", state));
            }
            if Self::accept(log_alpha, rng) {
                accepted = true;
                let test = self.test_cells(&prop.candidate);
                state.mean.replace(j, prop.candidate);
                state.mean_assign[j] = prop.assignment;
                state.mean_test[j] = test;
                stats = Some(cand_stats);
            } else {
                stats = Some(cur_stats);
            }
        }
        let stats = match stats {
            Some(s) => s,
            None => mean_cell_stats(&state.mean_assign[j], &residuals, s2),
        };

        let outputs: Vec<T> = stats.iter().map(|c| c.draw(sigma_mu, rng)).collect();
        if let Some(k) = first_bad(&outputs) {
            return Err(self.nonfinite(&format!("mean output {k} of tessellation {j}"), state));
        }
        for (i, &c) in state.mean_assign[j].cells.iter().enumerate() {
            state.cached_f[i] = self.y[i] - residuals[i] + outputs[c as usize];
        }
        let mut tess = state.mean.get(j).clone();
        tess.set_outputs(outputs)?;
        state.mean.replace(j, tess);
        state.mean_accepted[j] = accepted;
        Ok(StepOutcome {
            kind,
            feasible,
            accepted,
        })
    }

    fn update_variance<R: Rng + ?Sized>(
        &self,
        state: &mut SamplerState<T>,
        l: usize,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let (nu_v, lambda_v) = (self.priors.nu_var, self.priors.lambda_var);
        let var = state.variance.as_ref().ok_or_else(|| {
            VortesError::Config("no variance ensemble in homoscedastic mode".into())
        })?;
        let current = var.get(l);
        let assign = &state.var_assign[l];
        let out = current.outputs();
        // s^2 without this tessellation's factor.
        let loo: Vec<T> = (0..self.n())
            .map(|i| state.cached_s2[i] / out[assign.cells[i] as usize])
            .collect();
        let e2: Vec<T> = (0..self.n())
            .map(|i| {
                let r = self.y[i] - state.cached_f[i];
                r * r / loo[i]
            })
            .collect();

        let mut kind = MoveKind::MoveCenter;
        let mut feasible = false;
        let mut accepted = false;
        let mut stats = None;
        if self.options.update_variance_structure {
            kind = MoveKind::sample(&self.move_probs, rng);
            let proposal = propose_move_with(current, assign, kind, self.x, rng)?;
            if let Some(prop) = proposal.filter(|p| !p.assignment.has_empty_cell()) {
                feasible = true;
                let cur_stats = variance_cell_stats(assign, &e2);
                let cand_stats = variance_cell_stats(&prop.assignment, &e2);
                let ll = |st: &[crate::variance_ensemble::VarianceCellStats<T>]| {
                    st.iter()
                        .map(|c| c.marginal_loglik(nu_v, lambda_v))
                        .sum::<f64>()
                };
                let log_alpha = self.log_acceptance(
                    current,
                    &prop.candidate,
                    ll(&cur_stats),
                    ll(&cand_stats),
                    prop.log_proposal_ratio,
                    kind,
                );
                if log_alpha.is_nan() {
                    return Err(self.nonfinite("variance acceptance ratio", state));
                }
                if Self::accept(log_alpha, rng) {
                    accepted = true;
                    let test = self.test_cells(&prop.candidate);
                    let mut cand = prop.candidate;
                    // New cells come out of `apply` with output zero; give
                    // them a valid placeholder before validation.
                    let placeholder = vec![T::one(); cand.num_cells()];
                    cand.set_outputs(placeholder)?;
                    state.variance.as_mut().unwrap().replace(l, cand)?;
                    state.var_assign[l] = prop.assignment;
                    state.var_test[l] = test;
                    stats = Some(cand_stats);
                } else {
                    stats = Some(cur_stats);
                }
            }
        }
        let stats = match stats {
            Some(s) => s,
            None => variance_cell_stats(&state.var_assign[l], &e2),
        };

        let outputs: Vec<T> = stats.iter().map(|c| c.draw(nu_v, lambda_v, rng)).collect();
        if let Some(k) = outputs
            .iter()
            .position(|v| !(v.is_finite() && *v > T::zero()))
        {
            return Err(self.nonfinite(&format!("variance output {k} of tessellation {l}"), state));
        }
        for (i, &c) in state.var_assign[l].cells.iter().enumerate() {
            state.cached_s2[i] = loo[i] * outputs[c as usize];
        }
        let var = state.variance.as_mut().unwrap();
        let mut tess = var.get(l).clone();
        tess.set_outputs(outputs)?;
        var.replace(l, tess)?;
        state.var_accepted[l] = accepted;
        Ok(StepOutcome {
            kind,
            feasible,
            accepted,
        })
    }

    /// Conjugate draw of the homoscedastic noise variance.
    pub fn draw_sigma2<R: Rng + ?Sized>(
        &self,
        state: &mut SamplerState<T>,
        rng: &mut R,
    ) -> Result<()> {
        let ssr: f64 = crate::scalar::csum(
            self.y
                .iter()
                .zip(&state.cached_f)
                .map(|(&y, &f)| (y - f) * (y - f)),
        )
        .to_f64c();
        let dof = self.priors.nu + self.n() as f64;
        let scale = (self.priors.nu * self.priors.lambda + ssr) / dof;
        if !scale.is_finite() {
            return Err(self.nonfinite("noise variance scale", state));
        }
        state.sigma2 = draw_scaled_inv_chi2(dof, scale, rng);
        state
            .cached_s2
            .iter_mut()
            .for_each(|v| *v = T::of(state.sigma2));
        Ok(())
    }

    /// One full sweep: every mean tessellation, then every variance
    /// tessellation (or the noise variance). Move statistics go to `stats`
    /// when given.
    pub fn gibbs_iteration<R: Rng + ?Sized>(
        &self,
        state: &mut SamplerState<T>,
        rng: &mut R,
        mut stats: Option<&mut Acceptance>,
    ) -> Result<()> {
        for j in 0..self.m {
            let o = self.update_mean(state, j, rng)?;
            if let Some(s) = stats.as_deref_mut() {
                s.mean.record(o.kind, o.feasible, o.accepted);
            }
        }
        match self.mode {
            Mode::Homoscedastic => self.draw_sigma2(state, rng)?,
            Mode::Heteroscedastic => {
                for l in 0..self.m_var {
                    let o = self.update_variance(state, l, rng)?;
                    if let (Some(s), true) =
                        (stats.as_deref_mut(), self.options.update_variance_structure)
                    {
                        s.variance.record(o.kind, o.feasible, o.accepted);
                    }
                }
            }
        }
        state.iteration += 1;
        if self.options.audit_every > 0 && state.iteration.is_multiple_of(self.options.audit_every) {
            let drift = self.cache_drift(state);
            if !(drift <= CACHE_TOLERANCE) {
                return Err(VortesError::CacheDrift(format!(
                    "drift {drift:e} at iteration {}",
                    state.iteration
                )));
            }
        }
        self.refresh_caches(state);
        if let Some(i) = first_bad(&state.cached_f) {
            return Err(self.nonfinite(&format!("fitted mean at row {i}"), state));
        }
        Ok(())
    }

    /// Fitted f and s^2 at the test rows.
    pub fn test_predictions(&self, state: &SamplerState<T>) -> (Vec<T>, Vec<T>) {
        let n = self.test_x.map_or(0, |t| t.rows());
        let mut f = vec![T::zero(); n];
        for (tess, cells) in state.mean.tessellations().iter().zip(&state.mean_test) {
            let out = tess.outputs();
            for (fi, &c) in f.iter_mut().zip(cells) {
                *fi = *fi + out[c as usize];
            }
        }
        let s2 = match &state.variance {
            None => vec![T::of(state.sigma2); n],
            Some(v) => {
                let mut s2 = vec![T::one(); n];
                for (tess, cells) in v.tessellations().iter().zip(&state.var_test) {
                    let out = tess.outputs();
                    for (si, &c) in s2.iter_mut().zip(cells) {
                        *si = *si * out[c as usize];
                    }
                }
                s2
            }
        };
        (f, s2)
    }

    fn record(&self, state: &SamplerState<T>, scaling: &Scaling, trace: &mut Trace) {
        let sd = |v: T| scaling.unscale_sd(v.to_f64c().sqrt());
        trace.f_train.extend(
            state
                .cached_f
                .iter()
                .map(|&v| scaling.unscale_y(v.to_f64c())),
        );
        let (f_test, s2_test) = self.test_predictions(state);
        trace
            .f_test
            .extend(f_test.iter().map(|&v| scaling.unscale_y(v.to_f64c())));
        match self.mode {
            Mode::Homoscedastic => trace.sigma.push(scaling.unscale_sd(state.sigma2.sqrt())),
            Mode::Heteroscedastic => {
                trace.s_train.extend(state.cached_s2.iter().map(|&v| sd(v)));
                trace.s_test.extend(s2_test.iter().map(|&v| sd(v)));
            }
        }
        for t in state.mean.tessellations() {
            trace.mean_cells.push(t.num_cells() as u32);
            trace.mean_dims.push(t.dims().len() as u32);
        }
        trace.mean_accepted.extend_from_slice(&state.mean_accepted);
        if let Some(v) = &state.variance {
            for t in v.tessellations() {
                trace.var_cells.push(t.num_cells() as u32);
                trace.var_dims.push(t.dims().len() as u32);
            }
            trace.var_accepted.extend_from_slice(&state.var_accepted);
        }
        trace.n_draws += 1;
    }
}

fn warn_on_stuck_moves(role: &str, stats: &MoveStats) {
    for kind in MoveKind::ALL {
        let k = kind.index();
        if stats.proposed[k] >= 1000 {
            let rate = stats.accepted[k] as f64 / stats.proposed[k] as f64;
            if rate == 0.0 || rate == 1.0 {
                log::warn!(
                    "{role} {} acceptance rate is {rate} over {} proposals",
                    kind.name(),
                    stats.proposed[k]
                );
            }
        }
    }
}

/// Runs one chain and returns the kept draws on the original scale.
pub fn run_mcmc<T: Real>(
    train: &Dataset<T>,
    test_x: Option<&Matrix<T>>,
    hyper: &Hyperparams,
    mode: Mode,
) -> Result<Trace> {
    run_mcmc_with(train, test_x, hyper, mode, SamplerOptions::default())
}

pub fn run_mcmc_with<T: Real>(
    train: &Dataset<T>,
    test_x: Option<&Matrix<T>>,
    hyper: &Hyperparams,
    mode: Mode,
    options: SamplerOptions,
) -> Result<Trace> {
    let sampler = Sampler::new(&train.x, &train.y, test_x, hyper, mode)?.with_options(options);
    // Initialization draws from its own stream so that both modes share the
    // main stream.
    let mut init_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    init_rng.set_stream(1);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut state = sampler.init_state(&mut init_rng)?;
    let n_test = test_x.map_or(0, |t| t.rows());
    let mut trace = Trace::empty(mode, train.n(), n_test, hyper.m, hyper.m_var, hyper.seed);
    log::info!(
        "{mode} run: n={} p={} m={} m_var={} burn={} keep={} thin={}",
        train.n(),
        train.p(),
        hyper.m,
        if mode == Mode::Heteroscedastic {
            hyper.m_var
        } else {
            0
        },
        hyper.n_burn,
        hyper.n_keep,
        hyper.thin
    );
    for it in 0..hyper.n_burn {
        sampler.gibbs_iteration(&mut state, &mut rng, None)?;
        if (it + 1) % 500 == 0 {
            log::debug!("burn-in iteration {}", it + 1);
        }
    }
    let mut acceptance = Acceptance::default();
    for k in 0..hyper.n_keep {
        for _ in 0..hyper.thin {
            sampler.gibbs_iteration(&mut state, &mut rng, Some(&mut acceptance))?;
        }
        sampler.record(&state, &train.scaling, &mut trace);
        if (k + 1) % 500 == 0 {
            log::debug!("kept draw {}", k + 1);
        }
    }
    warn_on_stuck_moves("mean", &acceptance.mean);
    if mode == Mode::Heteroscedastic {
        warn_on_stuck_moves("variance", &acceptance.variance);
    }
    trace.acceptance = acceptance;
    Ok(trace)
}

/// Independent chains on separate threads; chain `c` uses seed `seed + c`.
pub fn run_chains<T: Real>(
    train: &Dataset<T>,
    test_x: Option<&Matrix<T>>,
    hyper: &Hyperparams,
    mode: Mode,
    n_chains: usize,
) -> Result<Vec<Trace>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| {
                let h = Hyperparams {
                    seed: hyper.seed.wrapping_add(c as u64),
                    ..hyper.clone()
                };
                scope.spawn(move || run_mcmc(train, test_x, &h, mode))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    })
}
