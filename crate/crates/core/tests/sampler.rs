use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vortes::data_io::{apply_scaling, simulate, Dataset, SimSpec};
use vortes::diagnostics::rmse;
use vortes::{
    run_chains, run_mcmc, run_mcmc_with, Hyperparams, Matrix, Mode, Rows, Sampler,
    SamplerOptions, VortesError,
};

fn friedman(case: u8, n: usize, seed: u64) -> (Dataset<f64>, Matrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = simulate(&SimSpec { n, d: 6, variance_case: case, seed }, &mut rng).unwrap();
    let test = simulate(&SimSpec { n: 50, d: 6, variance_case: case, seed }, &mut rng).unwrap();
    let ds = Dataset::from_raw(&train.x, &train.y, train.columns()).unwrap();
    let tx = apply_scaling(&test.x, &ds.scaling).unwrap();
    (ds, tx, test.f_true)
}

fn short(m: usize, m_var: usize) -> Hyperparams {
    Hyperparams {
        m,
        m_var,
        n_burn: 30,
        n_keep: 20,
        seed: 5,
        ..Hyperparams::default()
    }
}

#[test]
fn same_seed_same_trace() {
    let (ds, tx, _) = friedman(2, 80, 1);
    for mode in [Mode::Homoscedastic, Mode::Heteroscedastic] {
        let a = run_mcmc(&ds, Some(&tx), &short(10, 4), mode).unwrap();
        let b = run_mcmc(&ds, Some(&tx), &short(10, 4), mode).unwrap();
        assert_eq!(a, b);
        let c = run_mcmc(&ds, Some(&tx), &Hyperparams { seed: 6, ..short(10, 4) }, mode).unwrap();
        assert_ne!(a.f_train, c.f_train);
    }
}

#[test]
fn trace_shapes_follow_mode() {
    let (ds, tx, _) = friedman(1, 40, 2);
    let h = Hyperparams { thin: 2, ..short(5, 3) };
    let homo = run_mcmc(&ds, Some(&tx), &h, Mode::Homoscedastic).unwrap();
    assert_eq!(homo.n_draws, 20);
    assert_eq!(homo.sigma.len(), 20);
    assert!(homo.s_train.is_empty() && homo.var_cells.is_empty());
    assert_eq!(homo.f_test.len(), 20 * 50);
    assert_eq!(homo.mean_cells.len(), 20 * 5);
    let het = run_mcmc(&ds, None, &h, Mode::Heteroscedastic).unwrap();
    assert!(het.sigma.is_empty());
    assert_eq!(het.s_train.len(), 20 * 40);
    assert_eq!(het.n_test, 0);
    assert_eq!(het.var_dims.len(), 20 * 3);
    assert!(het.s_train.iter().all(|&s| s > 0.0));
    let total: u64 = het.acceptance.mean.proposed.iter().sum();
    assert_eq!(total, 20 * 2 * 5);
}

/// With one variance tessellation frozen at a single cell and the variance
/// prior equal to the noise prior, the heteroscedastic sampler reproduces
/// the homoscedastic one draw for draw.
#[test]
fn frozen_single_variance_cell_reproduces_homoscedastic_run() {
    let (ds, tx, _) = friedman(1, 60, 3);
    let h = Hyperparams {
        nu_var: Some(3.0),
        ..short(8, 1)
    };
    let homo = run_mcmc(&ds, Some(&tx), &h, Mode::Homoscedastic).unwrap();
    let opts = SamplerOptions {
        update_variance_structure: false,
        ..SamplerOptions::default()
    };
    let het = run_mcmc_with(&ds, Some(&tx), &h, Mode::Heteroscedastic, opts).unwrap();
    for (a, b) in homo.f_train.iter().zip(&het.f_train) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
    for k in 0..homo.n_draws {
        for i in 0..ds.n() {
            let (a, b) = (homo.s(Rows::Train, k, i), het.s(Rows::Train, k, i));
            assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
        }
    }
}

#[test]
fn caches_stay_exact_under_audit() {
    let (ds, tx, _) = friedman(3, 70, 4);
    let opts = SamplerOptions {
        audit_every: 1,
        ..SamplerOptions::default()
    };
    for mode in [Mode::Homoscedastic, Mode::Heteroscedastic] {
        run_mcmc_with(&ds, Some(&tx), &short(12, 6), mode, opts).unwrap();
    }
    let h = short(12, 6);
    let sampler = Sampler::new(&ds.x, &ds.y, Some(&tx), &h, Mode::Heteroscedastic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = sampler.init_state(&mut rng).unwrap();
    for _ in 0..20 {
        sampler.gibbs_iteration(&mut state, &mut rng, None).unwrap();
        assert!(sampler.cache_drift(&state) <= 1e-10);
        let (f_test, s2_test) = sampler.test_predictions(&state);
        let direct = state.mean.predict_all(&tx);
        let direct_s2 = state.variance.as_ref().unwrap().predict_all(&tx);
        assert_eq!(f_test, direct);
        for (a, b) in s2_test.iter().zip(&direct_s2) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }
}

#[test]
fn fits_a_noiseless_step_function() {
    let n = 60;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64, ((i * 7) % n) as f64 / n as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| if r[0] < 0.5 { 0.0 } else { 10.0 }).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let ds = Dataset::<f64>::from_raw(&x, &y, Vec::new()).unwrap();
    let h = Hyperparams {
        m: 20,
        m_var: 5,
        n_burn: 300,
        n_keep: 100,
        ..Hyperparams::default()
    };
    for mode in [Mode::Homoscedastic, Mode::Heteroscedastic] {
        let tr = run_mcmc(&ds, None, &h, mode).unwrap();
        let err = rmse(&tr.f_mean(Rows::Train), &y).unwrap();
        assert!(err < 1.0, "{mode}: rmse {err}");
    }
}

#[test]
fn constant_response_runs() {
    let x = Matrix::from_rows(&[vec![0.1], vec![0.5], vec![0.9], vec![0.3]]).unwrap();
    let ds = Dataset::<f64>::from_raw(&x, &[2.0; 4], Vec::new()).unwrap();
    let tr = run_mcmc(&ds, None, &short(3, 2), Mode::Heteroscedastic).unwrap();
    assert!(tr.f_train.iter().all(|v| v.is_finite()));
    assert!(tr.s_train.iter().all(|v| v.is_finite() && *v > 0.0));
}

#[test]
fn single_precision_sampler_tracks_double() {
    let (ds, tx, f_true) = friedman(1, 150, 7);
    let ds32: Dataset<f32> = Dataset::from_raw(
        &ds.scaling.unscale_x(&ds.x),
        &ds.y.iter().map(|&v| ds.scaling.unscale_y(v)).collect::<Vec<_>>(),
        Vec::new(),
    )
    .unwrap();
    let tx32 = tx.map(|v| v as f32);
    let h = Hyperparams {
        m: 30,
        n_burn: 200,
        n_keep: 100,
        ..Hyperparams::default()
    };
    let t64 = run_mcmc(&ds, Some(&tx), &h, Mode::Homoscedastic).unwrap();
    let t32 = run_mcmc(&ds32, Some(&tx32), &h, Mode::Homoscedastic).unwrap();
    let e64 = rmse(&t64.f_mean(Rows::Test), &f_true).unwrap();
    let e32 = rmse(&t32.f_mean(Rows::Test), &f_true).unwrap();
    assert!(e32 < 1.5 * e64 + 0.5, "f32 {e32} vs f64 {e64}");
}

#[test]
fn chains_use_consecutive_seeds() {
    let (ds, _, _) = friedman(1, 40, 8);
    let h = short(4, 2);
    let chains = run_chains(&ds, None, &h, Mode::Heteroscedastic, 2).unwrap();
    assert_eq!(chains[0], run_mcmc(&ds, None, &h, Mode::Heteroscedastic).unwrap());
    let h1 = Hyperparams { seed: 6, ..h };
    assert_eq!(chains[1], run_mcmc(&ds, None, &h1, Mode::Heteroscedastic).unwrap());
}

#[test]
fn rejects_bad_inputs() {
    let (ds, _, _) = friedman(1, 20, 9);
    let bad = Hyperparams { m: 0, ..short(1, 1) };
    assert!(matches!(
        run_mcmc(&ds, None, &bad, Mode::Homoscedastic),
        Err(VortesError::InvalidHyperparameter { name: "m", .. })
    ));
    let wrong_cols = Matrix::<f64>::zeros(3, 2);
    assert!(matches!(
        run_mcmc(&ds, Some(&wrong_cols), &short(2, 1), Mode::Homoscedastic),
        Err(VortesError::DimensionMismatch(_))
    ));
}
