//! Statistical behavior of the fitted estimators at moderate scale:
//! interval-width scaling with the sample size, and near-complete
//! pointwise interval coverage when the true surface is exactly
//! representable and the predictor is noise-free.

use ndarray::Array2;
use tvflcm::basis::{evaluate_basis, make_basis, BasisFamily};
use tvflcm::model::{fit_tvflcm_poisson, ModelSpec, TimeMargin};
use tvflcm::predict::eval_surface;
use tvflcm::sim::{
    gen_functional_predictors, simulate_survival_with, GammaShape, SimulationConfig,
};

/// Pointwise interval half-widths shrink like 1 / sqrt(N): the median
/// ratio per doubling of the sample size stays near sqrt(2). Smoothing
/// is selected once at the smallest size and held fixed, so the
/// comparison isolates the statistical scaling from the adaptivity of
/// the smoothing selection.
#[test]
fn ci_halfwidths_scale_with_root_n() {
    let pts: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
    let mut medians = Vec::new();
    let mut selected: Option<Vec<f64>> = None;
    for n in [500usize, 1000, 2000] {
        let mut config = SimulationConfig::new(GammaShape::F1, n, 1, 424_242);
        config.n_grid = 50;
        let mut rng = config.rng_for(0);
        let (z_true, z_obs) = gen_functional_predictors(&config, &mut rng);
        let records =
            simulate_survival_with(&z_true, |u, t| GammaShape::F1.evaluate(u, t), &config, &mut rng);
        let mut spec = ModelSpec::new(5, 5, (0.0, 1.0), (0.0, 1.0));
        spec.lambdas = selected.clone();
        let fit = fit_tvflcm_poisson(&records, &z_obs, &spec).unwrap();
        if selected.is_none() {
            selected = Some(fit.fit.lambdas.clone());
        }
        let eval = eval_surface(&fit.surface, &pts, &pts).unwrap();
        let mut ses: Vec<f64> = eval.se.iter().copied().collect();
        ses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(ses[ses.len() / 2]);
    }
    for pair in medians.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!(
            (1.25..=1.6).contains(&ratio),
            "median half-width ratio per doubling {ratio:.3} (widths {medians:?})"
        );
    }
}

/// With an exactly representable truth and a noise-free predictor, the
/// fitted surface sits within two pointwise standard errors of the truth
/// on at least 90% of a 20 x 20 grid.
#[test]
fn representable_signal_is_covered_within_two_se() {
    let k_u = 4;
    let k_s = 3;
    let u_spec = make_basis(BasisFamily::CyclicCubic, (0.0, 1.0), k_u).unwrap();
    let t_spec = make_basis(BasisFamily::CubicRegression, (0.0, 1.0), k_s).unwrap();
    // smooth rank-one truth: one sine-like cycle over u scaled by a
    // decaying time profile; a strong, representable, low-frequency signal
    let u_profile = [1.2_f64, 0.2, -1.2, -0.2];
    let t_profile = [1.6_f64, 0.8, 0.3];
    let xi_true = Array2::from_shape_fn((k_u, k_s), |(j, k)| u_profile[j] * t_profile[k]);
    let gamma_true = {
        let u_spec = u_spec.clone();
        let t_spec = t_spec.clone();
        let xi = xi_true.clone();
        move |u: f64, t: f64| -> f64 {
            let bu = evaluate_basis(&u_spec, &[u]).unwrap().values;
            let bt = evaluate_basis(&t_spec, &[t]).unwrap().values;
            let mut v = 0.0;
            for j in 0..4 {
                for k in 0..3 {
                    v += xi[[j, k]] * bu[[0, j]] * bt[[0, k]];
                }
            }
            v
        }
    };

    let mut config = SimulationConfig::new(GammaShape::Null, 1000, 1, 11_811);
    config.n_grid = 50;
    let mut rng = config.rng_for(0);
    let (z_true, _) = gen_functional_predictors(&config, &mut rng);
    let records = simulate_survival_with(&z_true, &gamma_true, &config, &mut rng);

    // fit on the noise-free predictor with the same basis dimensions
    let spec = ModelSpec::new(k_u, k_s, (0.0, 1.0), (0.0, 1.0));
    let fit = fit_tvflcm_poisson(&records, &z_true, &spec).unwrap();
    assert!(matches!(fit.surface.t_margin, TimeMargin::Spline(_)));

    let pts: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
    let eval = eval_surface(&fit.surface, &pts, &pts).unwrap();
    let mut covered = 0usize;
    let mut total = 0usize;
    for (ui, &u) in pts.iter().enumerate() {
        for (ti, &t) in pts.iter().enumerate() {
            let truth = gamma_true(u, t);
            if (eval.values[[ui, ti]] - truth).abs() <= 2.0 * eval.se[[ui, ti]] {
                covered += 1;
            }
            total += 1;
        }
    }
    let fraction = covered as f64 / total as f64;
    assert!(
        fraction >= 0.90,
        "only {covered}/{total} grid points within two standard errors"
    );
}
