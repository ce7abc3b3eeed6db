//! Evaluation of fitted objects: coefficient surfaces with pointwise
//! standard errors, per-subject survival curves inside landmark windows,
//! and chained conditional survivals for dynamic prediction.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::basis::evaluate_basis;
use crate::model::{CoefficientSurface, ModelError, Route, TvflcmFit};
use crate::survival::SurvivalRecord;

/// Two-sided 95% normal quantile used for interval output.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Basis(#[from] crate::basis::BasisError),

    #[error("subject (observed time {y}) is not at risk at landmark {s}")]
    NotAtRisk { y: f64, s: f64 },

    #[error("stratum index {index} out of range ({count} strata)")]
    BadStratum { index: usize, count: usize },

    #[error("prediction time {t_star} lies beyond the last covered time {last}")]
    BeyondLastWindow { t_star: f64, last: f64 },

    #[error("this operation needs a landmark-route fit")]
    RouteMismatch,
}

/// Surface values and pointwise standard errors on a grid.
#[derive(Debug, Clone)]
pub struct SurfaceEvaluation {
    pub u: Vec<f64>,
    pub t: Vec<f64>,
    /// `len(u) x len(t)`.
    pub values: Array2<f64>,
    pub se: Array2<f64>,
}

/// Evaluates `gamma(u, t) = sum_jk xi_jk B_j(u) B_k(t)` with pointwise
/// standard errors `sqrt(b' Sigma b)` from the coefficient covariance.
pub fn eval_surface(
    surface: &CoefficientSurface,
    u_grid: &[f64],
    t_grid: &[f64],
) -> Result<SurfaceEvaluation, PredictError> {
    let bu = evaluate_basis(&surface.u_spec, u_grid)?.values;
    let bt = surface.t_margin.eval(t_grid)?;
    let k_u = surface.xi.nrows();
    let k_s = surface.xi.ncols();
    let values = bu.dot(&surface.xi).dot(&bt.t());

    let mut se = Array2::zeros((u_grid.len(), t_grid.len()));
    let mut b = Array1::zeros(k_u * k_s);
    for (ui, _) in u_grid.iter().enumerate() {
        for (ti, _) in t_grid.iter().enumerate() {
            for k in 0..k_s {
                for j in 0..k_u {
                    b[k * k_u + j] = bu[[ui, j]] * bt[[ti, k]];
                }
            }
            let var = b.dot(&surface.covariance.dot(&b));
            se[[ui, ti]] = var.max(0.0).sqrt();
        }
    }
    Ok(SurfaceEvaluation {
        u: u_grid.to_vec(),
        t: t_grid.to_vec(),
        values,
        se,
    })
}

/// A conditional survival curve inside one landmark window.
#[derive(Debug, Clone)]
pub struct SurvivalCurve {
    /// The landmark time the curve conditions on.
    pub origin: f64,
    /// End of the prediction window (possibly infinite).
    pub horizon: f64,
    /// Jump times of the stratum baseline inside the window.
    pub times: Vec<f64>,
    /// Survival probability immediately after each jump time.
    pub survival: Vec<f64>,
    /// Subject linear predictor in this stratum.
    pub eta: f64,
    hazard: crate::survival::CumulativeHazard,
}

impl SurvivalCurve {
    /// `P(T > t | T > origin)` for origin < t <= horizon.
    pub fn evaluate(&self, t: f64) -> f64 {
        (-self.hazard.evaluate(t) * self.eta.exp()).exp()
    }
}

/// Conditional survival curve for a subject inside landmark stratum
/// `stratum`: `S(t) = exp(-H_stratum(t) e^eta)` with the stratum's
/// Nelson-Aalen baseline.
pub fn survival_curve(
    fit: &TvflcmFit,
    record: &SurvivalRecord,
    z_row: &Array1<f64>,
    stratum: usize,
) -> Result<SurvivalCurve, PredictError> {
    if fit.route != Route::Landmark {
        return Err(PredictError::RouteMismatch);
    }
    let count = fit.windows.len();
    if stratum >= count {
        return Err(PredictError::BadStratum {
            index: stratum,
            count,
        });
    }
    let (origin, _) = fit.windows[stratum];
    if record.y <= origin {
        return Err(PredictError::NotAtRisk {
            y: record.y,
            s: origin,
        });
    }
    build_curve(fit, z_row, &record.x, stratum)
}

fn build_curve(
    fit: &TvflcmFit,
    z_row: &Array1<f64>,
    x: &[f64],
    stratum: usize,
) -> Result<SurvivalCurve, PredictError> {
    let (origin, horizon) = fit.windows[stratum];
    let eta = fit.eta_for(z_row, x, stratum, origin)?;
    let hazard = fit.baselines[stratum].clone();
    let mut times = Vec::new();
    let mut survival = Vec::new();
    for (t, _) in hazard.times.iter().zip(&hazard.jumps) {
        times.push(*t);
        survival.push((-hazard.evaluate(*t) * eta.exp()).exp());
    }
    Ok(SurvivalCurve {
        origin,
        horizon,
        times,
        survival,
        eta,
        hazard,
    })
}

/// Outcome of a dynamic prediction.
#[derive(Debug, Clone)]
pub struct DynamicPrediction {
    /// The reported probability: the direct single-window estimator when a
    /// window from the origin covers `t_star`, otherwise the chained one.
    pub probability: f64,
    /// Single-stratum estimator, when some window starting at the origin
    /// covers `t_star`.
    pub direct: Option<f64>,
    /// Product of conditional survivals over the windows covering
    /// `(origin, t_star]`.
    pub chained: f64,
    /// Absolute difference between the two estimators when both exist
    /// (they need not agree for overlapping windows).
    pub discrepancy: Option<f64>,
}

/// Predicts `P(T > t_star | baseline data)` by chaining conditional
/// survivals across landmark windows, reporting the direct estimator
/// alongside when one stratum covers the whole range.
pub fn dynamic_predict(
    fit: &TvflcmFit,
    z_row: &Array1<f64>,
    x: &[f64],
    t_star: f64,
) -> Result<DynamicPrediction, PredictError> {
    if fit.route != Route::Landmark {
        return Err(PredictError::RouteMismatch);
    }
    let last_covered = fit
        .windows
        .iter()
        .fold(f64::NEG_INFINITY, |m, &(_, e)| m.max(e));
    if t_star > last_covered {
        return Err(PredictError::BeyondLastWindow {
            t_star,
            last: last_covered,
        });
    }

    // chained: greedy walk of windows from the earliest origin
    let origin0 = fit
        .windows
        .iter()
        .fold(f64::INFINITY, |m, &(s, _)| m.min(s));
    let mut current = origin0;
    let mut chained = 1.0;
    let mut guard = 0;
    while current < t_star {
        // among windows containing `current` in [s, e), pick the one
        // reaching furthest
        let mut best: Option<(usize, f64)> = None;
        for (l, &(s, e)) in fit.windows.iter().enumerate() {
            if s <= current && current < e {
                if best.map_or(true, |(_, be)| e > be) {
                    best = Some((l, e));
                }
            }
        }
        let (l, e) = best.ok_or(PredictError::BeyondLastWindow {
            t_star,
            last: current,
        })?;
        let curve = build_curve(fit, z_row, x, l)?;
        let stop = t_star.min(e);
        // conditional survival from this window's own origin
        let from = fit.windows[l].0.max(current);
        let num = curve.evaluate(stop);
        let den = if from > fit.windows[l].0 {
            curve.evaluate(from)
        } else {
            1.0
        };
        chained *= if den > 0.0 { num / den } else { 0.0 };
        current = stop;
        guard += 1;
        if guard > fit.windows.len() + 2 {
            break;
        }
    }

    // direct: a single window starting at the earliest origin that covers t_star
    let mut direct = None;
    for (l, &(s, e)) in fit.windows.iter().enumerate() {
        if s <= origin0 && t_star <= e {
            let curve = build_curve(fit, z_row, x, l)?;
            direct = Some(curve.evaluate(t_star));
            break;
        }
    }
    let discrepancy = direct.map(|d| (d - chained).abs());
    Ok(DynamicPrediction {
        probability: direct.unwrap_or(chained),
        direct,
        chained,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, BasisFamily};
    use crate::linalg;
    use crate::model::{fit_tvflcm_landmark, ModelSpec, TimeMargin};
    use crate::survival::FunctionalPredictor;
    use crate::LandmarkGrid;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn unit_surface(k_u: usize, k_s: usize) -> CoefficientSurface {
        let u_spec = make_basis(BasisFamily::CyclicCubic, (0.0, 1.0), k_u).unwrap();
        let t_spec = make_basis(BasisFamily::CubicRegression, (0.0, 1.0), k_s).unwrap();
        CoefficientSurface {
            xi: Array2::zeros((k_u, k_s)),
            u_spec,
            t_margin: TimeMargin::Spline(t_spec),
            covariance: Array2::eye(k_u * k_s),
        }
    }

    #[test]
    fn zero_coefficients_give_zero_surface_with_covariance_se() {
        let surface = unit_surface(4, 3);
        let eval = eval_surface(&surface, &[0.1, 0.5], &[0.2, 0.8]).unwrap();
        assert!(eval.values.iter().all(|&v| v == 0.0));
        // identity covariance: se^2 = sum_jk (B_j(u) B_k(t))^2 > 0
        assert!(eval.se.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn single_coefficient_surface_is_a_basis_product() {
        let mut surface = unit_surface(4, 3);
        surface.xi[[1, 2]] = 2.5;
        surface.covariance.fill(0.0);
        let us = [0.15, 0.75];
        let ts = [0.3, 0.9];
        let eval = eval_surface(&surface, &us, &ts).unwrap();
        let bu = evaluate_basis(&surface.u_spec, &us).unwrap().values;
        let bt = surface.t_margin.eval(&ts).unwrap();
        for i in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(
                    eval.values[[i, k]],
                    2.5 * bu[[i, 1]] * bt[[k, 2]],
                    epsilon = 1e-12
                );
                assert_abs_diff_eq!(eval.se[[i, k]], 0.0, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn se_matches_parametric_bootstrap_oracle() {
        // random PSD covariance, zero mean coefficients
        let mut rng = StdRng::seed_from_u64(77);
        let mut surface = unit_surface(3, 3);
        let p = 9;
        let raw = Array2::from_shape_fn((p, p), |_| rng.random::<f64>() - 0.5);
        let sigma = raw.t().dot(&raw);
        surface.covariance = sigma.clone();

        // matrix square root through the eigendecomposition
        let (vals, vecs) = linalg::sym_eigen(sigma.view());
        let mut half = vecs.clone();
        for j in 0..p {
            let s = vals[j].max(0.0).sqrt();
            for i in 0..p {
                half[[i, j]] *= s;
            }
        }

        let normal = Normal::new(0.0, 1.0).unwrap();
        let points: Vec<(f64, f64)> = (0..5)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let n_draws = 10_000;
        let mut samples = vec![Vec::with_capacity(n_draws); points.len()];
        let bu_pts: Vec<f64> = points.iter().map(|p| p.0).collect();
        let bt_pts: Vec<f64> = points.iter().map(|p| p.1).collect();
        let bu = evaluate_basis(&surface.u_spec, &bu_pts).unwrap().values;
        let bt = surface.t_margin.eval(&bt_pts).unwrap();
        for _ in 0..n_draws {
            let z = Array1::from_shape_fn(p, |_| normal.sample(&mut rng));
            let xi_draw = half.dot(&z);
            for (q, _) in points.iter().enumerate() {
                let mut v = 0.0;
                for k in 0..3 {
                    for j in 0..3 {
                        v += xi_draw[k * 3 + j] * bu[[q, j]] * bt[[q, k]];
                    }
                }
                samples[q].push(v);
            }
        }
        for (q, &(u, t)) in points.iter().enumerate() {
            let eval = eval_surface(&surface, &[u], &[t]).unwrap();
            let mean: f64 = samples[q].iter().sum::<f64>() / n_draws as f64;
            let var: f64 = samples[q]
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (n_draws as f64 - 1.0);
            let mc_se = var.sqrt();
            let rel = (eval.se[[0, 0]] - mc_se).abs() / mc_se;
            assert!(rel < 0.05, "point {q}: analytic {} vs MC {mc_se}", eval.se[[0, 0]]);
        }
    }

    fn landmark_toy_fit(seed: u64, grid: &LandmarkGrid) -> (TvflcmFit, Vec<SurvivalRecord>, Array2<f64>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = 60;
        let j = 8;
        let pts: Vec<f64> = (0..j).map(|v| (v as f64 + 0.5) / j as f64).collect();
        let z_values = Array2::from_shape_fn((n, j), |_| rng.random::<f64>() * 2.0 - 1.0);
        let z = FunctionalPredictor::new(z_values.clone(), pts).unwrap();
        let records: Vec<SurvivalRecord> = (0..n)
            .map(|i| {
                SurvivalRecord::new(
                    i as u64,
                    0.02 + 0.98 * rng.random::<f64>(),
                    u8::from(rng.random::<f64>() < 0.7),
                    vec![],
                )
                .unwrap()
            })
            .collect();
        let mut spec = ModelSpec::new(3, 3, (0.0, 1.0), (0.0, 1.0));
        spec.lambdas = Some(vec![10.0, 10.0]);
        let fit = fit_tvflcm_landmark(&records, &z, &spec, grid).unwrap();
        (fit, records, z_values)
    }

    #[test]
    fn survival_curves_behave() {
        let grid = LandmarkGrid::new(vec![0.0, 0.25, 0.5, 0.75], vec![0.25; 4]).unwrap();
        let (fit, records, z_values) = landmark_toy_fit(5, &grid);
        let z0: Array1<f64> = z_values.row(0).to_owned();

        let curve = survival_curve(&fit, &records[0], &z0, 0).unwrap();
        // starts at 1 before the first event, nonincreasing, in [0, 1]
        assert_abs_diff_eq!(curve.evaluate(0.0), 1.0, epsilon = 0.0);
        let mut last = 1.0;
        for &t in &curve.times {
            let s = curve.evaluate(t);
            assert!(s <= last + 1e-12 && s >= 0.0 && s <= 1.0);
            last = s;
        }

        // eta = 0 equals exp(-H)
        let s = (-curve.hazard.evaluate(0.2)).exp();
        let curve_eta0 = SurvivalCurve {
            eta: 0.0,
            ..curve.clone()
        };
        assert_abs_diff_eq!(curve_eta0.evaluate(0.2), s, epsilon = 1e-12);

        // subject dead before the landmark is rejected
        let dead = SurvivalRecord::new(999, 0.1, 1, vec![]).unwrap();
        assert!(matches!(
            survival_curve(&fit, &dead, &z0, 2),
            Err(PredictError::NotAtRisk { .. })
        ));
    }

    #[test]
    fn no_events_in_stratum_means_survival_one() {
        // manually thin the baseline of a cloned fit
        let grid = LandmarkGrid::new(vec![0.0, 0.25], vec![0.25, f64::INFINITY]).unwrap();
        let (mut fit, records, z_values) = landmark_toy_fit(6, &grid);
        fit.baselines[0] = crate::survival::CumulativeHazard::from_jumps(vec![]);
        let z0: Array1<f64> = z_values.row(0).to_owned();
        let curve = survival_curve(&fit, &records[0], &z0, 0).unwrap();
        assert_abs_diff_eq!(curve.evaluate(0.2), 1.0, epsilon = 0.0);
    }

    #[test]
    fn dynamic_prediction_chains_and_bounds() {
        let grid = LandmarkGrid::new(vec![0.0, 0.25, 0.5, 0.75], vec![0.25; 4]).unwrap();
        let (fit, _, z_values) = landmark_toy_fit(7, &grid);
        let z0: Array1<f64> = z_values.row(0).to_owned();

        // inside the first window the chained estimator IS the window value
        let p1 = dynamic_predict(&fit, &z0, &[], 0.2).unwrap();
        let curve0 = build_curve(&fit, &z0, &[], 0).unwrap();
        assert_abs_diff_eq!(p1.chained, curve0.evaluate(0.2), epsilon = 1e-12);

        // monotone in t_star on the partition
        let mut last = 1.0;
        for k in 1..=20 {
            let t = k as f64 * 0.05;
            let p = dynamic_predict(&fit, &z0, &[], t).unwrap();
            assert!(p.chained <= last + 1e-10);
            last = p.chained;
        }

        // beyond the last window is an error
        assert!(matches!(
            dynamic_predict(&fit, &z0, &[], 1.5),
            Err(PredictError::BeyondLastWindow { .. })
        ));
    }

    #[test]
    fn single_full_stratum_makes_chained_equal_direct() {
        // the first window alone covers every horizon
        let grid = LandmarkGrid::new(vec![0.0, 0.3], vec![f64::INFINITY; 2]).unwrap();
        let (fit, _, z_values) = landmark_toy_fit(8, &grid);
        let z0: Array1<f64> = z_values.row(0).to_owned();
        let p = dynamic_predict(&fit, &z0, &[], 0.6).unwrap();
        let direct = p.direct.expect("window covers everything");
        assert_abs_diff_eq!(direct, p.chained, epsilon = 1e-12);
        assert_abs_diff_eq!(p.discrepancy.unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn overlapping_windows_report_both_estimators() {
        // two overlapping windows from 0 and 0.3, both long
        let grid = LandmarkGrid::new(vec![0.0, 0.3], vec![0.8, 0.8]).unwrap();
        let (fit, _, z_values) = landmark_toy_fit(9, &grid);
        let z0: Array1<f64> = z_values.row(0).to_owned();
        let p = dynamic_predict(&fit, &z0, &[], 0.7).unwrap();
        assert!(p.direct.is_some());
        assert!(p.discrepancy.is_some());
        assert_abs_diff_eq!(p.probability, p.direct.unwrap(), epsilon = 0.0);
        // the two estimators are generally different; only their presence
        // and finiteness are contractual
        assert!(p.chained.is_finite() && p.chained >= 0.0 && p.chained <= 1.0);
    }
}
