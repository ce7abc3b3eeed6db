//! Simulation studies: the data-generating mechanism, the accuracy and
//! coverage metrics, and the replication driver comparing the risk-set
//! expansion route against the two landmark configurations.


use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use thiserror::Error;

use crate::basis::{evaluate_basis, make_basis, BasisFamily};
use crate::landmark::LandmarkGrid;
use crate::model::{fit_tvflcm_landmark, fit_tvflcm_poisson, ModelError, ModelSpec, TvflcmFit};
use crate::predict::{eval_surface, Z_95};
use crate::survival::{FunctionalPredictor, SurvivalRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown coefficient-surface name {0:?} (expected f1, f2, f3, f4, or null)")]
    UnknownShape(String),

    #[error("evaluation grids do not match")]
    GridMismatch,

    #[error("standard errors are required for coverage and were not produced")]
    MissingSe,

    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The true coefficient surfaces of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaShape {
    F1,
    F2,
    F3,
    F4,
    /// Identically zero (null-model sanity runs).
    Null,
}

impl GammaShape {
    pub fn parse(name: &str) -> Result<Self, SimError> {
        match name {
            "f1" => Ok(GammaShape::F1),
            "f2" => Ok(GammaShape::F2),
            "f3" => Ok(GammaShape::F3),
            "f4" => Ok(GammaShape::F4),
            "null" => Ok(GammaShape::Null),
            other => Err(SimError::UnknownShape(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GammaShape::F1 => "f1",
            GammaShape::F2 => "f2",
            GammaShape::F3 => "f3",
            GammaShape::F4 => "f4",
            GammaShape::Null => "null",
        }
    }

    /// `gamma(u, t)` on the unit square.
    pub fn evaluate(&self, u: f64, t: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            GammaShape::F1 => (2.0 * PI * u).sin() / (t + 0.5),
            GammaShape::F2 => (2.0 * PI * u).sin() / (t / 2.0 + 1.0),
            GammaShape::F3 => 10.0 * (4.0 * PI * (t - u)).cos(),
            GammaShape::F4 => (2.0 * PI * (t.powi(3) - 2.0 / (u * u + 1.0))).cos(),
            GammaShape::Null => 0.0,
        }
    }
}

/// Configuration of one simulation study.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n_subjects: usize,
    /// Functional grid size `J` (midpoint grid on the unit interval).
    pub n_grid: usize,
    /// Survival-time grid size for the inverse-transform sampler.
    pub n_time_grid: usize,
    pub replications: usize,
    pub gamma: GammaShape,
    /// Spacing and largest landmark time of the landmark grid.
    pub landmark_step: f64,
    pub landmark_max: f64,
    /// Finite prediction-window length for the windowed landmark method.
    pub window: f64,
    pub k_u: usize,
    pub k_s: usize,
    pub seed: u64,
    /// Constant baseline hazard level of the generator.
    pub baseline_hazard: f64,
    /// Evaluation grid size per axis for accuracy metrics.
    pub eval_grid: usize,
    /// Exponential censoring (capped at 1) on or off.
    pub censoring: bool,
    pub run_poisson: bool,
    pub run_landmark_window: bool,
    pub run_landmark_infinite: bool,
    /// Retain every fitted surface in the report.
    pub keep_surfaces: bool,
}

impl SimulationConfig {
    pub fn new(gamma: GammaShape, n_subjects: usize, replications: usize, seed: u64) -> Self {
        SimulationConfig {
            n_subjects,
            n_grid: 100,
            n_time_grid: 100,
            replications,
            gamma,
            landmark_step: 0.04,
            landmark_max: 0.96,
            window: 0.04,
            k_u: 5,
            k_s: 5,
            seed,
            baseline_hazard: 1.0,
            eval_grid: 100,
            censoring: true,
            run_poisson: true,
            run_landmark_window: true,
            run_landmark_infinite: true,
            keep_surfaces: false,
        }
    }

    /// Midpoint grid on the functional domain.
    pub fn u_grid(&self) -> Vec<f64> {
        (0..self.n_grid)
            .map(|v| (v as f64 + 0.5) / self.n_grid as f64)
            .collect()
    }

    /// Midpoint evaluation grid per axis.
    pub fn eval_points(&self) -> Vec<f64> {
        (0..self.eval_grid)
            .map(|v| (v as f64 + 0.5) / self.eval_grid as f64)
            .collect()
    }

    /// The replication RNG: one documented stream per replication index.
    pub fn rng_for(&self, replication: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication as u64 + 1);
        rng
    }

    pub fn truth_on_eval_grid(&self) -> Array2<f64> {
        let pts = self.eval_points();
        Array2::from_shape_fn((pts.len(), pts.len()), |(i, k)| {
            self.gamma.evaluate(pts[i], pts[k])
        })
    }
}

/// Simulated functional predictors: ten cubic B-spline shapes weighted by
/// compound-symmetric Gaussian scores (variance 4, correlation 0.3), plus
/// independent N(0, 0.25^2) measurement noise on the observed copy.
pub fn gen_functional_predictors(
    config: &SimulationConfig,
    rng: &mut impl Rng,
) -> (FunctionalPredictor, FunctionalPredictor) {
    let n = config.n_subjects;
    let grid = config.u_grid();
    let basis = make_basis(BasisFamily::BsplineCubic, (0.0, 1.0), 10)
        .expect("fixed generator basis");
    let phi = evaluate_basis(&basis, &grid).expect("grid inside domain").values;
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut scores = Array2::zeros((n, 10));
    for i in 0..n {
        let shared: f64 = normal.sample(rng);
        for k in 0..10 {
            let own: f64 = normal.sample(rng);
            // var 4 with pairwise correlation 0.3
            scores[[i, k]] = 2.0 * (0.3_f64.sqrt() * shared + 0.7_f64.sqrt() * own);
        }
    }
    let z_true = scores.dot(&phi.t());
    let noise = Array2::from_shape_fn(z_true.dim(), |_| 0.25 * normal.sample(rng));
    let z_obs = &z_true + &noise;

    (
        FunctionalPredictor::new(z_true, grid.clone()).expect("valid grid"),
        FunctionalPredictor::new(z_obs, grid).expect("valid grid"),
    )
}

/// Simulates survival outcomes by inverse transform on a discrete time
/// grid: the cumulative hazard accumulates left-Riemann increments of
/// `lambda_0 exp(eta_i(t))`, the event time is the first grid point whose
/// survival drops to the uniform draw, and censoring is the minimum of 1
/// and an Exp(mean 1) variable.
pub fn simulate_survival(
    z_true: &FunctionalPredictor,
    gamma: GammaShape,
    config: &SimulationConfig,
    rng: &mut impl Rng,
) -> Vec<SurvivalRecord> {
    simulate_survival_with(z_true, |u, t| gamma.evaluate(u, t), config, rng)
}

/// Same mechanism with an arbitrary true coefficient surface.
pub fn simulate_survival_with(
    z_true: &FunctionalPredictor,
    gamma: impl Fn(f64, f64) -> f64,
    config: &SimulationConfig,
    rng: &mut impl Rng,
) -> Vec<SurvivalRecord> {
    let n = z_true.n_subjects();
    let n_t = config.n_time_grid;
    let dt = 1.0 / n_t as f64;

    // eta at the left endpoint of every interval
    let left: Vec<f64> = (0..n_t).map(|g| g as f64 * dt).collect();
    let j = z_true.n_points();
    let mut gamma_left = Array2::zeros((j, n_t));
    for v in 0..j {
        for g in 0..n_t {
            gamma_left[[v, g]] = gamma(z_true.grid[v], left[g]);
        }
    }
    let mut zw = z_true.values.clone();
    for mut row in zw.axis_iter_mut(Axis(0)) {
        for (val, w) in row.iter_mut().zip(z_true.weights.iter()) {
            *val *= w;
        }
    }
    let eta = zw.dot(&gamma_left); // N x n_t

    let exp1 = Exp::new(1.0).unwrap();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut event_time = None;
        for g in 0..n_t {
            cum += config.baseline_hazard * eta[[i, g]].exp() * dt;
            if (-cum).exp() <= u {
                event_time = Some((g + 1) as f64 * dt);
                break;
            }
        }
        let censor_raw: f64 = exp1.sample(rng);
        let censor = if config.censoring {
            censor_raw.min(1.0)
        } else {
            1.0
        };
        let (y, delta) = match event_time {
            Some(t) if t <= censor => (t, 1),
            _ => (censor, 0),
        };
        records.push(SurvivalRecord::new(i as u64, y, delta, vec![]).expect("positive time"));
    }
    records
}

/// Replication-averaged mean squared error over the shared grid.
pub fn amse(estimates: &[Array2<f64>], truth: &Array2<f64>) -> Result<f64, SimError> {
    if estimates.is_empty() {
        return Ok(0.0);
    }
    let cells = truth.len() as f64;
    let mut total = 0.0;
    for est in estimates {
        if est.dim() != truth.dim() {
            return Err(SimError::GridMismatch);
        }
        let ise: f64 = est
            .iter()
            .zip(truth.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / cells;
        total += ise;
    }
    Ok(total / estimates.len() as f64)
}

/// Pointwise empirical coverage of Wald intervals and its grid average.
pub fn coverage(
    estimates: &[(Array2<f64>, Array2<f64>)],
    truth: &Array2<f64>,
    z: f64,
) -> Result<(Array2<f64>, f64), SimError> {
    if estimates.is_empty() {
        return Err(SimError::MissingSe);
    }
    let mut hit = Array2::<f64>::zeros(truth.dim());
    for (values, se) in estimates {
        if values.dim() != truth.dim() || se.dim() != truth.dim() {
            return Err(SimError::GridMismatch);
        }
        for ((h, (v, s)), g) in hit
            .iter_mut()
            .zip(values.iter().zip(se.iter()))
            .zip(truth.iter())
        {
            if (v - g).abs() <= z * s {
                *h += 1.0;
            }
        }
    }
    hit /= estimates.len() as f64;
    let average = hit.sum() / hit.len() as f64;
    Ok((hit, average))
}

/// Per-method aggregate of a study.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    pub amse: f64,
    pub mean_rows: f64,
    pub successes: usize,
    pub failures: usize,
    /// Wall-clock means (seconds); not part of the deterministic report body.
    pub mean_expansion_seconds: f64,
    pub mean_fit_seconds: f64,
}

/// One fitted replication of one method.
#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub method: String,
    pub ise: f64,
    pub rows: usize,
    pub lambdas: Vec<f64>,
    pub expansion_seconds: f64,
    pub fit_seconds: f64,
}

/// Study output: aggregates, per-replication records, and optionally the
/// fitted surfaces themselves.
#[derive(Debug, Clone)]
pub struct StudyReport {
    pub gamma: GammaShape,
    pub n_subjects: usize,
    pub replications: usize,
    pub seed: u64,
    pub methods: Vec<MethodSummary>,
    pub coverage_average: Option<f64>,
    pub coverage_pointwise: Option<Array2<f64>>,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<String>,
    pub surfaces: Vec<(usize, String, Array2<f64>)>,
}

impl StudyReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

pub const METHOD_LANDMARK_WINDOW: &str = "landmark_w";
pub const METHOD_LANDMARK_INFINITE: &str = "landmark_inf";
pub const METHOD_POISSON: &str = "poisson";

struct MethodAccumulator {
    name: &'static str,
    ises: Vec<f64>,
    rows: Vec<usize>,
    expansion: Vec<f64>,
    fitting: Vec<f64>,
    failures: usize,
}

impl MethodAccumulator {
    fn new(name: &'static str) -> Self {
        MethodAccumulator {
            name,
            ises: Vec::new(),
            rows: Vec::new(),
            expansion: Vec::new(),
            fitting: Vec::new(),
            failures: 0,
        }
    }

    fn summary(&self) -> MethodSummary {
        let n = self.ises.len().max(1) as f64;
        MethodSummary {
            method: self.name.to_string(),
            amse: self.ises.iter().sum::<f64>() / n,
            mean_rows: self.rows.iter().sum::<usize>() as f64 / n,
            successes: self.ises.len(),
            failures: self.failures,
            mean_expansion_seconds: self.expansion.iter().sum::<f64>() / n,
            mean_fit_seconds: self.fitting.iter().sum::<f64>() / n,
        }
    }
}

/// Runs the replication study: per replication the data are generated
/// once and every enabled method fits them; accuracy uses the shared
/// evaluation grid and coverage is computed for the expansion route.
/// Failures are recorded and the study continues.
pub fn run_study(config: &SimulationConfig) -> Result<StudyReport, SimError> {
    let truth = config.truth_on_eval_grid();
    let pts = config.eval_points();
    let mut accs = vec![
        MethodAccumulator::new(METHOD_LANDMARK_WINDOW),
        MethodAccumulator::new(METHOD_LANDMARK_INFINITE),
        MethodAccumulator::new(METHOD_POISSON),
    ];
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut surfaces = Vec::new();
    let mut poisson_estimates: Vec<(Array2<f64>, Array2<f64>)> = Vec::new();

    let spec_template = {
        let mut spec = ModelSpec::new(config.k_u, config.k_s, (0.0, 1.0), (0.0, 1.0));
        spec.center = true;
        spec
    };
    let grid_window = LandmarkGrid::evenly_spaced(
        config.landmark_step,
        config.landmark_max,
        config.window,
    )
    .expect("valid landmark grid");
    let grid_infinite = LandmarkGrid::evenly_spaced(
        config.landmark_step,
        config.landmark_max,
        f64::INFINITY,
    )
    .expect("valid landmark grid");

    for rep in 0..config.replications {
        let mut rng = config.rng_for(rep);
        let (z_true, z_obs) = gen_functional_predictors(config, &mut rng);
        let survival = simulate_survival(&z_true, config.gamma, config, &mut rng);

        let mut run = |which: usize, fit: Result<TvflcmFit, ModelError>| {
            match fit {
                Ok(fit) => match eval_surface(&fit.surface, &pts, &pts) {
                    Ok(eval) => {
                        let ise: f64 = eval
                            .values
                            .iter()
                            .zip(truth.iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            / truth.len() as f64;
                        let name = accs[which].name;
                        accs[which].ises.push(ise);
                        accs[which].rows.push(fit.rows);
                        accs[which].expansion.push(fit.expansion_seconds);
                        accs[which].fitting.push(fit.fit_seconds);
                        records.push(ReplicationRecord {
                            replication: rep,
                            method: name.to_string(),
                            ise,
                            rows: fit.rows,
                            lambdas: fit.fit.lambdas.clone(),
                            expansion_seconds: fit.expansion_seconds,
                            fit_seconds: fit.fit_seconds,
                        });
                        if config.keep_surfaces {
                            surfaces.push((rep, name.to_string(), eval.values.clone()));
                        }
                        if name == METHOD_POISSON {
                            poisson_estimates.push((eval.values, eval.se));
                        }
                    }
                    Err(err) => {
                        accs[which].failures += 1;
                        failures.push(format!("rep {rep} {}: {err}", accs[which].name));
                    }
                },
                Err(err) => {
                    accs[which].failures += 1;
                    failures.push(format!("rep {rep} {}: {err}", accs[which].name));
                }
            }
        };

        if config.run_landmark_window {
            run(
                0,
                fit_tvflcm_landmark(&survival, &z_obs, &spec_template, &grid_window),
            );
        }
        if config.run_landmark_infinite {
            run(
                1,
                fit_tvflcm_landmark(&survival, &z_obs, &spec_template, &grid_infinite),
            );
        }
        if config.run_poisson {
            run(2, fit_tvflcm_poisson(&survival, &z_obs, &spec_template));
        }
    }

    let (coverage_pointwise, coverage_average) = if poisson_estimates.is_empty() {
        (None, None)
    } else {
        let (map, avg) = coverage(&poisson_estimates, &truth, Z_95)?;
        (Some(map), Some(avg))
    };

    let methods: Vec<MethodSummary> = accs
        .iter()
        .filter(|a| a.ises.len() + a.failures > 0)
        .map(|a| a.summary())
        .collect();
    Ok(StudyReport {
        gamma: config.gamma,
        n_subjects: config.n_subjects,
        replications: config.replications,
        seed: config.seed,
        methods,
        coverage_average,
        coverage_pointwise,
        records,
        failures,
        surfaces,
    })
}

/// Convenience: a single generated dataset (used by the CLI and tests).
pub fn generate_dataset(
    config: &SimulationConfig,
    replication: usize,
) -> (FunctionalPredictor, FunctionalPredictor, Vec<SurvivalRecord>) {
    let mut rng = config.rng_for(replication);
    let (z_true, z_obs) = gen_functional_predictors(config, &mut rng);
    let survival = simulate_survival(&z_true, config.gamma, config, &mut rng);
    (z_true, z_obs, survival)
}
