//! Model assembly for the two estimation routes.
//!
//! The exact route expands the partial likelihood over event-time risk
//! sets (each unique event time becomes a stratum whose design rows are
//! re-evaluated at that time); the landmark route stacks per-landmark
//! datasets and stratifies on landmark index. Both share the tensor
//! representation of `gamma(u, t)`, the time-margin identifiability
//! constraint, and the penalized Newton / smoothing-selection machinery.

use std::collections::HashMap;
use std::ops::Range;
use std::time::Instant;

use ndarray::{s, Array1, Array2, Axis};
use thiserror::Error;

use crate::basis::{
    evaluate_basis, make_basis, roughness_penalty, BasisFamily, BasisSpec, MarginalPenalty,
};
use crate::fit::{
    newton_fit, select_smoothing, FitError, FitResult, PenalizedProblem, PenaltyBlock,
    SmoothingOptions,
};
use crate::landmark::{
    build_landmark_dataset, center_by_landmark, LandmarkError, LandmarkGrid, StackedLandmarkData,
};
use crate::linalg;
use crate::survival::{
    apply_tie_jitter, poisson_expand, poisson_row_count, CumulativeHazard, FunctionalPredictor,
    JitterReport, SurvivalError, SurvivalRecord, TimeVaryingDesign,
};
use crate::tensor::{tensor_penalties, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Basis(#[from] crate::basis::BasisError),

    #[error(transparent)]
    Survival(#[from] SurvivalError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error(transparent)]
    Landmark(#[from] LandmarkError),

    #[error("invalid model specification: {0}")]
    BadSpec(String),

    #[error(
        "risk-set expansion would create {rows} rows x {cols} columns; \
         this exceeds the in-memory budget -- use the landmark route or \
         consult the cost planner"
    )]
    ExpansionTooLarge { rows: usize, cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Poisson,
    Landmark,
}

impl Route {
    pub fn name(&self) -> &'static str {
        match self {
            Route::Poisson => "poisson",
            Route::Landmark => "landmark",
        }
    }
}

/// Time-margin representation: a spline basis, or the constant margin used
/// by degenerate single-landmark fits.
#[derive(Debug, Clone)]
pub enum TimeMargin {
    Spline(BasisSpec),
    Constant,
}

impl TimeMargin {
    pub fn dim(&self) -> usize {
        match self {
            TimeMargin::Spline(spec) => spec.dimension,
            TimeMargin::Constant => 1,
        }
    }

    pub fn eval(&self, points: &[f64]) -> Result<Array2<f64>, ModelError> {
        match self {
            TimeMargin::Spline(spec) => Ok(evaluate_basis(spec, points)?.values),
            TimeMargin::Constant => Ok(Array2::ones((points.len(), 1))),
        }
    }

    fn penalty(&self) -> MarginalPenalty {
        match self {
            TimeMargin::Spline(spec) => roughness_penalty(spec),
            TimeMargin::Constant => MarginalPenalty {
                matrix: Array2::zeros((1, 1)),
                null_space_dim: 1,
            },
        }
    }
}

/// Knobs for one model fit.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub k_u: usize,
    pub k_s: usize,
    /// Basis dimension for time-varying scalar-covariate effects;
    /// `None` picks `min(5, number of strata)`, `Some(0)` or `Some(1)`
    /// keeps the effect constant over time.
    pub k_scalar: Option<usize>,
    pub u_domain: (f64, f64),
    pub t_domain: (f64, f64),
    /// Mean-center the functional predictor within each stratum (the
    /// identifiability mechanism: it absorbs the baseline-confounded
    /// component of the functional term).
    pub center: bool,
    /// Additionally reparameterize the time margin onto its sum-to-zero
    /// subspace. Off by default: the hard constraint also removes
    /// time-constant surface components, which the fitted model must
    /// keep; centering already handles the baseline confounding.
    pub constrain_time_margin: bool,
    /// Fixed smoothing parameters; `None` selects them by the restricted
    /// likelihood criterion.
    pub lambdas: Option<Vec<f64>>,
    pub smoothing: SmoothingOptions,
}

impl ModelSpec {
    pub fn new(k_u: usize, k_s: usize, u_domain: (f64, f64), t_domain: (f64, f64)) -> Self {
        ModelSpec {
            k_u,
            k_s,
            k_scalar: None,
            u_domain,
            t_domain,
            center: true,
            constrain_time_margin: false,
            lambdas: None,
            smoothing: SmoothingOptions::default(),
        }
    }
}

/// Tensor-product coefficient surface with its covariance.
///
/// `xi[[j, k]]` weighs `B_j(u) * B_k(t)`; the covariance follows the
/// vectorized order with the u index fastest (`column k * K_u + j`).
#[derive(Debug, Clone)]
pub struct CoefficientSurface {
    pub xi: Array2<f64>,
    pub u_spec: BasisSpec,
    pub t_margin: TimeMargin,
    pub covariance: Array2<f64>,
}

/// A time-varying scalar-covariate effect `beta(t)`.
#[derive(Debug, Clone)]
pub struct ScalarEffect {
    pub margin: TimeMargin,
    pub coefficients: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl ScalarEffect {
    /// `(beta(t), se(t))` on a set of times.
    pub fn eval(&self, times: &[f64]) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
        let b = self.margin.eval(times)?;
        let values = b.dot(&self.coefficients);
        let se = Array1::from_shape_fn(times.len(), |i| {
            let row = b.row(i);
            row.dot(&self.covariance.dot(&row)).max(0.0).sqrt()
        });
        Ok((values, se))
    }
}

/// One fitted time-varying functional linear Cox model.
#[derive(Debug, Clone)]
pub struct TvflcmFit {
    pub route: Route,
    pub surface: CoefficientSurface,
    pub scalar_effects: Vec<ScalarEffect>,
    pub fit: FitResult,
    /// Landmark grid actually used (landmark route only).
    pub grid: Option<LandmarkGrid>,
    /// Per-stratum centering means subtracted from the functional rows.
    pub centering: Vec<Array1<f64>>,
    pub u_grid: Vec<f64>,
    pub u_weights: Array1<f64>,
    /// Cumulative baseline hazard per stratum (one combined hazard for
    /// the risk-set expansion route).
    pub baselines: Vec<CumulativeHazard>,
    /// Stratum boundaries in time: `(s_l, s_l + w_l)` for landmarks, the
    /// full follow-up range for the expansion route.
    pub windows: Vec<(f64, f64)>,
    pub rows: usize,
    pub expansion_seconds: f64,
    pub fit_seconds: f64,
    pub jitter: JitterReport,
    pub dropped_landmarks: Vec<(usize, f64)>,
    pub edf_tensor: f64,
    pub edf_scalar: Vec<f64>,
}

impl TvflcmFit {
    /// Linear predictor for a subject's functional row and scalar
    /// covariates inside stratum `l`, using that stratum's centering.
    pub fn eta_for(
        &self,
        z_row: &Array1<f64>,
        x: &[f64],
        stratum: usize,
        at_time: f64,
    ) -> Result<f64, ModelError> {
        let j = self.u_grid.len();
        if z_row.len() != j {
            return Err(ModelError::BadSpec(format!(
                "functional row has {} points, fit used {j}",
                z_row.len()
            )));
        }
        let centered = match self.centering.get(stratum) {
            Some(m) => z_row - m,
            None => z_row.clone(),
        };
        let bu = evaluate_basis(&self.surface.u_spec, &self.u_grid)?.values;
        let bt = self.surface.t_margin.eval(&[at_time])?;
        // integral of centered Z against gamma(., at_time)
        let mut a = Array1::<f64>::zeros(self.surface.xi.nrows());
        for v in 0..j {
            let w = centered[v] * self.u_weights[v];
            for jj in 0..a.len() {
                a[jj] += w * bu[[v, jj]];
            }
        }
        let mut eta = 0.0;
        for k in 0..self.surface.xi.ncols() {
            for jj in 0..a.len() {
                eta += self.surface.xi[[jj, k]] * a[jj] * bt[[0, k]];
            }
        }
        for (c, effect) in self.scalar_effects.iter().enumerate() {
            let (value, _) = effect.eval(&[at_time])?;
            eta += x.get(c).copied().unwrap_or(0.0) * value[0];
        }
        Ok(eta)
    }
}

// ----------------------------------------------------------------------
// Shared layout assembly
// ----------------------------------------------------------------------

struct ScalarBlockInfo {
    cols: Range<usize>,
    margin: TimeMargin,
    lambda_index: Option<usize>,
}

pub(crate) struct Layout {
    p: usize,
    tensor_cols: Range<usize>,
    /// Maps constrained tensor coefficients to the full `K_u * K_s` layout.
    transform: Option<Array2<f64>>,
    u_spec: BasisSpec,
    t_margin: TimeMargin,
    scalars: Vec<ScalarBlockInfo>,
    penalties: Vec<PenaltyBlock>,
}

fn build_layout(
    spec: &ModelSpec,
    bt_constraint_rows: &Array2<f64>,
    n_scalars: usize,
    default_k_scalar: usize,
) -> Result<Layout, ModelError> {
    let u_spec = make_basis(BasisFamily::CyclicCubic, spec.u_domain, spec.k_u)?;
    let t_margin = if spec.k_s <= 1 {
        TimeMargin::Constant
    } else {
        TimeMargin::Spline(make_basis(
            BasisFamily::CubicRegression,
            spec.t_domain,
            spec.k_s,
        )?)
    };
    let k_u = spec.k_u;
    let k_s = t_margin.dim();
    let pu = roughness_penalty(&u_spec);
    let pt = t_margin.penalty();
    let (mut penalty_u, mut penalty_t) = tensor_penalties(&pu, &pt);

    let transform = if spec.constrain_time_margin && k_s >= 2 {
        let col_sums = bt_constraint_rows.sum_axis(Axis(0));
        let c = col_sums
            .into_shape_with_order((1, k_s))
            .expect("row vector");
        let t_s = linalg::constraint_null_basis(c.view());
        let t = linalg::kron(t_s.view(), Array2::eye(k_u).view());
        penalty_u = linalg::congruence(t.view(), penalty_u.view());
        penalty_t = linalg::congruence(t.view(), penalty_t.view());
        Some(t)
    } else {
        None
    };
    let p_tensor = transform.as_ref().map_or(k_u * k_s, |t| t.ncols());

    // effects over fewer than 3 strata cannot support a spline margin
    let k_scalar_eff = spec
        .k_scalar
        .unwrap_or(if default_k_scalar >= 3 { default_k_scalar } else { 1 });
    let scalar_margin = if n_scalars == 0 || k_scalar_eff <= 1 {
        TimeMargin::Constant
    } else if k_scalar_eff == 2 {
        return Err(ModelError::BadSpec(
            "scalar effect basis dimension 2 is not representable; use 1 or >= 3".into(),
        ));
    } else {
        TimeMargin::Spline(make_basis(
            BasisFamily::CubicRegression,
            spec.t_domain,
            k_scalar_eff,
        )?)
    };

    let mut p = p_tensor;
    let mut lambda_count = if k_s >= 2 { 2 } else { 1 };
    let mut scalars = Vec::new();
    for _ in 0..n_scalars {
        let dim = scalar_margin.dim();
        let lambda_index = if dim > 1 {
            let idx = lambda_count;
            lambda_count += 1;
            Some(idx)
        } else {
            None
        };
        scalars.push(ScalarBlockInfo {
            cols: p..p + dim,
            margin: scalar_margin.clone(),
            lambda_index,
        });
        p += dim;
    }

    // embed penalties into the full layout
    let mut penalties = Vec::new();
    let mut embed = |m: &Array2<f64>, cols: Range<usize>, lambda_index: usize| {
        let mut full = Array2::zeros((p, p));
        full.slice_mut(s![cols.clone(), cols.clone()]).assign(m);
        penalties.push(PenaltyBlock {
            matrix: full,
            lambda_index,
        });
    };
    embed(&penalty_u, 0..p_tensor, 0);
    if k_s >= 2 {
        embed(&penalty_t, 0..p_tensor, 1);
    }
    for block in &scalars {
        if let (Some(idx), TimeMargin::Spline(spec)) = (block.lambda_index, &block.margin) {
            embed(&roughness_penalty(spec).matrix, block.cols.clone(), idx);
        }
    }

    Ok(Layout {
        p,
        tensor_cols: 0..p_tensor,
        transform,
        u_spec,
        t_margin,
        scalars,
        penalties,
    })
}

impl Layout {
    fn n_lambdas(&self) -> usize {
        let mut n = if self.t_margin.dim() >= 2 { 2 } else { 1 };
        for b in &self.scalars {
            if b.lambda_index.is_some() {
                n += 1;
            }
        }
        n
    }

    fn extract(
        &self,
        fit: &FitResult,
    ) -> (CoefficientSurface, Vec<ScalarEffect>, f64, Vec<f64>) {
        let k_u = self.u_spec.dimension;
        let k_s = self.t_margin.dim();
        let theta_tensor = fit
            .coefficients
            .slice(s![self.tensor_cols.clone()])
            .to_owned();
        let cov_tensor = fit
            .covariance
            .slice(s![self.tensor_cols.clone(), self.tensor_cols.clone()])
            .to_owned();
        let (xi_vec, cov_full) = match &self.transform {
            Some(t) => (t.dot(&theta_tensor), t.dot(&cov_tensor.dot(&t.t()))),
            None => (theta_tensor, cov_tensor),
        };
        let mut xi = Array2::zeros((k_u, k_s));
        for k in 0..k_s {
            for j in 0..k_u {
                xi[[j, k]] = xi_vec[k * k_u + j];
            }
        }
        let surface = CoefficientSurface {
            xi,
            u_spec: self.u_spec.clone(),
            t_margin: self.t_margin.clone(),
            covariance: cov_full,
        };
        let effects: Vec<ScalarEffect> = self
            .scalars
            .iter()
            .map(|b| ScalarEffect {
                margin: b.margin.clone(),
                coefficients: fit.coefficients.slice(s![b.cols.clone()]).to_owned(),
                covariance: fit
                    .covariance
                    .slice(s![b.cols.clone(), b.cols.clone()])
                    .to_owned(),
            })
            .collect();
        let edf_tensor = fit
            .edf_by_column
            .slice(s![self.tensor_cols.clone()])
            .sum();
        let edf_scalar: Vec<f64> = self
            .scalars
            .iter()
            .map(|b| fit.edf_by_column.slice(s![b.cols.clone()]).sum())
            .collect();
        (surface, effects, edf_tensor, edf_scalar)
    }
}

fn run_fit(
    problem: &PenalizedProblem,
    spec: &ModelSpec,
    n_lambdas: usize,
) -> Result<FitResult, ModelError> {
    match &spec.lambdas {
        Some(fixed) => {
            if fixed.len() != n_lambdas {
                return Err(ModelError::BadSpec(format!(
                    "{} fixed smoothing parameters supplied, model has {n_lambdas}",
                    fixed.len()
                )));
            }
            Ok(newton_fit(problem, fixed, None)?)
        }
        None => {
            if n_lambdas == 0 {
                Ok(newton_fit(problem, &[], None)?)
            } else {
                Ok(select_smoothing(problem, &spec.smoothing)?.fit)
            }
        }
    }
}

// ----------------------------------------------------------------------
// Landmark route
// ----------------------------------------------------------------------

/// Fits the super landmark model: one stratified penalized Cox fit over
/// the stacked landmark dataset.
pub fn fit_tvflcm_landmark(
    records: &[SurvivalRecord],
    z: &FunctionalPredictor,
    spec: &ModelSpec,
    grid: &LandmarkGrid,
) -> Result<TvflcmFit, ModelError> {
    let start = Instant::now();
    let (records, jitter) = apply_tie_jitter(records);
    let mut data = build_landmark_dataset(&records, z, grid)?;
    if spec.center {
        data = center_by_landmark(data);
    }
    let (problem, layout) = assemble_landmark_problem(&data, spec)?;
    let expansion_seconds = start.elapsed().as_secs_f64();

    let fit_start = Instant::now();
    let fit = run_fit(&problem, spec, layout.n_lambdas())?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let (surface, scalar_effects, edf_tensor, edf_scalar) = layout.extract(&fit);
    let windows = data
        .grid
        .s
        .iter()
        .zip(&data.grid.w)
        .map(|(&s, &w)| (s, s + w))
        .collect();
    Ok(TvflcmFit {
        route: Route::Landmark,
        surface,
        scalar_effects,
        baselines: fit.baselines.clone(),
        fit,
        grid: Some(data.grid.clone()),
        centering: data.centering_means.clone(),
        u_grid: data.u_grid.clone(),
        u_weights: data.lmat.clone(),
        windows,
        rows: data.n_rows(),
        expansion_seconds,
        fit_seconds,
        jitter,
        dropped_landmarks: data.report.dropped.clone(),
        edf_tensor,
        edf_scalar,
    })
}

/// Builds the stratified problem from a stacked dataset (exposed for the
/// degeneracy and equivalence tests).
pub(crate) fn assemble_landmark_problem(
    data: &StackedLandmarkData,
    spec: &ModelSpec,
) -> Result<(PenalizedProblem, Layout), ModelError> {
    let n_scalars = data.x.ncols();
    let default_k_scalar = 5usize.min(data.n_strata());
    // time-margin rows for both the design and the constraint
    let t_margin_probe = if spec.k_s <= 1 {
        TimeMargin::Constant
    } else {
        TimeMargin::Spline(make_basis(
            BasisFamily::CubicRegression,
            spec.t_domain,
            spec.k_s,
        )?)
    };
    let bt = t_margin_probe.eval(&data.svec)?;
    let layout = build_layout(spec, &bt, n_scalars, default_k_scalar)?;

    let bu = evaluate_basis(&layout.u_spec, &data.u_grid)?.values;
    let zl = data.zlmat();
    let raw_tensor = crate::tensor::tensor_design(bu.view(), bt.view(), zl.view())?;
    let tensor = match &layout.transform {
        Some(t) => raw_tensor.dot(t),
        None => raw_tensor,
    };

    let n = data.n_rows();
    let mut design = Array2::zeros((n, layout.p));
    design
        .slice_mut(s![.., layout.tensor_cols.clone()])
        .assign(&tensor);
    for (c, block) in layout.scalars.iter().enumerate() {
        let phi = block.margin.eval(&data.svec)?;
        for r in 0..n {
            let xv = data.x[[r, c]];
            for (k, col) in block.cols.clone().enumerate() {
                design[[r, col]] = xv * phi[[r, k]];
            }
        }
    }

    let problem = PenalizedProblem::cox_stratified(
        design,
        data.capped_time.clone(),
        data.d.clone(),
        data.stratum.clone(),
        layout.penalties.clone(),
    )?;
    Ok((problem, layout))
}

/// A per-landmark separate fit: the u-margin coefficient curve at one
/// landmark time.
#[derive(Debug, Clone)]
pub struct SeparateLandmarkFit {
    pub s: f64,
    pub gamma_u: Array1<f64>,
    pub fit: FitResult,
}

/// Fits each landmark's dataset independently (`K_s = 1` per fit), the
/// separate-model estimation mode.
pub fn fit_separate_landmarks(
    records: &[SurvivalRecord],
    z: &FunctionalPredictor,
    spec: &ModelSpec,
    grid: &LandmarkGrid,
) -> Result<Vec<SeparateLandmarkFit>, ModelError> {
    let (records, _) = apply_tie_jitter(records);
    let mut data = build_landmark_dataset(&records, z, grid)?;
    if spec.center {
        data = center_by_landmark(data);
    }
    let mut out = Vec::new();
    for l in 0..data.n_strata() {
        let rows: Vec<usize> = (0..data.n_rows())
            .filter(|&r| data.stratum[r] == l)
            .collect();
        let sub = StackedLandmarkData {
            subject: rows.iter().map(|&r| data.subject[r]).collect(),
            id: rows.iter().map(|&r| data.id[r]).collect(),
            capped_time: rows.iter().map(|&r| data.capped_time[r]).collect(),
            d: rows.iter().map(|&r| data.d[r]).collect(),
            x: data.x.select(Axis(0), &rows),
            svec: rows.iter().map(|&r| data.svec[r]).collect(),
            stratum: vec![0; rows.len()],
            zmat: data.zmat.select(Axis(0), &rows),
            u_grid: data.u_grid.clone(),
            lmat: data.lmat.clone(),
            grid: LandmarkGrid {
                s: vec![data.grid.s[l]],
                w: vec![data.grid.w[l]],
            },
            centered: data.centered,
            centering_means: vec![data
                .centering_means
                .get(l)
                .cloned()
                .unwrap_or_else(|| Array1::zeros(data.u_grid.len()))],
            report: Default::default(),
        };
        let mut sub_spec = spec.clone();
        sub_spec.k_s = 1;
        sub_spec.constrain_time_margin = false;
        let (problem, layout) = assemble_landmark_problem(&sub, &sub_spec)?;
        let fit = run_fit(&problem, &sub_spec, layout.n_lambdas())?;
        let gamma_u = fit
            .coefficients
            .slice(s![layout.tensor_cols.clone()])
            .to_owned();
        out.push(SeparateLandmarkFit {
            s: data.grid.s[l],
            gamma_u,
            fit,
        });
    }
    Ok(out)
}

// ----------------------------------------------------------------------
// Risk-set expansion route
// ----------------------------------------------------------------------

struct ExpansionDesign {
    /// Per-subject u-integrals of the functional rows, `N x K_u`.
    a: Array2<f64>,
    /// Scalar covariates, `N x n_scalars`.
    x: Array2<f64>,
    /// Keyed by event-time bits: risk-set mean of `a`, the reduced tensor
    /// map `G_t` (`K_u x p_tensor`), and the scalar margin row.
    per_time: HashMap<u64, PerTime>,
    p: usize,
    tensor_cols: Range<usize>,
    scalar_cols: Vec<Range<usize>>,
}

struct PerTime {
    a_mean: Array1<f64>,
    g: Array2<f64>,
    scalar_rows: Vec<Array1<f64>>,
}

impl TimeVaryingDesign for ExpansionDesign {
    fn n_cols(&self) -> usize {
        self.p
    }

    fn fill_row(&self, subject: usize, time: f64, out: &mut [f64]) {
        let entry = self
            .per_time
            .get(&time.to_bits())
            .expect("design evaluated at an unknown event time");
        let a_c = &self.a.row(subject) - &entry.a_mean;
        let g_cols = entry.g.ncols();
        for (col, slot) in self.tensor_cols.clone().zip(0..g_cols) {
            let mut acc = 0.0;
            for j in 0..a_c.len() {
                acc += a_c[j] * entry.g[[j, slot]];
            }
            out[col] = acc;
        }
        for (c, cols) in self.scalar_cols.iter().enumerate() {
            let xv = self.x[[subject, c]];
            let phi = &entry.scalar_rows[c];
            for (k, col) in cols.clone().enumerate() {
                out[col] = xv * phi[k];
            }
        }
    }
}

/// Fits the exact TV-FLCM by risk-set expansion: each unique event time
/// becomes a stratum, the tensor design is re-evaluated at that time, and
/// the per-stratum baseline is profiled out of the Poisson likelihood.
pub fn fit_tvflcm_poisson(
    records: &[SurvivalRecord],
    z: &FunctionalPredictor,
    spec: &ModelSpec,
) -> Result<TvflcmFit, ModelError> {
    let start = Instant::now();
    let (records, jitter) = apply_tie_jitter(records);
    let n = records.len();
    if z.n_subjects() != n {
        return Err(ModelError::BadSpec(format!(
            "functional predictor has {} rows, records {n}",
            z.n_subjects()
        )));
    }

    // event times ascending
    let mut event_idx: Vec<usize> = (0..n).filter(|&i| records[i].delta == 1).collect();
    event_idx.sort_by(|&a, &b| records[a].y.partial_cmp(&records[b].y).unwrap());
    if event_idx.is_empty() {
        return Err(ModelError::BadSpec("no events to fit".into()));
    }
    let event_times: Vec<f64> = event_idx.iter().map(|&i| records[i].y).collect();

    // layout: constraint rows weight each event time by its risk-set size
    let risk_sizes: Vec<usize> = event_times
        .iter()
        .map(|&t| records.iter().filter(|r| r.y >= t).count())
        .collect();
    let rows_expected = poisson_row_count(&records);
    let t_margin_probe = if spec.k_s <= 1 {
        TimeMargin::Constant
    } else {
        TimeMargin::Spline(make_basis(
            BasisFamily::CubicRegression,
            spec.t_domain,
            spec.k_s,
        )?)
    };
    let bt_events = t_margin_probe.eval(&event_times)?;
    let k_s = t_margin_probe.dim();
    let mut constraint_rows = Array2::zeros((event_times.len(), k_s));
    for (k, &m) in risk_sizes.iter().enumerate() {
        for c in 0..k_s {
            constraint_rows[[k, c]] = bt_events[[k, c]] * m as f64;
        }
    }
    let n_scalars = records.first().map_or(0, |r| r.x.len());
    let layout = build_layout(spec, &constraint_rows, n_scalars, 5)?;
    if rows_expected.saturating_mul(layout.p) > 250_000_000 {
        return Err(ModelError::ExpansionTooLarge {
            rows: rows_expected,
            cols: layout.p,
        });
    }

    // per-subject u-integrals
    let bu = evaluate_basis(&layout.u_spec, &z.grid)?.values;
    let mut zw = z.values.clone();
    for mut row in zw.axis_iter_mut(Axis(0)) {
        for (v, w) in row.iter_mut().zip(z.weights.iter()) {
            *v *= w;
        }
    }
    let a = zw.dot(&bu); // N x K_u

    // risk-set means of `a` per event time (centering), largest time first
    let k_u = layout.u_spec.dimension;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| records[j].y.partial_cmp(&records[i].y).unwrap());
    let mut cum = Array1::<f64>::zeros(k_u);
    let mut count = 0usize;
    let mut per_time = HashMap::new();
    let mut ptr = 0usize;
    for (k, &t) in event_times.iter().enumerate().rev() {
        while ptr < n && records[order[ptr]].y >= t {
            cum += &a.row(order[ptr]);
            count += 1;
            ptr += 1;
        }
        let a_mean = if spec.center && count > 0 {
            &cum / count as f64
        } else {
            Array1::zeros(k_u)
        };
        // reduced map: row = a_centered . G with
        // G[j, col] = sum_k Bt[k] * T[(k * K_u + j), col]
        let p_tensor = layout.tensor_cols.len();
        let mut g = Array2::zeros((k_u, p_tensor));
        match &layout.transform {
            Some(tr) => {
                for j in 0..k_u {
                    for col in 0..p_tensor {
                        let mut acc = 0.0;
                        for kk in 0..k_s {
                            acc += bt_events[[k, kk]] * tr[[kk * k_u + j, col]];
                        }
                        g[[j, col]] = acc;
                    }
                }
            }
            None => {
                for j in 0..k_u {
                    for kk in 0..k_s {
                        g[[j, kk * k_u + j]] = bt_events[[k, kk]];
                    }
                }
            }
        }
        let scalar_rows: Vec<Array1<f64>> = layout
            .scalars
            .iter()
            .map(|b| {
                let phi = b.margin.eval(&[t]).expect("event time inside t domain");
                Array1::from_iter(phi.row(0).iter().copied())
            })
            .collect();
        per_time.insert(t.to_bits(), PerTime { a_mean, g, scalar_rows });
    }

    let x = Array2::from_shape_fn((n, n_scalars), |(i, c)| records[i].x[c]);
    let design_source = ExpansionDesign {
        a,
        x,
        per_time,
        p: layout.p,
        tensor_cols: layout.tensor_cols.clone(),
        scalar_cols: layout.scalars.iter().map(|b| b.cols.clone()).collect(),
    };

    let expansion = poisson_expand(&design_source, &records)?;
    let rows = expansion.n_rows();
    debug_assert_eq!(rows, rows_expected);
    let problem = PenalizedProblem::poisson(&expansion, &records, layout.penalties.clone())?;
    let expansion_seconds = start.elapsed().as_secs_f64();

    let fit_start = Instant::now();
    let fit = run_fit(&problem, spec, layout.n_lambdas())?;
    let fit_seconds = fit_start.elapsed().as_secs_f64();

    let (surface, scalar_effects, edf_tensor, edf_scalar) = layout.extract(&fit);

    // combine single-jump per-stratum baselines into one hazard
    let mut jumps = Vec::new();
    for (k, h) in fit.baselines.iter().enumerate() {
        for (t, j) in h.times.iter().zip(&h.jumps) {
            debug_assert!((*t - expansion.stratum_times[k]).abs() <= f64::EPSILON * 4.0);
            jumps.push((*t, *j));
        }
    }
    let combined = CumulativeHazard::from_jumps(jumps);
    let t_max = records.iter().fold(0.0_f64, |m, r| m.max(r.y));

    Ok(TvflcmFit {
        route: Route::Poisson,
        surface,
        scalar_effects,
        baselines: vec![combined],
        fit,
        grid: None,
        centering: Vec::new(),
        u_grid: z.grid.clone(),
        u_weights: z.weights.clone(),
        windows: vec![(0.0, t_max)],
        rows,
        expansion_seconds,
        fit_seconds,
        jitter,
        dropped_landmarks: Vec::new(),
        edf_tensor,
        edf_scalar,
    })
}

// ----------------------------------------------------------------------
// Cost planner
// ----------------------------------------------------------------------

/// Predicted dataset sizes and work estimates for both routes.
#[derive(Debug, Clone)]
pub struct CostPlan {
    pub poisson_rows: usize,
    pub landmark_rows: usize,
    pub coefficients: usize,
    /// Proportional work: rows times squared coefficient count.
    pub poisson_flops: f64,
    pub landmark_flops: f64,
}

/// Coarse planning model (documented approximations): the expansion has
/// about `N^2 * event_rate / 2` rows when events are spread uniformly and
/// there are no ties; the landmark dataset has `sum_l N * (1 - event_rate
/// * l / L)` rows under linearly declining risk.
pub fn cost_planner(
    n: usize,
    _j: usize,
    k_u: usize,
    k_s: usize,
    event_rate: f64,
    n_landmarks: usize,
) -> CostPlan {
    let p = (k_u * k_s) as f64;
    let poisson_rows = ((n as f64) * (n as f64) * event_rate / 2.0).round() as usize;
    let l = n_landmarks.max(1) as f64;
    let landmark_rows: f64 = (0..n_landmarks.max(1))
        .map(|li| (n as f64) * (1.0 - event_rate * li as f64 / l).max(0.0))
        .sum();
    CostPlan {
        poisson_rows,
        landmark_rows: landmark_rows.round() as usize,
        coefficients: k_u * k_s,
        poisson_flops: poisson_rows as f64 * p * p,
        landmark_flops: landmark_rows * p * p,
    }
}
