//! Penalized likelihood fitting.
//!
//! One likelihood core serves both estimation routes. The stratified Cox
//! partial likelihood is evaluated with risk sets accumulated inside each
//! stratum; the pseudo-Poisson route arrives here as expanded risk-set
//! groups whose per-stratum intercepts have been profiled out, which makes
//! its likelihood identical to a stratified partial likelihood up to an
//! additive constant. Newton iterations with step halving maximize the
//! penalized objective
//!
//! `ppl(theta) = loglik(theta) - 1/2 sum_m lambda_m theta' P_m theta`
//!
//! and smoothing parameters maximize the Laplace-approximate restricted
//! likelihood `ppl(theta_hat) + 1/2 logdet+ S_lambda - 1/2 logdet(H + S_lambda)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::linalg;
use crate::survival::{CumulativeHazard, PseudoPoissonData, SurvivalRecord};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "Newton iteration did not converge after {iterations} iterations \
         (last gradient norm {grad_norm:.3e}); objective trace: {trace:?}"
    )]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        trace: Vec<f64>,
    },

    #[error(
        "penalized Hessian is singular along coefficient {column} \
         (smallest eigenvalue {eigenvalue:.3e}); the model is unidentifiable there"
    )]
    SingularHessian { column: usize, eigenvalue: f64 },

    #[error("smoothing criterion was non-finite at every probed lambda")]
    CriterionNonFinite,

    #[error("problem has no penalty blocks to select smoothing for")]
    NoPenalties,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// One quadratic penalty `lambda[index] * theta' matrix theta` (full
/// coefficient layout, zero outside the block's columns).
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub matrix: Array2<f64>,
    pub lambda_index: usize,
}

/// Outcome layout for the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodData {
    /// Stratified Cox partial likelihood on per-row survival outcomes.
    CoxStratified,
    /// Risk-set groups from the pseudo-Poisson expansion; per-stratum
    /// intercepts are profiled out, leaving the same risk-set likelihood.
    Poisson,
}

/// A fully assembled penalized fitting problem.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub design: Array2<f64>,
    pub kind: LikelihoodData,
    times: Vec<f64>,
    events: Vec<u8>,
    strata: Vec<usize>,
    pub penalties: Vec<PenaltyBlock>,
    pub n_lambdas: usize,
    /// Rows of each stratum sorted ascending in time.
    strata_rows: Vec<Vec<usize>>,
    /// For the expansion layout: each stratum is one contiguous row range
    /// forming a single risk set with exactly one event, which admits a
    /// much cheaper accumulation than the general sorted-risk-set walk.
    blocks: Option<Vec<(usize, usize, usize)>>,
}

impl PenalizedProblem {
    /// Stratified Cox problem: one row per subject-at-landmark (or plain
    /// subject), with `times` the capped observation times and `events`
    /// the within-window indicators.
    pub fn cox_stratified(
        design: Array2<f64>,
        times: Vec<f64>,
        events: Vec<u8>,
        strata: Vec<usize>,
        penalties: Vec<PenaltyBlock>,
    ) -> Result<Self, FitError> {
        let n = design.nrows();
        if times.len() != n || events.len() != n || strata.len() != n {
            return Err(FitError::DimensionMismatch(format!(
                "design has {n} rows but outcomes have lengths {}/{}/{}",
                times.len(),
                events.len(),
                strata.len()
            )));
        }
        Self::build(design, LikelihoodData::CoxStratified, times, events, strata, penalties)
    }

    /// Profiled pseudo-Poisson problem from a risk-set expansion.
    pub fn poisson(
        expansion: &PseudoPoissonData,
        records: &[SurvivalRecord],
        penalties: Vec<PenaltyBlock>,
    ) -> Result<Self, FitError> {
        let n = expansion.n_rows();
        let mut strata = vec![0usize; n];
        for k in 0..expansion.stratum_count() {
            for r in expansion.stratum_starts[k]..expansion.stratum_starts[k + 1] {
                strata[r] = k;
            }
        }
        let times: Vec<f64> = expansion.subject.iter().map(|&j| records[j].y).collect();
        Self::build(
            expansion.design.clone(),
            LikelihoodData::Poisson,
            times,
            expansion.outcome.clone(),
            strata,
            penalties,
        )
    }

    fn build(
        design: Array2<f64>,
        kind: LikelihoodData,
        times: Vec<f64>,
        events: Vec<u8>,
        strata: Vec<usize>,
        penalties: Vec<PenaltyBlock>,
    ) -> Result<Self, FitError> {
        let p = design.ncols();
        let n_lambdas = penalties
            .iter()
            .map(|b| b.lambda_index + 1)
            .max()
            .unwrap_or(0);
        for (i, b) in penalties.iter().enumerate() {
            if b.matrix.dim() != (p, p) {
                return Err(FitError::DimensionMismatch(format!(
                    "penalty block {i} is {:?}, expected ({p}, {p})",
                    b.matrix.dim()
                )));
            }
        }
        let n_strata = strata.iter().copied().max().map_or(0, |m| m + 1);
        let mut strata_rows: Vec<Vec<usize>> = vec![Vec::new(); n_strata];
        for (r, &s) in strata.iter().enumerate() {
            strata_rows[s].push(r);
        }
        for rows in &mut strata_rows {
            rows.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
        }
        // single-event contiguous strata (the expansion layout), detected
        // in one pass: stratum labels must step 0, 1, 2, ... without
        // interleaving and each range must hold exactly one event
        let blocks = if kind == LikelihoodData::Poisson && !strata.is_empty() {
            let mut ranges: Vec<(usize, usize, usize)> = Vec::with_capacity(n_strata);
            let mut valid = strata[0] == 0;
            let mut start = 0usize;
            let mut event_row: Option<usize> = None;
            for r in 0..strata.len() {
                if r > 0 && strata[r] != strata[r - 1] {
                    if strata[r] != strata[r - 1] + 1 {
                        valid = false;
                        break;
                    }
                    match event_row.take() {
                        Some(e) => ranges.push((start, r, e)),
                        None => {
                            valid = false;
                            break;
                        }
                    }
                    start = r;
                }
                if events[r] == 1 {
                    if event_row.is_some() {
                        valid = false;
                        break;
                    }
                    event_row = Some(r);
                }
            }
            if valid {
                match event_row {
                    Some(e) => ranges.push((start, strata.len(), e)),
                    None => valid = false,
                }
            }
            if valid && ranges.len() == n_strata {
                Some(ranges)
            } else {
                None
            }
        } else {
            None
        };
        Ok(PenalizedProblem {
            design,
            kind,
            times,
            events,
            strata,
            penalties,
            n_lambdas,
            strata_rows,
            blocks,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }

    pub fn stratum_of_row(&self, row: usize) -> usize {
        self.strata[row]
    }

    /// Assembles `S_lambda = sum_m lambda[m] P_m`.
    pub fn penalty_matrix(&self, lambdas: &[f64]) -> Array2<f64> {
        let p = self.n_coefficients();
        let mut s = Array2::zeros((p, p));
        for block in &self.penalties {
            s.scaled_add(lambdas[block.lambda_index], &block.matrix);
        }
        s
    }

    /// Log-likelihood, gradient, and negated Hessian (`H`, positive
    /// semi-definite) at `theta`, all in coefficient space.
    pub fn loglik_parts(&self, theta: &Array1<f64>) -> Result<(f64, Array1<f64>, Array2<f64>), FitError> {
        let n = self.n_rows();
        let p = self.n_coefficients();
        let eta = self.design.dot(theta);
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(FitError::NonFinite("linear predictor"));
        }

        let mut value = 0.0;
        let mut weights = vec![0.0_f64; n];
        let mut resid = Array1::zeros(n);
        // risk-set means to subtract as rank-one corrections
        let mut event_means: Vec<Array1<f64>> = Vec::new();

        if let Some(blocks) = &self.blocks {
            // contiguous single-event strata: one softmax per block
            let eta_slice = eta.as_slice().expect("eta is contiguous");
            for &(start, end, event_row) in blocks {
                let block = &eta_slice[start..end];
                let m_shift = block.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
                let mut s0 = 0.0;
                for (offset, &e) in block.iter().enumerate() {
                    let w = (e - m_shift).exp();
                    s0 += w;
                    weights[start + offset] = w;
                }
                value += eta_slice[event_row] - s0.ln() - m_shift;
                let pi = Array1::from_shape_fn(end - start, |k| weights[start + k] / s0);
                for (offset, w) in weights[start..end].iter_mut().enumerate() {
                    *w /= s0;
                    resid[start + offset] = f64::from(u8::from(start + offset == event_row)) - *w;
                }
                let xbar = self
                    .design
                    .slice(s![start..end, ..])
                    .t()
                    .dot(&pi);
                event_means.push(xbar);
            }
        } else {
            for rows in &self.strata_rows {
                if rows.is_empty() {
                    continue;
                }
                let m_shift = rows.iter().fold(f64::NEG_INFINITY, |m, &r| m.max(eta[r]));
                // descending pass: accumulate risk sums, record event states
                let mut s0 = 0.0;
                let mut s1 = Array1::<f64>::zeros(p);
                // (time, 1/s0_at_event) in descending order of time
                let mut event_s0: Vec<(f64, f64)> = Vec::new();
                let mut i = rows.len();
                while i > 0 {
                    // group of equal times
                    let hi = i;
                    let t = self.times[rows[i - 1]];
                    while i > 0 && self.times[rows[i - 1]] == t {
                        i -= 1;
                    }
                    for &r in &rows[i..hi] {
                        let w = (eta[r] - m_shift).exp();
                        s0 += w;
                        s1.scaled_add(w, &self.design.row(r));
                    }
                    for &r in &rows[i..hi] {
                        if self.events[r] == 1 {
                            value += eta[r] - s0.ln() - m_shift;
                            event_s0.push((t, 1.0 / s0));
                            event_means.push(&s1 / s0);
                        }
                    }
                }
                // ascending pass: counting-process weights per row
                event_s0.reverse();
                let mut prefix = 0.0;
                let mut ev = 0;
                let mut i = 0;
                while i < rows.len() {
                    let t = self.times[rows[i]];
                    while ev < event_s0.len() && event_s0[ev].0 <= t {
                        prefix += event_s0[ev].1;
                        ev += 1;
                    }
                    while i < rows.len() && self.times[rows[i]] == t {
                        let r = rows[i];
                        weights[r] = (eta[r] - m_shift).exp() * prefix;
                        resid[r] = self.events[r] as f64 - weights[r];
                        i += 1;
                    }
                }
            }
        }

        let grad = self.design.t().dot(&resid);

        // H = X' W X - sum_e xbar xbar', assembled by chunked GEMM
        let mut hess = Array2::zeros((p, p));
        let chunk = 32_768;
        let mut buf = Array2::zeros((chunk, p));
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let rows = end - start;
            {
                let mut b = buf.slice_mut(s![..rows, ..]);
                for (k, mut dst) in b.axis_iter_mut(Axis(0)).enumerate() {
                    let w = weights[start + k].max(0.0).sqrt();
                    let dst = dst.as_slice_mut().expect("buffer is contiguous");
                    let src = self.design.row(start + k);
                    let src = src.as_slice().expect("design is contiguous");
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s * w;
                    }
                }
            }
            let b = buf.slice(s![..rows, ..]);
            ndarray::linalg::general_mat_mul(1.0, &b.t(), &b, 1.0, &mut hess);
            start = end;
        }
        for xbar in &event_means {
            let xb = xbar.view().into_shape_with_order((p, 1)).unwrap();
            ndarray::linalg::general_mat_mul(-1.0, &xb, &xb.t(), 1.0, &mut hess);
        }
        if !value.is_finite() {
            return Err(FitError::NonFinite("log-likelihood"));
        }
        Ok((value, grad, hess))
    }

    /// Log-likelihood value alone (used by the line search).
    fn loglik_value(&self, theta: &Array1<f64>) -> Result<f64, FitError> {
        let eta = self.design.dot(theta);
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(FitError::NonFinite("linear predictor"));
        }
        let mut value = 0.0;
        if let Some(blocks) = &self.blocks {
            let eta_slice = eta.as_slice().expect("eta is contiguous");
            for &(start, end, event_row) in blocks {
                let block = &eta_slice[start..end];
                let m_shift = block.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
                let s0: f64 = block.iter().map(|&e| (e - m_shift).exp()).sum();
                value += eta_slice[event_row] - s0.ln() - m_shift;
            }
            return Ok(value);
        }
        for rows in &self.strata_rows {
            if rows.is_empty() {
                continue;
            }
            let m_shift = rows.iter().fold(f64::NEG_INFINITY, |m, &r| m.max(eta[r]));
            let mut s0 = 0.0;
            let mut i = rows.len();
            while i > 0 {
                let hi = i;
                let t = self.times[rows[i - 1]];
                while i > 0 && self.times[rows[i - 1]] == t {
                    i -= 1;
                }
                for &r in &rows[i..hi] {
                    s0 += (eta[r] - m_shift).exp();
                }
                for &r in &rows[i..hi] {
                    if self.events[r] == 1 {
                        value += eta[r] - s0.ln() - m_shift;
                    }
                }
            }
        }
        Ok(value)
    }

    /// Nelson-Aalen cumulative baseline hazard per stratum at `theta`.
    pub fn baselines(&self, theta: &Array1<f64>) -> Vec<CumulativeHazard> {
        let eta = self.design.dot(theta);
        self.strata_rows
            .iter()
            .map(|rows| {
                let m_shift = rows
                    .iter()
                    .fold(f64::NEG_INFINITY, |m, &r| m.max(eta[r]));
                let mut s0 = 0.0;
                let mut pairs = Vec::new();
                let mut i = rows.len();
                while i > 0 {
                    let hi = i;
                    let t = self.times[rows[i - 1]];
                    while i > 0 && self.times[rows[i - 1]] == t {
                        i -= 1;
                    }
                    for &r in &rows[i..hi] {
                        s0 += (eta[r] - m_shift).exp();
                    }
                    let d: f64 = rows[i..hi]
                        .iter()
                        .map(|&r| self.events[r] as f64)
                        .sum();
                    if d > 0.0 {
                        pairs.push((t, d / (s0 * m_shift.exp())));
                    }
                }
                CumulativeHazard::from_jumps(pairs)
            })
            .collect()
    }
}

/// A converged penalized fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Array1<f64>,
    /// `(H + S_lambda)^-1` at the optimum.
    pub covariance: Array2<f64>,
    pub lambdas: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
    /// Unpenalized log-likelihood at the optimum.
    pub loglik: f64,
    /// Penalized log-likelihood at the optimum.
    pub penalized_loglik: f64,
    /// Per-coefficient effective degrees of freedom, `diag((H+S)^-1 H)`.
    pub edf_by_column: Array1<f64>,
    pub edf_total: f64,
    /// Negated likelihood Hessian at the optimum (no penalty).
    pub hessian: Array2<f64>,
    /// Penalized objective after each Newton iteration.
    pub trace: Vec<f64>,
    /// Nelson-Aalen cumulative baseline hazard per stratum.
    pub baselines: Vec<CumulativeHazard>,
}

fn score_norm(g: &Array1<f64>) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn singular_error(hp: ArrayView2<'_, f64>) -> FitError {
    let (vals, vecs) = linalg::sym_eigen(hp);
    let p = vals.len();
    let min_val = vals[p - 1];
    let v = vecs.column(p - 1);
    let column = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    FitError::SingularHessian {
        column,
        eigenvalue: min_val,
    }
}

/// Maximizes the penalized likelihood at fixed smoothing parameters by
/// Newton iteration with step halving. Starts from zero unless a warm
/// start is given; the objective is concave, so the start only changes
/// the iteration count.
pub fn newton_fit(
    problem: &PenalizedProblem,
    lambdas: &[f64],
    warm_start: Option<&Array1<f64>>,
) -> Result<FitResult, FitError> {
    newton_fit_core(problem, lambdas, warm_start, true)
}

fn newton_fit_core(
    problem: &PenalizedProblem,
    lambdas: &[f64],
    warm_start: Option<&Array1<f64>>,
    with_baselines: bool,
) -> Result<FitResult, FitError> {
    if lambdas.len() < problem.n_lambdas {
        return Err(FitError::DimensionMismatch(format!(
            "{} lambdas supplied, problem indexes {}",
            lambdas.len(),
            problem.n_lambdas
        )));
    }
    let p = problem.n_coefficients();
    let s_lambda = problem.penalty_matrix(lambdas);
    let mut theta = warm_start.cloned().unwrap_or_else(|| Array1::zeros(p));

    let max_iter = 200;
    let mut trace = Vec::new();
    let (mut value, mut grad, mut hess) = problem.loglik_parts(&theta)?;
    let mut ppl = value - 0.5 * theta.dot(&s_lambda.dot(&theta));

    let mut stagnant = 0usize;
    for iter in 1..=max_iter {
        let score = &grad - &s_lambda.dot(&theta);
        let tol = 1e-8 * (1.0 + ppl.abs());
        if score_norm(&score) < tol {
            return finish(problem, lambdas, s_lambda, theta, value, ppl, hess, iter - 1, score, trace, with_baselines);
        }
        let hp = &hess + &s_lambda;
        // Jacobi equilibration keeps the solve accurate at extreme
        // smoothing, where the penalized Hessian spans many decades
        let scale: Array1<f64> = hp.diag().mapv(|d| d.max(1e-300).sqrt());
        let hp_scaled = Array2::from_shape_fn((p, p), |(i, j)| hp[[i, j]] / (scale[i] * scale[j]));
        let score_scaled = Array1::from_shape_fn(p, |i| score[i] / scale[i]);
        let step = match linalg::chol_solve(hp_scaled.view(), score_scaled.view()) {
            Some(s) => Array1::from_shape_fn(p, |i| s[i] / scale[i]),
            None => return Err(singular_error(hp.view())),
        };
        // affine-invariant stop: at extreme smoothing the raw score norm
        // can sit above its cancellation floor even at the optimum, but
        // the Newton decrement still vanishes there
        let decrement = score.dot(&step).max(0.0);
        if 0.5 * decrement < 1e-11 * (1.0 + ppl.abs()) {
            return finish(problem, lambdas, s_lambda, theta, value, ppl, hess, iter - 1, score, trace, with_baselines);
        }

        // eager full step: evaluate derivatives at the Newton point
        // directly since it is almost always accepted
        let mut accepted = false;
        let cand = &theta + &step;
        match problem.loglik_parts(&cand) {
            Ok((v, g, h)) => {
                let cand_ppl = v - 0.5 * cand.dot(&s_lambda.dot(&cand));
                if cand_ppl.is_finite() && cand_ppl >= ppl - 1e-12 * (1.0 + ppl.abs()) {
                    let improvement = cand_ppl - ppl;
                    theta = cand;
                    value = v;
                    grad = g;
                    hess = h;
                    ppl = cand_ppl;
                    accepted = true;
                    stagnant = if improvement.abs() < 1e-10 * (1.0 + ppl.abs()) {
                        stagnant + 1
                    } else {
                        0
                    };
                }
            }
            Err(FitError::NonFinite(_)) => {}
            Err(other) => return Err(other),
        }
        if !accepted {
            // halve until the objective stops decreasing
            let mut t = 0.5;
            for _ in 0..25 {
                let cand = &theta + &(&step * t);
                let cand_ppl = match problem.loglik_value(&cand) {
                    Ok(v) => v - 0.5 * cand.dot(&s_lambda.dot(&cand)),
                    Err(FitError::NonFinite(_)) => f64::NEG_INFINITY,
                    Err(other) => return Err(other),
                };
                if cand_ppl.is_finite() && cand_ppl >= ppl - 1e-12 * (1.0 + ppl.abs()) {
                    let improvement = cand_ppl - ppl;
                    theta = cand;
                    let (v, g, h) = problem.loglik_parts(&theta)?;
                    value = v;
                    grad = g;
                    hess = h;
                    ppl = cand_ppl;
                    accepted = true;
                    stagnant = if improvement.abs() < 1e-10 * (1.0 + ppl.abs()) {
                        stagnant + 1
                    } else {
                        0
                    };
                    break;
                }
                t *= 0.5;
            }
        }
        trace.push(ppl);
        // two consecutive negligible steps, or no ascent at all: the
        // iterate is at the numerical optimum
        if !accepted || stagnant >= 2 {
            let score = &grad - &s_lambda.dot(&theta);
            return finish(problem, lambdas, s_lambda, theta, value, ppl, hess, iter, score, trace, with_baselines);
        }
    }
    let score = &grad - &s_lambda.dot(&theta);
    Err(FitError::NonConvergence {
        iterations: max_iter,
        grad_norm: score_norm(&score),
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &PenalizedProblem,
    lambdas: &[f64],
    s_lambda: Array2<f64>,
    theta: Array1<f64>,
    value: f64,
    ppl: f64,
    hess: Array2<f64>,
    iterations: usize,
    score: Array1<f64>,
    trace: Vec<f64>,
    with_baselines: bool,
) -> Result<FitResult, FitError> {
    let hp = &hess + &s_lambda;
    let covariance = match linalg::chol_inverse(hp.view()) {
        Some(c) => c,
        None => return Err(singular_error(hp.view())),
    };
    let a = covariance.dot(&hess);
    let edf_by_column = Array1::from_iter(a.diag().iter().copied());
    let edf_total = edf_by_column.sum();
    let baselines = if with_baselines {
        problem.baselines(&theta)
    } else {
        Vec::new()
    };
    Ok(FitResult {
        coefficients: theta,
        covariance,
        lambdas: lambdas.to_vec(),
        iterations,
        final_grad_norm: score_norm(&score),
        loglik: value,
        penalized_loglik: ppl,
        edf_by_column,
        edf_total,
        hessian: hess,
        trace,
        baselines,
    })
}

// ----------------------------------------------------------------------
// Restricted-likelihood smoothing selection
// ----------------------------------------------------------------------

/// The criterion value and its three summands.
#[derive(Debug, Clone, Copy)]
pub struct RemlValue {
    pub total: f64,
    pub penalized_loglik: f64,
    pub half_logdet_penalty: f64,
    pub half_logdet_hessian: f64,
}

/// Precomputed range basis of the total penalty, reused across candidates.
pub struct RemlWorkspace {
    /// Orthonormal basis of range(sum_m P_m), `p x r`.
    range: Array2<f64>,
}

impl RemlWorkspace {
    pub fn new(problem: &PenalizedProblem) -> Result<Self, FitError> {
        if problem.penalties.is_empty() {
            return Err(FitError::NoPenalties);
        }
        let p = problem.n_coefficients();
        let mut total = Array2::zeros((p, p));
        for b in &problem.penalties {
            // normalize block scale so the range detection is balanced
            let scale = b.matrix.diag().sum().max(1e-300);
            total.scaled_add(1.0 / scale, &b.matrix);
        }
        let (vals, vecs) = linalg::sym_eigen(total.view());
        let tol = vals[0].max(1e-300) * 1e-10;
        let r = vals.iter().filter(|&&v| v > tol).count();
        let range = vecs.slice(s![.., ..r]).to_owned();
        Ok(RemlWorkspace { range })
    }

    /// `1/2 logdet` of `S_lambda` restricted to its range.
    pub fn half_logdet_penalty(
        &self,
        problem: &PenalizedProblem,
        lambdas: &[f64],
    ) -> Option<f64> {
        let s = problem.penalty_matrix(lambdas);
        let restricted = linalg::congruence(self.range.view(), s.view());
        linalg::chol_logdet(restricted.view()).map(|d| 0.5 * d)
    }
}

/// Evaluates the restricted-likelihood criterion at `lambdas`, fitting the
/// inner problem by Newton.
pub fn reml_criterion(
    problem: &PenalizedProblem,
    workspace: &RemlWorkspace,
    lambdas: &[f64],
    warm_start: Option<&Array1<f64>>,
) -> Result<(RemlValue, FitResult), FitError> {
    reml_criterion_core(problem, workspace, lambdas, warm_start, true)
}

fn reml_criterion_core(
    problem: &PenalizedProblem,
    workspace: &RemlWorkspace,
    lambdas: &[f64],
    warm_start: Option<&Array1<f64>>,
    with_baselines: bool,
) -> Result<(RemlValue, FitResult), FitError> {
    let fit = newton_fit_core(problem, lambdas, warm_start, with_baselines)?;
    let half_s = workspace
        .half_logdet_penalty(problem, lambdas)
        .ok_or(FitError::CriterionNonFinite)?;
    let hp = &fit.hessian + &problem.penalty_matrix(lambdas);
    let logdet_h = linalg::chol_logdet(hp.view()).ok_or(FitError::CriterionNonFinite)?;
    let value = RemlValue {
        total: fit.penalized_loglik + half_s - 0.5 * logdet_h,
        penalized_loglik: fit.penalized_loglik,
        half_logdet_penalty: half_s,
        half_logdet_hessian: 0.5 * logdet_h,
    };
    Ok((value, fit))
}

/// Options for the smoothing search.
#[derive(Debug, Clone)]
pub struct SmoothingOptions {
    /// Search bounds on log10(lambda).
    pub log10_bounds: (f64, f64),
    /// Full coordinate sweeps of golden-section search.
    pub sweeps: usize,
    /// Coordinate tolerance on log10(lambda).
    pub xtol: f64,
    /// Attempt a final joint Newton polish on the criterion.
    pub polish: bool,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        SmoothingOptions {
            log10_bounds: (-6.0, 8.0),
            sweeps: 2,
            xtol: 0.5,
            polish: true,
        }
    }
}

/// Selected smoothing parameters with the inner fit at the selection.
pub struct SmoothingResult {
    pub lambdas: Vec<f64>,
    pub fit: FitResult,
    pub criterion: RemlValue,
    pub evaluations: usize,
}

/// Mutable search state threaded through the criterion evaluations.
struct SearchState {
    /// Coefficients of every evaluated point, for nearest-point warm starts.
    visited: Vec<(Vec<f64>, Array1<f64>)>,
    evaluations: usize,
    /// Best candidate seen anywhere in the search.
    best: Option<(Vec<f64>, RemlValue, FitResult)>,
}

impl SearchState {
    fn nearest_warm(&self, rho: &[f64]) -> Option<&Array1<f64>> {
        self.visited
            .iter()
            .min_by(|a, b| {
                let da: f64 = a.0.iter().zip(rho).map(|(x, y)| (x - y) * (x - y)).sum();
                let db: f64 = b.0.iter().zip(rho).map(|(x, y)| (x - y) * (x - y)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(_, theta)| theta)
    }
}

fn eval_candidate(
    problem: &PenalizedProblem,
    workspace: &RemlWorkspace,
    rho: &[f64],
    state: &mut SearchState,
) -> f64 {
    let lambdas: Vec<f64> = rho.iter().map(|r| 10f64.powf(*r)).collect();
    state.evaluations += 1;
    let warm = state.nearest_warm(rho).cloned();
    match reml_criterion_core(problem, workspace, &lambdas, warm.as_ref(), false) {
        Ok((value, fit)) => {
            state.visited.push((rho.to_vec(), fit.coefficients.clone()));
            if value.total.is_finite() {
                let improves = state
                    .best
                    .as_ref()
                    .map_or(true, |(_, v, _)| value.total > v.total);
                if improves {
                    state.best = Some((rho.to_vec(), value, fit));
                }
                value.total
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Maximizes the restricted-likelihood criterion over log-smoothing
/// parameters by coordinate golden-section sweeps followed by a guarded
/// Newton polish on the criterion.
pub fn select_smoothing(
    problem: &PenalizedProblem,
    options: &SmoothingOptions,
) -> Result<SmoothingResult, FitError> {
    if problem.penalties.is_empty() {
        return Err(FitError::NoPenalties);
    }
    let workspace = RemlWorkspace::new(problem)?;
    let m = problem.n_lambdas;
    let (lo, hi) = options.log10_bounds;
    let mut rho = vec![0.0_f64; m];
    let mut state = SearchState {
        visited: Vec::new(),
        evaluations: 0,
        best: None,
    };

    let mut best = eval_candidate(problem, &workspace, &rho, &mut state);

    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    for _ in 0..options.sweeps {
        for coord in 0..m {
            let mut a = lo;
            let mut b = hi;
            let mut c = b - inv_phi * (b - a);
            let mut d = a + inv_phi * (b - a);
            let at = |x: f64, state: &mut SearchState| {
                let mut candidate = rho.clone();
                candidate[coord] = x;
                eval_candidate(problem, &workspace, &candidate, state)
            };
            let mut fc = at(c, &mut state);
            let mut fd = at(d, &mut state);
            while (b - a) > options.xtol {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - inv_phi * (b - a);
                    fc = at(c, &mut state);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + inv_phi * (b - a);
                    fd = at(d, &mut state);
                }
            }
            let (x_best, f_best) = if fc >= fd { (c, fc) } else { (d, fd) };
            if f_best > best {
                best = f_best;
                rho[coord] = x_best;
            }
        }
    }

    if state.best.is_none() {
        return Err(FitError::CriterionNonFinite);
    }

    if options.polish {
        // adopt the best point found anywhere before polishing around it
        if let Some((r, v, _)) = &state.best {
            rho = r.clone();
            best = v.total;
        }
        polish(problem, &workspace, &mut rho, &mut best, lo, hi, &mut state, m);
    }

    let (rho_best, criterion, fit) = state.best.take().expect("checked above");
    // reattach the per-stratum baselines skipped during the search
    let mut fit = fit;
    fit.baselines = problem.baselines(&fit.coefficients);
    Ok(SmoothingResult {
        lambdas: rho_best.iter().map(|r| 10f64.powf(*r)).collect(),
        fit,
        criterion,
        evaluations: state.evaluations,
    })
}

/// Guarded Newton polish on the criterion over log10(lambda): central
/// finite differences per coordinate, applied only where the curvature is
/// finite and concave.
#[allow(clippy::too_many_arguments)]
fn polish(
    problem: &PenalizedProblem,
    workspace: &RemlWorkspace,
    rho: &mut Vec<f64>,
    best: &mut f64,
    lo: f64,
    hi: f64,
    state: &mut SearchState,
    m: usize,
) {
    let h = 0.1;
    let f0 = *best;
    let mut step = Array1::zeros(m);
    for i in 0..m {
        let mut up = rho.clone();
        up[i] = (up[i] + h).min(hi);
        let mut dn = rho.clone();
        dn[i] = (dn[i] - h).max(lo);
        let f_plus = eval_candidate(problem, workspace, &up, state);
        let f_minus = eval_candidate(problem, workspace, &dn, state);
        if !(f_plus.is_finite() && f_minus.is_finite()) {
            return;
        }
        let grad = (f_plus - f_minus) / (2.0 * h);
        let curv = (f_plus - 2.0 * f0 + f_minus) / (h * h);
        if curv >= -1e-12 {
            // flat or convex along this coordinate: leave it alone
            step[i] = 0.0;
        } else {
            step[i] = -grad / curv;
        }
    }
    if step.iter().all(|s| s.abs() < 1e-10) {
        return;
    }
    for damp in [1.0, 0.5, 0.25] {
        let candidate: Vec<f64> = rho
            .iter()
            .zip(step.iter())
            .map(|(r, s)| (r + damp * s).clamp(lo, hi))
            .collect();
        let f = eval_candidate(problem, workspace, &candidate, state);
        if f > *best {
            *best = f;
            *rho = candidate;
            return;
        }
    }
}
