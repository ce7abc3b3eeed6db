//! Cox partial-likelihood machinery: log-likelihood derivatives in the
//! linear-predictor space, the risk-set expansion to pseudo-Poisson data,
//! the Nelson-Aalen baseline estimator, and deterministic tie breaking.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::basis;

#[derive(Debug, Error)]
pub enum SurvivalError {
    #[error("record {index}: observed time must be finite and positive, got {value}")]
    BadTime { index: usize, value: f64 },

    #[error("record {index}: event indicator must be 0 or 1, got {value}")]
    BadEventIndicator { index: usize, value: f64 },

    #[error(
        "tied event times at t = {time}; apply `apply_tie_jitter` at ingestion \
         (rank-scaled deterministic jitter) before fitting"
    )]
    TiedEventTimes { time: f64 },

    #[error("linear predictor contains a non-finite value at index {0}")]
    NonFiniteEta(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("functional grid must be strictly increasing with at least two points")]
    BadGrid,

    #[error("dataset is empty")]
    Empty,
}

/// One subject's survival outcome and scalar covariates.
#[derive(Debug, Clone)]
pub struct SurvivalRecord {
    pub id: u64,
    /// Observed time: min(event time, censoring time).
    pub y: f64,
    /// Event indicator: 1 if the event was observed, 0 if censored.
    pub delta: u8,
    /// Scalar covariates (may be empty).
    pub x: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(id: u64, y: f64, delta: u8, x: Vec<f64>) -> Result<Self, SurvivalError> {
        if !y.is_finite() || y <= 0.0 {
            return Err(SurvivalError::BadTime {
                index: id as usize,
                value: y,
            });
        }
        if delta > 1 {
            return Err(SurvivalError::BadEventIndicator {
                index: id as usize,
                value: delta as f64,
            });
        }
        Ok(SurvivalRecord { id, y, delta, x })
    }
}

/// Densely observed functional predictor rows on a shared grid, together
/// with the quadrature weights used to approximate domain integrals.
#[derive(Debug, Clone)]
pub struct FunctionalPredictor {
    /// `N x J`: one row per subject.
    pub values: Array2<f64>,
    /// The `J` grid abscissae, strictly increasing.
    pub grid: Vec<f64>,
    /// Quadrature multipliers per grid point.
    pub weights: Array1<f64>,
}

impl FunctionalPredictor {
    pub fn new(values: Array2<f64>, grid: Vec<f64>) -> Result<Self, SurvivalError> {
        if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SurvivalError::BadGrid);
        }
        if values.ncols() != grid.len() {
            return Err(SurvivalError::DimensionMismatch(format!(
                "predictor has {} columns but grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        let weights = basis::riemann_weights(&grid);
        Ok(FunctionalPredictor {
            values,
            grid,
            weights,
        })
    }

    pub fn with_weights(
        values: Array2<f64>,
        grid: Vec<f64>,
        weights: Array1<f64>,
    ) -> Result<Self, SurvivalError> {
        let mut fp = Self::new(values, grid)?;
        if weights.len() != fp.grid.len() {
            return Err(SurvivalError::DimensionMismatch(
                "weights length differs from grid length".into(),
            ));
        }
        fp.weights = weights;
        Ok(fp)
    }

    pub fn n_subjects(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }
}

/// Summary of the deterministic tie-breaking pass.
#[derive(Debug, Clone, Default)]
pub struct JitterReport {
    /// Number of records whose time was perturbed.
    pub jittered: usize,
    /// The jitter unit actually used (rank multiples of this are added).
    pub unit: f64,
}

/// Breaks event-time ties deterministically by rank-scaled jitter of size
/// `1e-9 * max(y)` per rank. Only event rows move, and they move downward
/// (earlier), so no observed time ever leaves the original follow-up
/// range and censored subjects tied with an event remain in its risk set.
/// Within a tie group events are ranked by subject id.
pub fn apply_tie_jitter(records: &[SurvivalRecord]) -> (Vec<SurvivalRecord>, JitterReport) {
    let mut out = records.to_vec();
    let scale = records.iter().fold(0.0_f64, |m, r| m.max(r.y));
    let unit = 1e-9 * scale.max(1e-300);
    let mut events: Vec<usize> = (0..out.len()).filter(|&i| out[i].delta == 1).collect();
    events.sort_by(|&a, &b| {
        out[a]
            .y
            .partial_cmp(&out[b].y)
            .unwrap()
            .then(out[a].id.cmp(&out[b].id))
    });
    let mut report = JitterReport { jittered: 0, unit };
    let mut i = 0;
    while i < events.len() {
        let mut j = i + 1;
        while j < events.len() && out[events[j]].y == out[events[i]].y {
            j += 1;
        }
        let group = j - i;
        if group > 1 {
            // the highest-ranked event keeps the original time; earlier
            // ranks step down by one unit each
            for (rank, &idx) in events[i..j].iter().enumerate() {
                let shift = (group - 1 - rank) as f64 * unit;
                if shift > 0.0 {
                    out[idx].y -= shift;
                    report.jittered += 1;
                }
            }
        }
        i = j;
    }
    (out, report)
}

fn check_eta(eta: &[f64]) -> Result<(), SurvivalError> {
    for (i, e) in eta.iter().enumerate() {
        if !e.is_finite() {
            return Err(SurvivalError::NonFiniteEta(i));
        }
    }
    Ok(())
}

fn check_no_event_ties(records: &[SurvivalRecord]) -> Result<(), SurvivalError> {
    let mut event_times: Vec<f64> = records
        .iter()
        .filter(|r| r.delta == 1)
        .map(|r| r.y)
        .collect();
    event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in event_times.windows(2) {
        if w[0] == w[1] {
            return Err(SurvivalError::TiedEventTimes { time: w[0] });
        }
    }
    Ok(())
}

/// Cox partial log-likelihood and its derivatives with respect to the
/// per-subject linear predictor `eta`.
///
/// Returns `(value, gradient, hessian)`; the Hessian is dense `n x n` and
/// negative semi-definite. Intended for moderate `n`; the fitter uses a
/// fused design-space accumulation instead.
pub fn cox_partial_loglik(
    eta: &[f64],
    records: &[SurvivalRecord],
) -> Result<(f64, Array1<f64>, Array2<f64>), SurvivalError> {
    let n = records.len();
    if n == 0 {
        return Err(SurvivalError::Empty);
    }
    if eta.len() != n {
        return Err(SurvivalError::DimensionMismatch(format!(
            "eta has length {} but there are {} records",
            eta.len(),
            n
        )));
    }
    check_eta(eta)?;
    check_no_event_ties(records)?;

    let mut value = 0.0;
    let mut grad = Array1::zeros(n);
    let mut hess = Array2::zeros((n, n));
    let eta_max = eta.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    let mut pi = vec![0.0; n];
    for i in 0..n {
        if records[i].delta != 1 {
            continue;
        }
        let ti = records[i].y;
        let mut s = 0.0;
        for j in 0..n {
            pi[j] = if records[j].y >= ti {
                (eta[j] - eta_max).exp()
            } else {
                0.0
            };
            s += pi[j];
        }
        value += eta[i] - (s.ln() + eta_max);
        grad[i] += 1.0;
        for j in 0..n {
            pi[j] /= s;
            grad[j] -= pi[j];
        }
        for j in 0..n {
            if pi[j] == 0.0 {
                continue;
            }
            hess[[j, j]] -= pi[j];
            for l in 0..n {
                hess[[j, l]] += pi[j] * pi[l];
            }
        }
    }
    Ok((value, grad, hess))
}

/// Evaluates a per-row design at a given (subject, time); rows of the
/// risk-set expansion are produced through this interface so the expanded
/// matrix never has to exist twice.
pub trait TimeVaryingDesign {
    fn n_cols(&self) -> usize;
    fn fill_row(&self, subject: usize, time: f64, out: &mut [f64]);
}

/// Risk-set expansion of the partial likelihood: one stratum per unique
/// event time, one row per subject at risk, binary outcome marking the
/// event. With per-stratum intercepts profiled out this carries exactly
/// the Cox partial likelihood.
#[derive(Debug, Clone)]
pub struct PseudoPoissonData {
    /// Expanded design, evaluated at the stratum's event time.
    pub design: Array2<f64>,
    /// 1 on the event row of each stratum, 0 elsewhere.
    pub outcome: Vec<u8>,
    /// Index into the original record slice for every row.
    pub subject: Vec<usize>,
    /// Row ranges: stratum `k` occupies `starts[k]..starts[k + 1]`.
    pub stratum_starts: Vec<usize>,
    /// The event time defining each stratum, ascending.
    pub stratum_times: Vec<f64>,
}

impl PseudoPoissonData {
    pub fn stratum_count(&self) -> usize {
        self.stratum_times.len()
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }
}

/// Expands `records` over event-time risk sets. Design rows are evaluated
/// at each stratum's event time through `design`.
pub fn poisson_expand(
    design: &dyn TimeVaryingDesign,
    records: &[SurvivalRecord],
) -> Result<PseudoPoissonData, SurvivalError> {
    if records.is_empty() {
        return Err(SurvivalError::Empty);
    }
    check_no_event_ties(records)?;
    let mut events: Vec<usize> = (0..records.len()).filter(|&i| records[i].delta == 1).collect();
    events.sort_by(|&a, &b| records[a].y.partial_cmp(&records[b].y).unwrap());

    let total_rows: usize = events
        .iter()
        .map(|&e| records.iter().filter(|r| r.y >= records[e].y).count())
        .sum();
    let p = design.n_cols();
    let mut mat = Array2::zeros((total_rows, p));
    let mut outcome = Vec::with_capacity(total_rows);
    let mut subject = Vec::with_capacity(total_rows);
    let mut starts = Vec::with_capacity(events.len() + 1);
    let mut times = Vec::with_capacity(events.len());

    let mut row = 0;
    for &e in &events {
        let t = records[e].y;
        starts.push(row);
        times.push(t);
        for (j, r) in records.iter().enumerate() {
            if r.y >= t {
                design.fill_row(j, t, mat.row_mut(row).as_slice_mut().unwrap());
                outcome.push(u8::from(j == e));
                subject.push(j);
                row += 1;
            }
        }
    }
    starts.push(row);
    debug_assert_eq!(row, total_rows);
    Ok(PseudoPoissonData {
        design: mat,
        outcome,
        subject,
        stratum_starts: starts,
        stratum_times: times,
    })
}

/// Exact number of rows the risk-set expansion of `records` produces.
pub fn poisson_row_count(records: &[SurvivalRecord]) -> usize {
    records
        .iter()
        .filter(|r| r.delta == 1)
        .map(|e| records.iter().filter(|r| r.y >= e.y).count())
        .sum()
}

/// Step-function estimate of a cumulative hazard: right-continuous, zero
/// before the first jump.
#[derive(Debug, Clone, Default)]
pub struct CumulativeHazard {
    pub times: Vec<f64>,
    pub jumps: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CumulativeHazard {
    pub fn from_jumps(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut times = Vec::with_capacity(pairs.len());
        let mut jumps = Vec::with_capacity(pairs.len());
        let mut cumulative = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for (t, j) in pairs {
            acc += j;
            times.push(t);
            jumps.push(j);
            cumulative.push(acc);
        }
        CumulativeHazard {
            times,
            jumps,
            cumulative,
        }
    }

    /// H(t): total jump mass at times <= t.
    pub fn evaluate(&self, t: f64) -> f64 {
        match self.times.partition_point(|&tt| tt <= t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// Jump mass inside the half-open interval (a, b].
    pub fn increment(&self, a: f64, b: f64) -> f64 {
        self.evaluate(b) - self.evaluate(a)
    }
}

/// Nelson-Aalen estimator of the cumulative baseline hazard at fixed
/// per-subject linear predictors: a jump of `d / sum_{y_j >= t} exp(eta_j)`
/// at every event time `t`.
pub fn nelson_aalen(
    eta_hat: &[f64],
    records: &[SurvivalRecord],
) -> Result<CumulativeHazard, SurvivalError> {
    if eta_hat.len() != records.len() {
        return Err(SurvivalError::DimensionMismatch(format!(
            "eta has length {} but there are {} records",
            eta_hat.len(),
            records.len()
        )));
    }
    check_eta(eta_hat)?;
    let eta_max = eta_hat.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].y.partial_cmp(&records[a].y).unwrap());

    // accumulate risk mass from the largest time downward
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let mut risk = 0.0;
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].y;
        let mut d = 0.0;
        while i < order.len() && records[order[i]].y == t {
            risk += (eta_hat[order[i]] - eta_max).exp();
            d += records[order[i]].delta as f64;
            i += 1;
        }
        if d > 0.0 {
            pairs.push((t, d / (risk * eta_max.exp())));
        }
    }
    Ok(CumulativeHazard::from_jumps(pairs))
}
