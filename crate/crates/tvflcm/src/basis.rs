//! Univariate spline bases and their curvature penalties.
//!
//! Three families are supported: clamped cubic B-splines (used by the
//! simulation's functional predictor), cardinal cubic regression splines
//! (the follow-up-time margin), and cyclic cubic regression splines (the
//! functional-domain margin, where the two domain endpoints describe the
//! same instant). The regression-spline families use the value-at-knot
//! parameterization, so evaluating at the knot vector returns the
//! identity matrix and the curvature penalty has an exact closed form
//! `D^T B^-1 D` from natural/periodic cubic spline theory.

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("domain [{0}, {1}] is degenerate; the upper end must exceed the lower")]
    DegenerateDomain(f64, f64),

    #[error("{family:?} basis needs at least {min} basis functions, got {requested}")]
    TooFewBasisFunctions {
        family: BasisFamily,
        requested: usize,
        min: usize,
    },

    #[error("knot vector must be strictly increasing and inside the domain")]
    InvalidKnots,

    #[error("point {value} lies outside the basis domain [{lo}, {hi}]")]
    PointOutsideDomain { value: f64, lo: f64, hi: f64 },

    #[error("evaluation points must be finite")]
    NonFinitePoint,

    #[error("derivative order {0} not supported (max 2)")]
    UnsupportedDerivative(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisFamily {
    /// Clamped cubic B-splines (partition of unity, local support).
    BsplineCubic,
    /// Cardinal natural cubic regression splines, value-at-knot coefficients.
    CubicRegression,
    /// Periodic cubic regression splines; first and last knot identified.
    CyclicCubic,
}

/// A univariate spline basis on a closed interval.
///
/// `knots` holds the distinct breakpoints: `K` of them for
/// `CubicRegression`, `K + 1` for `CyclicCubic` (the two ends are the
/// same basis function), and `K - 2` for `BsplineCubic` (boundary knots
/// are repeated internally to clamp the ends).
#[derive(Debug, Clone)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub domain: (f64, f64),
    pub knots: Vec<f64>,
    pub dimension: usize,
}

/// Basis functions evaluated on a set of points; one row per point.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub values: Array2<f64>,
    pub points: Vec<f64>,
    pub spec: BasisSpec,
}

/// Quadratic-form curvature penalty `xi' P xi = integral of (f'')^2`.
#[derive(Debug, Clone)]
pub struct MarginalPenalty {
    pub matrix: Array2<f64>,
    pub null_space_dim: usize,
}

/// Builds a spec with uniformly placed knots over `domain`.
pub fn make_basis(
    family: BasisFamily,
    domain: (f64, f64),
    dimension: usize,
) -> Result<BasisSpec, BasisError> {
    let (a, b) = domain;
    if !(a.is_finite() && b.is_finite()) || b <= a {
        return Err(BasisError::DegenerateDomain(a, b));
    }
    let min = match family {
        BasisFamily::BsplineCubic => 4,
        BasisFamily::CubicRegression | BasisFamily::CyclicCubic => 3,
    };
    if dimension < min {
        return Err(BasisError::TooFewBasisFunctions {
            family,
            requested: dimension,
            min,
        });
    }
    let n_knots = match family {
        BasisFamily::BsplineCubic => dimension - 2,
        BasisFamily::CubicRegression => dimension,
        BasisFamily::CyclicCubic => dimension + 1,
    };
    let knots = linspace(a, b, n_knots);
    Ok(BasisSpec {
        family,
        domain,
        knots,
        dimension,
    })
}

impl BasisSpec {
    /// Builds a spec from caller-supplied breakpoints (strictly increasing,
    /// spanning the domain endpoints).
    pub fn with_knots(
        family: BasisFamily,
        domain: (f64, f64),
        knots: Vec<f64>,
    ) -> Result<Self, BasisError> {
        let (a, b) = domain;
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(BasisError::DegenerateDomain(a, b));
        }
        if knots.len() < 2
            || knots.windows(2).any(|w| w[1] <= w[0])
            || knots.first().copied() != Some(a)
            || knots.last().copied() != Some(b)
        {
            return Err(BasisError::InvalidKnots);
        }
        let dimension = match family {
            BasisFamily::BsplineCubic => knots.len() + 2,
            BasisFamily::CubicRegression => knots.len(),
            BasisFamily::CyclicCubic => knots.len() - 1,
        };
        let min = match family {
            BasisFamily::BsplineCubic => 4,
            _ => 3,
        };
        if dimension < min {
            return Err(BasisError::TooFewBasisFunctions {
                family,
                requested: dimension,
                min,
            });
        }
        Ok(BasisSpec {
            family,
            domain,
            knots,
            dimension,
        })
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (b - a) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
    v[0] = a;
    v[n - 1] = b;
    v
}

/// Evaluates the basis at `points` (rows) for all `K` functions (columns).
pub fn evaluate_basis(spec: &BasisSpec, points: &[f64]) -> Result<BasisMatrix, BasisError> {
    let values = evaluate_basis_deriv(spec, points, 0)?;
    Ok(BasisMatrix {
        values,
        points: points.to_vec(),
        spec: spec.clone(),
    })
}

/// Evaluates the `order`-th derivative of every basis function (order 0..=2).
pub fn evaluate_basis_deriv(
    spec: &BasisSpec,
    points: &[f64],
    order: usize,
) -> Result<Array2<f64>, BasisError> {
    if order > 2 {
        return Err(BasisError::UnsupportedDerivative(order));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(BasisError::NonFinitePoint);
    }
    match spec.family {
        BasisFamily::BsplineCubic => bspline_rows(spec, points, order),
        BasisFamily::CubicRegression => {
            let f = second_deriv_map_natural(&spec.knots);
            regression_rows(spec, points, order, &f, false)
        }
        BasisFamily::CyclicCubic => {
            let f = second_deriv_map_cyclic(&spec.knots);
            regression_rows(spec, points, order, &f, true)
        }
    }
}

/// Curvature penalty for the basis: `xi' P xi = integral (f'')^2` over the
/// domain, exact for every family.
pub fn roughness_penalty(spec: &BasisSpec) -> MarginalPenalty {
    match spec.family {
        BasisFamily::BsplineCubic => MarginalPenalty {
            matrix: bspline_penalty(spec),
            null_space_dim: 2,
        },
        BasisFamily::CubicRegression => MarginalPenalty {
            matrix: regression_penalty(&spec.knots, false),
            null_space_dim: 2,
        },
        BasisFamily::CyclicCubic => MarginalPenalty {
            matrix: regression_penalty(&spec.knots, true),
            null_space_dim: 1,
        },
    }
}

// ----------------------------------------------------------------------
// Cardinal cubic regression splines (natural and cyclic)
// ----------------------------------------------------------------------
//
// A cubic spline interpolating values xi_j at knots x_j is determined by
// the second derivatives delta_j at the knots, which solve the banded
// system B delta = D xi (continuity of f'). Natural boundary conditions
// zero the end second derivatives; the cyclic variant wraps the band.
// The map F = B^-1 D gives both the evaluation rule and the exact
// penalty integral (f'')^2 = xi' D' B^-1 D xi, since (f'')^2 integrates
// the piecewise-linear delta against the tridiagonal mass matrix B.

/// Maps knot values to second derivatives at every knot (natural BCs).
/// Returns a `K x K` matrix whose first and last rows are zero.
fn second_deriv_map_natural(knots: &[f64]) -> Array2<f64> {
    let k = knots.len();
    let m = k - 2;
    let mut d = Array2::zeros((m, k));
    let mut b = Array2::zeros((m, m));
    let h = |i: usize| knots[i + 1] - knots[i];
    for i in 0..m {
        d[[i, i]] = 1.0 / h(i);
        d[[i, i + 1]] = -1.0 / h(i) - 1.0 / h(i + 1);
        d[[i, i + 2]] = 1.0 / h(i + 1);
        b[[i, i]] = (h(i) + h(i + 1)) / 3.0;
        if i + 1 < m {
            b[[i, i + 1]] = h(i + 1) / 6.0;
            b[[i + 1, i]] = h(i + 1) / 6.0;
        }
    }
    let b_inv = linalg::chol_inverse(b.view()).expect("spline band matrix is SPD");
    let f_inner = b_inv.dot(&d);
    let mut f = Array2::zeros((k, k));
    for i in 0..m {
        for j in 0..k {
            f[[i + 1, j]] = f_inner[[i, j]];
        }
    }
    f
}

/// Cyclic analogue: `K + 1` knots describe `K` coefficients with the last
/// knot identified with the first. Returns the `K x K` map to second
/// derivatives at nodes `1..K`.
fn second_deriv_map_cyclic(knots: &[f64]) -> Array2<f64> {
    let k = knots.len() - 1;
    let h = |i: usize| knots[i + 1] - knots[i]; // i = 0..K-1
    let hm = |i: usize| if i == 0 { h(k - 1) } else { h(i - 1) };
    let mut d = Array2::zeros((k, k));
    let mut b = Array2::zeros((k, k));
    for i in 0..k {
        let prev = (i + k - 1) % k;
        let next = (i + 1) % k;
        d[[i, prev]] += 1.0 / hm(i);
        d[[i, i]] += -1.0 / hm(i) - 1.0 / h(i);
        d[[i, next]] += 1.0 / h(i);
        b[[i, i]] += (hm(i) + h(i)) / 3.0;
        b[[i, next]] += h(i) / 6.0;
        b[[next, i]] += h(i) / 6.0;
    }
    let b_inv = linalg::chol_inverse(b.view()).expect("cyclic band matrix is SPD");
    b_inv.dot(&d)
}

fn regression_penalty(knots: &[f64], cyclic: bool) -> Array2<f64> {
    // S = D' B^-1 D, assembled as F' B F with F = B^-1 D to reuse the
    // second-derivative maps (B symmetric).
    if cyclic {
        let k = knots.len() - 1;
        let f = second_deriv_map_cyclic(knots);
        let h = |i: usize| knots[i + 1] - knots[i];
        let hm = |i: usize| if i == 0 { h(k - 1) } else { h(i - 1) };
        let mut b = Array2::zeros((k, k));
        for i in 0..k {
            let next = (i + 1) % k;
            b[[i, i]] += (hm(i) + h(i)) / 3.0;
            b[[i, next]] += h(i) / 6.0;
            b[[next, i]] += h(i) / 6.0;
        }
        symmetrize(linalg::congruence(f.view(), b.view()))
    } else {
        let k = knots.len();
        let f = second_deriv_map_natural(knots); // K x K, boundary rows zero
        let h = |i: usize| knots[i + 1] - knots[i];
        let mut b = Array2::zeros((k, k));
        for i in 0..k - 1 {
            b[[i, i]] += h(i) / 3.0;
            b[[i + 1, i + 1]] += h(i) / 3.0;
            b[[i, i + 1]] += h(i) / 6.0;
            b[[i + 1, i]] += h(i) / 6.0;
        }
        symmetrize(linalg::congruence(f.view(), b.view()))
    }
}

fn symmetrize(mut a: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    a
}

/// Hermite-style evaluation shared by both regression families.
fn regression_rows(
    spec: &BasisSpec,
    points: &[f64],
    order: usize,
    f_map: &Array2<f64>,
    cyclic: bool,
) -> Result<Array2<f64>, BasisError> {
    let knots = &spec.knots;
    let k_dim = spec.dimension;
    let (lo, hi) = spec.domain;
    let mut out = Array2::zeros((points.len(), k_dim));
    for (r, &p_raw) in points.iter().enumerate() {
        let x = if cyclic {
            let period = hi - lo;
            let mut t = (p_raw - lo).rem_euclid(period);
            if t < 0.0 {
                t += period;
            }
            lo + t
        } else {
            if p_raw < lo - domain_slack(lo, hi) || p_raw > hi + domain_slack(lo, hi) {
                return Err(BasisError::PointOutsideDomain {
                    value: p_raw,
                    lo,
                    hi,
                });
            }
            p_raw.clamp(lo, hi)
        };
        // span j with knots[j] <= x <= knots[j+1]
        let j = find_span(knots, x);
        let h = knots[j + 1] - knots[j];
        let dxp = knots[j + 1] - x;
        let dxm = x - knots[j];
        // weights on (value_j, value_j1, delta_j, delta_j1)
        let (am, ap, cm, cp) = match order {
            0 => (
                dxp / h,
                dxm / h,
                (dxp.powi(3) / h - h * dxp) / 6.0,
                (dxm.powi(3) / h - h * dxm) / 6.0,
            ),
            1 => (
                -1.0 / h,
                1.0 / h,
                (-3.0 * dxp * dxp / h + h) / 6.0,
                (3.0 * dxm * dxm / h - h) / 6.0,
            ),
            2 => (0.0, 0.0, dxp / h, dxm / h),
            _ => unreachable!(),
        };
        let node = |idx: usize| if cyclic { idx % k_dim } else { idx };
        let nj = node(j);
        let nj1 = node(j + 1);
        out[[r, nj]] += am;
        out[[r, nj1]] += ap;
        if cyclic {
            for c in 0..k_dim {
                out[[r, c]] += cm * f_map[[nj, c]] + cp * f_map[[nj1, c]];
            }
        } else {
            for c in 0..k_dim {
                out[[r, c]] += cm * f_map[[j, c]] + cp * f_map[[j + 1, c]];
            }
        }
    }
    Ok(out)
}

fn domain_slack(lo: f64, hi: f64) -> f64 {
    1e-12 * (hi - lo).abs().max(1.0)
}

/// Largest `j` with `knots[j] <= x`, capped at the final interval.
fn find_span(knots: &[f64], x: f64) -> usize {
    let n_spans = knots.len() - 1;
    match knots.partition_point(|&k| k <= x) {
        0 => 0,
        idx => (idx - 1).min(n_spans - 1),
    }
}

// ----------------------------------------------------------------------
// Clamped cubic B-splines
// ----------------------------------------------------------------------

fn padded_knots(spec: &BasisSpec) -> Vec<f64> {
    let (a, b) = spec.domain;
    let mut t = Vec::with_capacity(spec.knots.len() + 6);
    t.extend_from_slice(&[a, a, a]);
    t.extend_from_slice(&spec.knots);
    t.extend_from_slice(&[b, b, b]);
    t
}

fn bspline_rows(
    spec: &BasisSpec,
    points: &[f64],
    order: usize,
) -> Result<Array2<f64>, BasisError> {
    let (lo, hi) = spec.domain;
    let t = padded_knots(spec);
    let k_dim = spec.dimension;
    let mut out = Array2::zeros((points.len(), k_dim));
    for (r, &p) in points.iter().enumerate() {
        if p < lo - domain_slack(lo, hi) || p > hi + domain_slack(lo, hi) {
            return Err(BasisError::PointOutsideDomain { value: p, lo, hi });
        }
        let x = p.clamp(lo, hi);
        let span = bspline_span(&t, k_dim, x);
        let ders = bspline_ders(&t, span, x, order);
        for (i, v) in ders.iter().enumerate() {
            out[[r, span - 3 + i]] = *v;
        }
    }
    Ok(out)
}

/// Span index `s` with `t[s] <= x < t[s+1]`, clamped so the four local
/// functions `s-3..=s` are valid basis indices.
fn bspline_span(t: &[f64], k_dim: usize, x: f64) -> usize {
    let hi_span = k_dim - 1; // interval ending at the right boundary
    let mut s = 3;
    while s < hi_span && x >= t[s + 1] {
        s += 1;
    }
    s
}

/// Values of the four nonzero cubic B-splines (or their `order`-th
/// derivative) at `x` in span `span`; de Boor's triangular scheme.
fn bspline_ders(t: &[f64], span: usize, x: f64, order: usize) -> [f64; 4] {
    // ndu[j][r]: degree-r values of the triangular table
    let mut n = [[0.0_f64; 4]; 4];
    n[0][0] = 1.0;
    let mut left = [0.0_f64; 4];
    let mut right = [0.0_f64; 4];
    for deg in 1..=3 {
        left[deg] = x - t[span + 1 - deg];
        right[deg] = t[span + deg] - x;
        let mut saved = 0.0;
        for r in 0..deg {
            let den = right[r + 1] + left[deg - r];
            let temp = if den != 0.0 { n[r][deg - 1] / den } else { 0.0 };
            n[r][deg] = saved + right[r + 1] * temp;
            saved = left[deg - r] * temp;
        }
        n[deg][deg] = saved;
    }
    match order {
        0 => [n[0][3], n[1][3], n[2][3], n[3][3]],
        1 => {
            // N'_{i,3} = 3 * (N_{i,2}/(t_{i+3}-t_i) - N_{i+1,2}/(t_{i+4}-t_{i+1}))
            let mut out = [0.0; 4];
            for (j, o) in out.iter_mut().enumerate() {
                let i = span - 3 + j;
                let a = ratio(n_quad(&n, j), t[i + 3] - t[i]);
                let b = ratio(n_quad(&n, j + 1), t[i + 4] - t[i + 1]);
                *o = 3.0 * (a - b);
            }
            out
        }
        2 => {
            // second derivative via two applications of the formula
            let mut out = [0.0; 4];
            for (j, o) in out.iter_mut().enumerate() {
                let i = span - 3 + j;
                let d1 = |ii: usize, jj: usize| {
                    // derivative of degree-2 basis ii (local slot jj)
                    let a = ratio(n_lin(&n, jj), t[ii + 2] - t[ii]);
                    let b = ratio(n_lin(&n, jj + 1), t[ii + 3] - t[ii + 1]);
                    2.0 * (a - b)
                };
                let a = ratio(d1(i, j), t[i + 3] - t[i]);
                let b = ratio(d1(i + 1, j + 1), t[i + 4] - t[i + 1]);
                *o = 3.0 * (a - b);
            }
            out
        }
        _ => unreachable!(),
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den != 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Degree-2 triangular value for local slot `j` (0..=4; outside -> 0).
fn n_quad(n: &[[f64; 4]; 4], j: usize) -> f64 {
    // degree-2 values live in column 2, local slots 0..=2 aligned so that
    // slot j of degree 3 shares lower slot j-1..j of degree 2; shifting by
    // one: degree-2 local slot for cubic slot j is j-1 in 0..=2 when the
    // cubic table is indexed from span-3. Using the standard convention,
    // cubic slot j maps to quadratic slots (j-1, j) with out-of-range zero.
    if j >= 1 && j - 1 < 3 {
        n[j - 1][2]
    } else {
        0.0
    }
}

/// Degree-1 triangular value for the slot arithmetic used by `bspline_ders`.
fn n_lin(n: &[[f64; 4]; 4], j: usize) -> f64 {
    if j >= 2 && j - 2 < 2 {
        n[j - 2][1]
    } else {
        0.0
    }
}

fn bspline_penalty(spec: &BasisSpec) -> Array2<f64> {
    // integral of B_i'' B_j'': second derivatives are piecewise linear, so
    // 3-point Gauss per knot span integrates the products exactly.
    let k = spec.dimension;
    let mut s = Array2::zeros((k, k));
    let r = (3.0_f64 / 5.0).sqrt();
    let gauss = [(-r, 5.0 / 9.0), (0.0, 8.0 / 9.0), (r, 5.0 / 9.0)];
    for w in spec.knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (node, weight) in gauss {
            let x = mid + half * node;
            let row = evaluate_basis_deriv(spec, &[x], 2).expect("in-domain quadrature node");
            let row = row.row(0);
            for i in 0..k {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..k {
                    s[[i, j]] += weight * half * row[i] * row[j];
                }
            }
        }
    }
    symmetrize(s)
}

/// Quadrature weights for the Riemann rule on a grid: the spacing to the
/// next point, with the final point reusing the last spacing.
pub fn riemann_weights(grid: &[f64]) -> Array1<f64> {
    let j = grid.len();
    assert!(j >= 2, "grid needs at least two points");
    Array1::from_shape_fn(j, |v| {
        if v + 1 < j {
            grid[v + 1] - grid[v]
        } else {
            grid[j - 1] - grid[j - 2]
        }
    })
}

/// Trapezoid quadrature weights on a grid.
pub fn trapezoid_weights(grid: &[f64]) -> Array1<f64> {
    let j = grid.len();
    assert!(j >= 2, "grid needs at least two points");
    Array1::from_shape_fn(j, |v| {
        if v == 0 {
            0.5 * (grid[1] - grid[0])
        } else if v + 1 == j {
            0.5 * (grid[j - 1] - grid[j - 2])
        } else {
            0.5 * (grid[v + 1] - grid[v - 1])
        }
    })
}

/// Dot product of a coefficient vector against evaluated basis rows.
pub fn spline_value(rows: &Array2<f64>, coef: ArrayView1<'_, f64>) -> Array1<f64> {
    rows.dot(&coef)
}
