//! Functional principal component analysis of a noisily observed
//! predictor: covariance estimation with measurement-noise removal on the
//! diagonal, eigendecomposition under the quadrature inner product, score
//! projection, and the FPCA-parameterized tensor design.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::basis::BasisMatrix;
use crate::linalg;
use crate::survival::FunctionalPredictor;
use crate::tensor;

#[derive(Debug, Error)]
pub enum FpcaError {
    #[error("FPCA needs at least 3 subjects, got {0}")]
    TooFewSubjects(usize),

    #[error("requested truncation {requested} exceeds the grid size {grid}")]
    BadTruncation { requested: usize, grid: usize },

    #[error("rows are on a different grid than the fitted model")]
    GridMismatch,

    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
}

/// A truncated eigen decomposition of the predictor's covariance.
#[derive(Debug, Clone)]
pub struct FpcaModel {
    pub mean: Array1<f64>,
    /// `J x K2`; orthonormal under the quadrature inner product.
    pub eigenfunctions: Array2<f64>,
    /// Nonincreasing, nonnegative.
    pub eigenvalues: Array1<f64>,
    pub noise_variance: f64,
    pub grid: Vec<f64>,
    pub weights: Array1<f64>,
    /// Set when the requested truncation exceeded the numerical rank.
    pub truncated: bool,
    /// The full eigenvalue spectrum (descending, clamped at zero), kept
    /// for rank diagnostics beyond the truncation.
    pub spectrum: Array1<f64>,
}

/// Half-bandwidth (in grid steps) of the neighborhood used to smooth the
/// covariance diagonal.
const DIAG_BANDWIDTH: usize = 5;

/// Replaces the raw covariance diagonal by a local quadratic fit through
/// the off-diagonal neighborhood; returns the smoothed diagonal.
fn smooth_diagonal(cov: &Array2<f64>, grid: &[f64]) -> Array1<f64> {
    let j = cov.nrows();
    let mut out = Array1::zeros(j);
    for a in 0..j {
        let lo = a.saturating_sub(DIAG_BANDWIDTH);
        let hi = (a + DIAG_BANDWIDTH).min(j - 1);
        // least-squares quadratic surface in (dx, dy) over off-diagonal points
        let mut xtx = Array2::<f64>::zeros((6, 6));
        let mut xty = Array1::<f64>::zeros(6);
        for x in lo..=hi {
            for y in lo..=hi {
                if x == y {
                    continue;
                }
                let dx = grid[x] - grid[a];
                let dy = grid[y] - grid[a];
                let row = [1.0, dx, dy, dx * dx, dy * dy, dx * dy];
                for i in 0..6 {
                    xty[i] += row[i] * cov[[x, y]];
                    for k in 0..6 {
                        xtx[[i, k]] += row[i] * row[k];
                    }
                }
            }
        }
        // tiny ridge keeps the normal equations solvable at the edges
        for i in 0..6 {
            xtx[[i, i]] += 1e-12 * (1.0 + xtx[[i, i]].abs());
        }
        let coef = linalg::chol_solve(xtx.view(), xty.view())
            .expect("ridged local normal equations are positive definite");
        out[a] = coef[0];
    }
    out
}

/// Fits the FPCA model on noisy rows. The sample covariance has its
/// diagonal replaced by a smooth extrapolation from the off-diagonal
/// neighborhood; the average excess of the raw diagonal over the smooth
/// one estimates the measurement-noise variance.
pub fn fit_fpca(w: &FunctionalPredictor, k2: Option<usize>) -> Result<FpcaModel, FpcaError> {
    let n = w.n_subjects();
    let j = w.n_points();
    if n < 3 {
        return Err(FpcaError::TooFewSubjects(n));
    }
    if let Some(k) = k2 {
        if k > j {
            return Err(FpcaError::BadTruncation {
                requested: k,
                grid: j,
            });
        }
    }
    let mean = w.values.mean_axis(Axis(0)).expect("n >= 3");
    let centered = &w.values - &mean.view().insert_axis(Axis(0));
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let raw_diag: Array1<f64> = Array1::from_iter(cov.diag().iter().copied());
    let smooth = smooth_diagonal(&cov, &w.grid);
    let noise_variance = (raw_diag
        .iter()
        .zip(smooth.iter())
        .map(|(r, s)| r - s)
        .sum::<f64>()
        / j as f64)
        .max(0.0);
    for a in 0..j {
        cov[[a, a]] = smooth[a];
    }

    // eigen under the quadrature inner product
    let sqrt_w: Array1<f64> = w.weights.mapv(f64::sqrt);
    let mut m = cov;
    for x in 0..j {
        for y in 0..j {
            m[[x, y]] *= sqrt_w[x] * sqrt_w[y];
        }
    }
    let (vals, vecs) = linalg::sym_eigen(m.view());
    let top = vals[0].max(0.0);
    let rank_tol = top * 1e-12;
    let rank = vals.iter().filter(|&&v| v > rank_tol).count().max(1);

    let requested = match k2 {
        Some(k) => k,
        None => {
            // smallest truncation explaining 99% of the positive spectrum
            let total: f64 = vals.iter().filter(|&&v| v > 0.0).sum();
            let mut acc = 0.0;
            let mut k = 0;
            for &v in vals.iter() {
                if v <= 0.0 {
                    break;
                }
                acc += v;
                k += 1;
                if acc >= 0.99 * total {
                    break;
                }
            }
            k.max(1)
        }
    };
    let truncated = requested > rank;
    let k_eff = requested.min(rank);

    let mut eigenfunctions = Array2::zeros((j, k_eff));
    let mut eigenvalues = Array1::zeros(k_eff);
    for k in 0..k_eff {
        eigenvalues[k] = vals[k].max(0.0);
        for x in 0..j {
            eigenfunctions[[x, k]] = vecs[[x, k]] / sqrt_w[x];
        }
    }
    let spectrum = vals.mapv(|v| v.max(0.0));
    Ok(FpcaModel {
        mean,
        eigenfunctions,
        eigenvalues,
        noise_variance,
        grid: w.grid.clone(),
        weights: w.weights.clone(),
        truncated,
        spectrum,
    })
}

impl FpcaModel {
    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Reconstructs rows from the leading `k` scores:
    /// `mean + sum_k c_k psi_k`.
    pub fn reconstruct(&self, scores: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
        let k = k.min(self.truncation());
        let psi = self.eigenfunctions.slice(ndarray::s![.., ..k]);
        let c = scores.slice(ndarray::s![.., ..k]);
        &c.dot(&psi.t()) + &self.mean.view().insert_axis(Axis(0))
    }
}

/// Quadrature inner products of centered rows with the eigenfunctions:
/// `scores[i, k] = integral (Z_i(u) - mean(u)) psi_k(u) du`.
pub fn project_scores(
    rows: ArrayView2<'_, f64>,
    model: &FpcaModel,
) -> Result<Array2<f64>, FpcaError> {
    if rows.ncols() != model.grid.len() {
        return Err(FpcaError::GridMismatch);
    }
    let centered = &rows - &model.mean.view().insert_axis(Axis(0));
    let mut weighted = centered;
    for mut row in weighted.axis_iter_mut(Axis(0)) {
        for (v, w) in row.iter_mut().zip(model.weights.iter()) {
            *v *= w;
        }
    }
    Ok(weighted.dot(&model.eigenfunctions))
}

/// FPCA-parameterized tensor design: rows reproduce the direct tensor
/// design whenever the (centered) predictor lies in the eigenfunction
/// span. `bu` is the u-margin basis on the model grid and `bt` the
/// time-margin basis per data row.
pub fn fpca_design(
    model: &FpcaModel,
    scores: ArrayView2<'_, f64>,
    bu: &BasisMatrix,
    bt: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, FpcaError> {
    if bu.points.len() != model.grid.len() {
        return Err(FpcaError::GridMismatch);
    }
    // reconstructed centered rows times quadrature weights
    let recon = scores.dot(&model.eigenfunctions.t());
    let mut weights = recon;
    for mut row in weights.axis_iter_mut(Axis(0)) {
        for (v, w) in row.iter_mut().zip(model.weights.iter()) {
            *v *= w;
        }
    }
    Ok(tensor::tensor_design(bu.values.view(), bt, weights.view())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{evaluate_basis, make_basis, BasisFamily};
    use approx::assert_abs_diff_eq;
    use ndarray::s;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn uniform_grid(j: usize) -> Vec<f64> {
        (0..j).map(|v| (v as f64 + 0.5) / j as f64).collect()
    }

    #[test]
    fn rank_one_noiseless_recovery() {
        let j = 40;
        let grid = uniform_grid(j);
        // linear shape: the local quadratic diagonal fit is exact for it
        let v: Array1<f64> = Array1::from_iter(grid.iter().map(|&u| 0.5 + u));
        let mut rng = StdRng::seed_from_u64(1);
        let n = 60;
        let rows = Array2::from_shape_fn((n, j), |(i, c)| {
            let _ = i;
            let a: f64 = 0.0;
            let _ = a;
            v[c]
        });
        let mut rows = rows;
        for i in 0..n {
            let a = rng.random::<f64>() * 2.0 - 1.0;
            for c in 0..j {
                rows[[i, c]] = a * v[c];
            }
        }
        let fp = FunctionalPredictor::new(rows, grid).unwrap();
        let model = fit_fpca(&fp, Some(5)).unwrap();

        // eigenfunction proportional to v (after centering, v itself)
        let psi1 = model.eigenfunctions.column(0);
        let scale = psi1[0] / v[0];
        for c in 0..j {
            assert_abs_diff_eq!(psi1[c], scale * v[c], epsilon = 1e-8 * v[c].abs().max(1.0));
        }
        // remaining eigenvalues vanish relative to the first
        for k in 1..model.truncation() {
            assert!(model.eigenvalues[k] < 1e-8 * model.eigenvalues[0]);
        }
        // no diagonal excess
        assert!(model.noise_variance < 1e-6 * model.eigenvalues[0]);
    }

    #[test]
    fn eigenfunctions_are_orthonormal_under_quadrature() {
        let j = 30;
        let grid = uniform_grid(j);
        let mut rng = StdRng::seed_from_u64(4);
        let rows = Array2::from_shape_fn((50, j), |_| rng.random::<f64>());
        let fp = FunctionalPredictor::new(rows, grid).unwrap();
        let model = fit_fpca(&fp, Some(6)).unwrap();
        let k = model.truncation();
        for a in 0..k {
            for b in 0..k {
                let mut ip = 0.0;
                for v in 0..j {
                    ip += model.eigenfunctions[[v, a]]
                        * model.eigenfunctions[[v, b]]
                        * model.weights[v];
                }
                let expect = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn scores_of_an_eigenfunction_row_are_a_unit_vector() {
        let j = 25;
        let grid = uniform_grid(j);
        let mut rng = StdRng::seed_from_u64(9);
        let rows = Array2::from_shape_fn((40, j), |_| rng.random::<f64>() - 0.5);
        let fp = FunctionalPredictor::new(rows, grid).unwrap();
        let mut model = fit_fpca(&fp, Some(4)).unwrap();
        model.mean.fill(0.0);

        let psi1: Array1<f64> = model.eigenfunctions.column(0).to_owned();
        let row = psi1.clone().insert_axis(Axis(0));
        let scores = project_scores(row.view(), &model).unwrap();
        assert_abs_diff_eq!(scores[[0, 0]], 1.0, epsilon = 1e-8);
        for k in 1..model.truncation() {
            assert_abs_diff_eq!(scores[[0, k]], 0.0, epsilon = 1e-8);
        }

        let zero = Array2::zeros((1, j));
        let scores = project_scores(zero.view(), &model).unwrap();
        for k in 0..model.truncation() {
            assert_abs_diff_eq!(scores[[0, k]], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reconstruction_error_decreases_with_truncation() {
        let j = 30;
        let grid = uniform_grid(j);
        let mut rng = StdRng::seed_from_u64(14);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let spec = make_basis(BasisFamily::BsplineCubic, (0.0, 1.0), 8).unwrap();
        let bu = evaluate_basis(&spec, &grid).unwrap().values;
        let n = 80;
        let coefs = Array2::from_shape_fn((n, 8), |_| normal.sample(&mut rng));
        let rows = coefs.dot(&bu.t());
        let fp = FunctionalPredictor::new(rows.clone(), grid).unwrap();
        let model = fit_fpca(&fp, Some(8)).unwrap();
        let scores = project_scores(rows.view(), &model).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=model.truncation() {
            let recon = model.reconstruct(scores.view(), k);
            let err: f64 = (&recon - &rows).iter().map(|v| v * v).sum();
            assert!(err <= last + 1e-9, "error grew at k = {k}");
            last = err;
        }
    }

    #[test]
    fn design_matches_triple_loop_oracle() {
        let j = 7;
        let grid = uniform_grid(j);
        let mut rng = StdRng::seed_from_u64(23);
        // hand-built model: W-orthonormalized random eigenfunctions
        let k2 = 3;
        let fp = FunctionalPredictor::new(Array2::zeros((3, j)), grid.clone()).unwrap();
        let w = fp.weights.clone();
        let mut psi = Array2::from_shape_fn((j, k2), |_| rng.random::<f64>() - 0.5);
        for k in 0..k2 {
            for prev in 0..k {
                let mut ip = 0.0;
                for v in 0..j {
                    ip += psi[[v, k]] * psi[[v, prev]] * w[v];
                }
                for v in 0..j {
                    let sub = ip * psi[[v, prev]];
                    psi[[v, k]] -= sub;
                }
            }
            let mut norm = 0.0;
            for v in 0..j {
                norm += psi[[v, k]] * psi[[v, k]] * w[v];
            }
            let norm = norm.sqrt();
            for v in 0..j {
                psi[[v, k]] /= norm;
            }
        }
        let model = FpcaModel {
            mean: Array1::zeros(j),
            eigenfunctions: psi.clone(),
            eigenvalues: Array1::from_vec(vec![3.0, 2.0, 1.0]),
            noise_variance: 0.0,
            grid: grid.clone(),
            weights: w.clone(),
            truncated: false,
            spectrum: Array1::from_vec(vec![3.0, 2.0, 1.0]),
        };

        let u_spec = make_basis(BasisFamily::CyclicCubic, (0.0, 1.0), 3).unwrap();
        let bu = evaluate_basis(&u_spec, &grid).unwrap();
        let n = 4;
        let k_s = 2;
        let bt = Array2::from_shape_fn((n, k_s), |_| rng.random::<f64>());
        let scores = Array2::from_shape_fn((n, k2), |_| rng.random::<f64>() - 0.5);
        let design = fpca_design(&model, scores.view(), &bu, bt.view()).unwrap();

        // oracle: explicit sums over (k2, v)
        for r in 0..n {
            for k in 0..k_s {
                for jj in 0..3 {
                    let mut direct = 0.0;
                    for kk2 in 0..k2 {
                        let mut integral = 0.0;
                        for v in 0..j {
                            integral += psi[[v, kk2]] * bu.values[[v, jj]] * w[v];
                        }
                        direct += scores[[r, kk2]] * integral * bt[[r, k]];
                    }
                    assert_abs_diff_eq!(design[[r, 3 * k + jj]], direct, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn complete_eigenbasis_reproduces_direct_tensor_design() {
        let j = 10;
        let grid = uniform_grid(j);
        let mut rng = StdRng::seed_from_u64(31);
        // complete W-orthonormal basis from the eigenvectors of a random
        // SPD matrix in the weighted geometry
        let fp0 = FunctionalPredictor::new(Array2::zeros((3, j)), grid.clone()).unwrap();
        let w = fp0.weights.clone();
        let raw = Array2::from_shape_fn((j, j), |_| rng.random::<f64>() - 0.5);
        let spd = raw.t().dot(&raw);
        let sqrt_w: Array1<f64> = w.mapv(f64::sqrt);
        let mut m = spd;
        for x in 0..j {
            for y in 0..j {
                m[[x, y]] *= sqrt_w[x] * sqrt_w[y];
            }
        }
        let (_, vecs) = linalg::sym_eigen(m.view());
        let mut psi = vecs.clone();
        for x in 0..j {
            for k in 0..j {
                psi[[x, k]] = vecs[[x, k]] / sqrt_w[x];
            }
        }
        let model = FpcaModel {
            mean: Array1::zeros(j),
            eigenfunctions: psi,
            eigenvalues: Array1::ones(j),
            noise_variance: 0.0,
            grid: grid.clone(),
            weights: w.clone(),
            truncated: false,
            spectrum: Array1::ones(j),
        };

        let z_rows = Array2::from_shape_fn((5, j), |_| rng.random::<f64>() * 2.0 - 1.0);
        let scores = project_scores(z_rows.view(), &model).unwrap();

        let u_spec = make_basis(BasisFamily::CyclicCubic, (0.0, 1.0), 4).unwrap();
        let bu = evaluate_basis(&u_spec, &grid).unwrap();
        let bt = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>());

        let via_fpca = fpca_design(&model, scores.view(), &bu, bt.view()).unwrap();

        let mut zl = z_rows.clone();
        for mut row in zl.axis_iter_mut(Axis(0)) {
            for (v, wv) in row.iter_mut().zip(w.iter()) {
                *v *= wv;
            }
        }
        let direct = tensor::tensor_design(bu.values.view(), bt.view(), zl.view()).unwrap();
        for (a, b) in via_fpca.iter().zip(direct.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn score_covariance_tracks_eigenvalues() {
        let j = 50;
        let grid = uniform_grid(j);
        let spec = make_basis(BasisFamily::BsplineCubic, (0.0, 1.0), 10).unwrap();
        let bu = evaluate_basis(&spec, &grid).unwrap().values;
        for seed in [101u64, 202] {
            let mut rng = StdRng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let n = 2000;
            // compound-symmetric scores: var 4, correlation 0.3
            let mut coefs = Array2::zeros((n, 10));
            for i in 0..n {
                let shared: f64 = normal.sample(&mut rng);
                for k in 0..10 {
                    let own: f64 = normal.sample(&mut rng);
                    coefs[[i, k]] = 2.0 * (0.3_f64.sqrt() * shared + 0.7_f64.sqrt() * own);
                }
            }
            let rows = coefs.dot(&bu.t());
            let fp = FunctionalPredictor::new(rows.clone(), grid.clone()).unwrap();
            let model = fit_fpca(&fp, Some(6)).unwrap();
            let scores = project_scores(rows.view(), &model).unwrap();
            for k in 0..4 {
                let col = scores.slice(s![.., k]);
                let mean = col.sum() / n as f64;
                let var: f64 =
                    col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
                let rel = (var - model.eigenvalues[k]).abs() / model.eigenvalues[k];
                assert!(
                    rel < 0.15,
                    "seed {seed}, component {k}: var {var} vs eigenvalue {}",
                    model.eigenvalues[k]
                );
            }
        }
    }
}
