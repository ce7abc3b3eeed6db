//! Tensor-product design columns for the bivariate coefficient surface and
//! the two-direction Kronecker penalties, plus the sum-to-zero
//! identifiability reparameterization of the time margin.
//!
//! Column order contract: coefficient `(j, k)` (u-basis index `j`, time
//! index `k`) lives at column `k * K_u + j` -- the u index cycles fastest.
//! Every consumer of the design, the penalties, and the reshaped surface
//! relies on this one layout.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::basis::MarginalPenalty;
use crate::linalg;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("constraint rank {rank} must be smaller than the coefficient count {count}")]
    ConstraintRankTooLarge { rank: usize, count: usize },
}

/// Design and penalties for one tensor-product smooth.
#[derive(Debug, Clone)]
pub struct TensorBlock {
    /// `n x p` design; `p = K_u * K_s` before constraint application.
    pub design: Array2<f64>,
    /// Penalty acting along the functional margin, `p x p`.
    pub penalty_u: Array2<f64>,
    /// Penalty acting along the time margin, `p x p`.
    pub penalty_t: Array2<f64>,
    pub k_u: usize,
    pub k_s: usize,
    /// When present, maps constrained coefficients back to the full
    /// `K_u * K_s` layout: `xi = T theta_c`. Columns are orthonormal.
    pub constraint_transform: Option<Array2<f64>>,
}

/// Builds the tensor design rows.
///
/// `bu` holds the u-margin basis on the functional grid (`J x K_u`),
/// `bt` the time-margin basis at each data row's time (`n x K_s`), and
/// `weights` the per-row `J`-vector of functional values times quadrature
/// multipliers (the `zlmat` layout). Row `r`, column `(j, k)` is
/// `bt[r, k] * sum_v weights[r, v] * bu[v, j]`, the numeric form of
/// `integral Z_r(u) B_j(u) du * B_k(t_r)`.
pub fn tensor_design(
    bu: ArrayView2<'_, f64>,
    bt: ArrayView2<'_, f64>,
    weights: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, TensorError> {
    let (j_pts, k_u) = bu.dim();
    let (n, k_s) = bt.dim();
    if weights.dim() != (n, j_pts) {
        return Err(TensorError::DimensionMismatch(format!(
            "weights are {:?} but expected ({n}, {j_pts})",
            weights.dim()
        )));
    }
    let integrals = weights.dot(&bu); // n x K_u
    let mut out = Array2::zeros((n, k_u * k_s));
    for r in 0..n {
        for k in 0..k_s
        {
            let btv = bt[[r, k]];
            for j in 0..k_u {
                out[[r, k * k_u + j]] = btv * integrals[[r, j]];
            }
        }
    }
    Ok(out)
}

/// The two Kronecker-structured penalties in the documented column order:
/// `penalty_u = I_{K_s} (x) P_u` and `penalty_t = P_t (x) I_{K_u}`, so that
/// the total roughness is `l1 xi' penalty_u xi + l2 xi' penalty_t xi`.
pub fn tensor_penalties(
    pu: &MarginalPenalty,
    pt: &MarginalPenalty,
) -> (Array2<f64>, Array2<f64>) {
    let k_u = pu.matrix.nrows();
    let k_s = pt.matrix.nrows();
    let eye_u = Array2::eye(k_u);
    let eye_s = Array2::eye(k_s);
    let penalty_u = linalg::kron(eye_s.view(), pu.matrix.view());
    let penalty_t = linalg::kron(pt.matrix.view(), eye_u.view());
    (penalty_u, penalty_t)
}

impl TensorBlock {
    pub fn new(
        design: Array2<f64>,
        pu: &MarginalPenalty,
        pt: &MarginalPenalty,
    ) -> Result<Self, TensorError> {
        let k_u = pu.matrix.nrows();
        let k_s = pt.matrix.nrows();
        if design.ncols() != k_u * k_s {
            return Err(TensorError::DimensionMismatch(format!(
                "design has {} columns, expected K_u * K_s = {}",
                design.ncols(),
                k_u * k_s
            )));
        }
        let (penalty_u, penalty_t) = tensor_penalties(pu, pt);
        Ok(TensorBlock {
            design,
            penalty_u,
            penalty_t,
            k_u,
            k_s,
            constraint_transform: None,
        })
    }

    /// Applies the marginal sum-to-zero constraint on the time margin:
    /// the fitted time-margin effect sums to zero over the data rows
    /// whose basis evaluations are `bt`. The block is reparameterized
    /// onto an orthonormal basis of the constrained subspace; penalties
    /// transform congruently. The cyclic functional margin is left
    /// unconstrained.
    pub fn apply_time_sum_to_zero(
        &mut self,
        bt: ArrayView2<'_, f64>,
    ) -> Result<(), TensorError> {
        if bt.ncols() != self.k_s {
            return Err(TensorError::DimensionMismatch(format!(
                "time-margin basis has {} columns, expected {}",
                bt.ncols(),
                self.k_s
            )));
        }
        if self.k_s < 2 {
            return Err(TensorError::ConstraintRankTooLarge {
                rank: self.k_u,
                count: self.k_u * self.k_s,
            });
        }
        let col_sums: Array1<f64> = bt.sum_axis(ndarray::Axis(0));
        let c = col_sums
            .into_shape_with_order((1, self.k_s))
            .expect("row vector reshape");
        let t_s = linalg::constraint_null_basis(c.view()); // K_s x (K_s - 1)
        let eye_u = Array2::eye(self.k_u);
        let transform = linalg::kron(t_s.view(), eye_u.view());
        self.design = self.design.dot(&transform);
        self.penalty_u = linalg::congruence(transform.view(), self.penalty_u.view());
        self.penalty_t = linalg::congruence(transform.view(), self.penalty_t.view());
        self.constraint_transform = Some(transform);
        Ok(())
    }

    /// Number of free coefficients in the current parameterization.
    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }

    /// Expands coefficients of the current parameterization back to the
    /// full `K_u * K_s` layout.
    pub fn expand_coefficients(&self, theta: &Array1<f64>) -> Array1<f64> {
        match &self.constraint_transform {
            Some(t) => t.dot(theta),
            None => theta.clone(),
        }
    }

    /// Expands a covariance in the current parameterization to the full
    /// layout: `T Sigma T'`.
    pub fn expand_covariance(&self, sigma: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.constraint_transform {
            Some(t) => t.dot(&sigma.dot(&t.t())),
            None => sigma.to_owned(),
        }
    }
}
