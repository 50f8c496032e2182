//! Repulsion prior over component sets.
//!
//! Each component gets a quality q_k = exp(−½ξ‖Φᵏ‖₁) and each pair a
//! similarity S_kk' built from the angle structure of their bases. The
//! L-ensemble L = diag(q)·S·diag(q) scores a component set by log det L:
//! near-duplicate bases drive the determinant to zero, so maximizing it
//! pushes subspaces apart and shrinks scales.
//!
//! The similarity is a Gaussian kernel on the column-sum vectors u = Υ·1:
//! S(a,b) = exp(−½ϱ‖u_a − u_b‖²). For orthonormal bases ‖u‖² = d, which
//! makes this equal to exp(ϱ(Σ_{ij} cos-angles − d)); the subtraction of d
//! normalizes the diagonal to exactly 1 and keeps S positive semidefinite.

use nalgebra::{DMatrix, DVector};

use crate::components::{Basis, Component, Scales};
use crate::error::{Error, Result};

/// Relative eigenvalue floor below which the diagonal gets jitter.
const JITTER_TRIGGER: f64 = 1e-12;
/// Relative amount of jitter added when triggered.
const JITTER_AMOUNT: f64 = 1e-10;

/// q(Φ) = exp(−½ ξ ‖Φ‖₁), in (0, 1] for ξ ≥ 0.
pub fn quality(phi: &Scales, xi: f64) -> f64 {
    (-0.5 * xi * phi.l1_norm()).exp()
}

/// Normalized similarity of two bases; 1 exactly when the bases coincide,
/// symmetric in its arguments, minimized at exp(−2ϱd) for opposite bases.
pub fn similarity(a: &Basis, b: &Basis, varrho: f64) -> Result<f64> {
    if a.data_dim() != b.data_dim() || a.latent_dim() != b.latent_dim() {
        return Err(Error::Usage(format!(
            "similarity needs same-shape bases, got {}×{} and {}×{}",
            a.data_dim(),
            a.latent_dim(),
            b.data_dim(),
            b.latent_dim()
        )));
    }
    let u = a.column_sum_vector();
    let v = b.column_sum_vector();
    Ok((-0.5 * varrho * (u - v).norm_squared()).exp())
}

/// L-ensemble over a component set. `l` is stored without jitter; `jitter`
/// records the diagonal amount that regularized evaluations add back.
#[derive(Debug, Clone)]
pub struct LEnsemble {
    l: DMatrix<f64>,
    qualities: DVector<f64>,
    similarities: DMatrix<f64>,
    jitter: f64,
}

impl LEnsemble {
    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    /// L without jitter.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn qualities(&self) -> &DVector<f64> {
        &self.qualities
    }

    pub fn similarities(&self) -> &DMatrix<f64> {
        &self.similarities
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// L + jitter·I, the matrix actually decomposed.
    pub fn regularized(&self) -> DMatrix<f64> {
        let k = self.size();
        &self.l + DMatrix::identity(k, k) * self.jitter
    }

    #[cfg(test)]
    pub(crate) fn from_parts(
        l: DMatrix<f64>,
        qualities: DVector<f64>,
        similarities: DMatrix<f64>,
        jitter: f64,
    ) -> Self {
        Self {
            l,
            qualities,
            similarities,
            jitter,
        }
    }
}

/// Builds L = diag(q)·S·diag(q) over `components`. Jitter of
/// 1e-10·trace(L)/K is added (and recorded) only when the smallest
/// eigenvalue of L falls below 1e-12·trace(L)/K.
pub fn build_l_ensemble(components: &[Component], xi: f64, varrho: f64) -> Result<LEnsemble> {
    let k = components.len();
    if k == 0 {
        return Err(Error::Usage("need at least one component".into()));
    }
    let (dd, ld) = (components[0].data_dim(), components[0].latent_dim());
    if components
        .iter()
        .any(|c| c.data_dim() != dd || c.latent_dim() != ld)
    {
        return Err(Error::Usage("components must share dimensions".into()));
    }

    let qualities = DVector::from_fn(k, |i, _| quality(components[i].scales(), xi));
    let mut similarities = DMatrix::identity(k, k);
    for a in 0..k {
        for b in (a + 1)..k {
            let s = similarity(components[a].basis(), components[b].basis(), varrho)?;
            similarities[(a, b)] = s;
            similarities[(b, a)] = s;
        }
    }
    let mut l = similarities.clone();
    for a in 0..k {
        for b in 0..k {
            l[(a, b)] *= qualities[a] * qualities[b];
        }
    }

    let trace: f64 = l.diagonal().sum();
    let eigen_min = nalgebra::SymmetricEigen::new(l.clone())
        .eigenvalues
        .min();
    let jitter = if eigen_min < JITTER_TRIGGER * trace / k as f64 {
        JITTER_AMOUNT * trace / k as f64
    } else {
        0.0
    };

    Ok(LEnsemble {
        l,
        qualities,
        similarities,
        jitter,
    })
}

/// log det(L + jitter·I) via Cholesky.
pub fn log_det_prior(ensemble: &LEnsemble) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(ensemble.regularized()).ok_or_else(|| {
        Error::Numerical("L-ensemble is not positive definite even after jitter".into())
    })?;
    let value = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!(
            "log det of L-ensemble is not finite ({value})"
        )))
    }
}

/// Euclidean gradient of log det(L + jitter·I) with respect to basis k.
///
/// Entry (i, j) is Σ_{k'≠k} 2·[L⁻¹]_{kk'}·q_k·q_{k'}·∂S_{kk'}/∂Υᵏ_{ij} with
/// ∂S_{kk'}/∂Υᵏ_{ij} = S_{kk'}·ϱ·(u^{k'}_i − u^k_i), the exact derivative of
/// the Gaussian-kernel similarity; it is constant across j because only the
/// row sums of Υᵏ enter the kernel. Jitter is treated as a constant.
pub fn grad_log_det_wrt_upsilon(
    components: &[Component],
    ensemble: &LEnsemble,
    k: usize,
    varrho: f64,
) -> Result<DMatrix<f64>> {
    let n = ensemble.size();
    if components.len() != n || k >= n {
        return Err(Error::Usage(format!(
            "component index {k} out of range for ensemble of size {n}"
        )));
    }
    let inv = nalgebra::Cholesky::new(ensemble.regularized())
        .ok_or_else(|| Error::Numerical("L-ensemble is singular even after jitter".into()))?
        .inverse();

    let sums: Vec<DVector<f64>> = components
        .iter()
        .map(|c| c.basis().column_sum_vector())
        .collect();
    let q = ensemble.qualities();
    let s = ensemble.similarities();

    let dd = components[k].data_dim();
    let mut row_grad = DVector::zeros(dd);
    for other in 0..n {
        if other == k {
            continue;
        }
        let coef = 2.0 * inv[(k, other)] * q[k] * q[other] * s[(k, other)] * varrho;
        row_grad.axpy(coef, &(&sums[other] - &sums[k]), 1.0);
    }

    let ld = components[k].latent_dim();
    Ok(DMatrix::from_fn(dd, ld, |i, _| row_grad[i]))
}

/// Derivative of log det L with respect to Φᵏ_i.
///
/// S does not depend on Φ, so log det L = 2Σ log q_k + log det S and the
/// derivative collapses to −ξ·sign(Φ_i). At Φ_i = 0 this returns the zero
/// subgradient; coordinate updates that want a different member of the
/// subdifferential evaluate the candidates themselves.
pub fn grad_log_det_wrt_phi(phi: &Scales, xi: f64, i: usize) -> f64 {
    let v = phi.values()[i];
    let sign = if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    };
    -xi * sign
}
