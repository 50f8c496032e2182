//! Factored component matrices W = Υ·diag(Φ).
//!
//! Υ carries an orthonormality invariant, Φ is a signed diagonal whose
//! entries may be exactly zero (a pruned direction). Both are value types:
//! construct, validate once, never mutate in place.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// How far ΥᵀΥ may drift from the identity (Frobenius norm) before a matrix
/// stops being a valid basis.
pub const BASIS_TOL: f64 = 1e-8;

/// Orthonormal factor of a component, D×d with D ≥ d ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    upsilon: DMatrix<f64>,
}

impl Basis {
    /// Validates shape and orthonormality (tolerance [`BASIS_TOL`]).
    pub fn new(upsilon: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = upsilon.shape();
        if cols < 1 || rows < cols {
            return Err(Error::Usage(format!(
                "basis must be D×d with D ≥ d ≥ 1, got {rows}×{cols}"
            )));
        }
        let drift = orthonormality_drift(&upsilon);
        if !drift.is_finite() || drift > BASIS_TOL {
            return Err(Error::Degenerate(format!(
                "basis drifted from orthonormality by {drift:.3e}"
            )));
        }
        Ok(Self { upsilon })
    }

    /// For internal construction sites that guarantee orthonormality by
    /// direct computation (Gram-Schmidt output, geodesic evaluation).
    pub(crate) fn new_unchecked(upsilon: DMatrix<f64>) -> Self {
        debug_assert!(
            orthonormality_drift(&upsilon) <= BASIS_TOL,
            "unchecked basis drifted by {:.3e}",
            orthonormality_drift(&upsilon)
        );
        Self { upsilon }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.upsilon
    }

    pub fn data_dim(&self) -> usize {
        self.upsilon.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.upsilon.ncols()
    }

    /// Column sums Υᵀ1 are all the similarity kernel ever needs from a basis.
    pub(crate) fn column_sum_vector(&self) -> DVector<f64> {
        let d = self.latent_dim();
        &self.upsilon * DVector::from_element(d, 1.0)
    }
}

/// ‖ΥᵀΥ − I‖_F.
pub(crate) fn orthonormality_drift(upsilon: &DMatrix<f64>) -> f64 {
    let d = upsilon.ncols();
    let gram = upsilon.transpose() * upsilon;
    (gram - DMatrix::identity(d, d)).norm()
}

/// Signed diagonal of a component; length-d vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Scales {
    phi: DVector<f64>,
}

impl Scales {
    pub fn new(phi: DVector<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::Usage("scales need at least one entry".into()));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite scale entry".into()));
        }
        Ok(Self { phi })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Σ_i |Φ_i|.
    pub fn l1_norm(&self) -> f64 {
        self.phi.iter().map(|v| v.abs()).sum()
    }
}

/// One mixture component's transformation in factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    basis: Basis,
    scales: Scales,
}

impl Component {
    pub fn new(basis: Basis, scales: Scales) -> Result<Self> {
        if basis.latent_dim() != scales.len() {
            return Err(Error::Usage(format!(
                "basis has {} columns but scales has {} entries",
                basis.latent_dim(),
                scales.len()
            )));
        }
        Ok(Self { basis, scales })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn scales(&self) -> &Scales {
        &self.scales
    }

    pub fn data_dim(&self) -> usize {
        self.basis.data_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.latent_dim()
    }

    pub fn with_basis(&self, basis: Basis) -> Result<Self> {
        Self::new(basis, self.scales.clone())
    }

    pub fn with_scales(&self, scales: Scales) -> Result<Self> {
        Self::new(self.basis.clone(), scales)
    }

    /// W = Υ·diag(Φ); column j is Φ_j · Υ_{·j}.
    pub fn materialize(&self) -> DMatrix<f64> {
        let mut w = self.basis.upsilon.clone();
        for (j, &s) in self.scales.phi.iter().enumerate() {
            w.column_mut(j).scale_mut(s);
        }
        w
    }
}

/// Modified Gram-Schmidt. Output spans the same space as `m`; fails on
/// (numerically) rank-deficient input.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Basis> {
    let (rows, cols) = m.shape();
    if cols < 1 || rows < cols {
        return Err(Error::Usage(format!(
            "need a tall matrix to orthonormalize, got {rows}×{cols}"
        )));
    }
    let mut q = m.clone();
    for j in 0..cols {
        let original_norm = m.column(j).norm();
        let norm = q.column(j).norm();
        if norm <= 1e-10 * (1.0 + original_norm) {
            return Err(Error::Degenerate(format!(
                "column {j} is linearly dependent on earlier columns"
            )));
        }
        q.column_mut(j).unscale_mut(norm);
        let qj = q.column(j).clone_owned();
        for l in (j + 1)..cols {
            let proj = qj.dot(&q.column(l));
            let mut col = q.column_mut(l);
            col.axpy(-proj, &qj, 1.0);
        }
    }
    Ok(Basis::new_unchecked(q))
}

/// Draws a fresh component: Υ via Gram-Schmidt over standard-normal entries
/// (filled column by column), Φ uniform on [0.1, 1.0). Deterministic in
/// `seed`; the basis entries are drawn before the scales.
pub fn init_component(data_dim: usize, latent_dim: usize, seed: u64) -> Component {
    assert!(
        latent_dim >= 1 && data_dim >= latent_dim,
        "need D ≥ d ≥ 1, got D={data_dim}, d={latent_dim}"
    );
    let mut rng = rng::stream(seed, "component-init");
    let basis = loop {
        let mut m = DMatrix::zeros(data_dim, latent_dim);
        for j in 0..latent_dim {
            for i in 0..data_dim {
                m[(i, j)] = rng.sample(StandardNormal);
            }
        }
        // A Gaussian draw is rank-deficient with probability zero; redrawing
        // keeps the function total without weakening orthonormalize.
        if let Ok(b) = orthonormalize(&m) {
            break b;
        }
    };
    let phi = DVector::from_fn(latent_dim, |_, _| 0.1 + 0.9 * rng.random::<f64>());
    let scales = Scales::new(phi).expect("finite by construction");
    Component::new(basis, scales).expect("dims agree by construction")
}
