//! Grassmann-manifold steps for orthonormal bases.
//!
//! A basis moves along geodesics Υ(t) = ΥV·cos(Σt)·Vᵀ + U·sin(Σt)·Vᵀ where
//! UΣVᵀ is the compact SVD of a tangent direction. The line search walks
//! that curve with a derivative-free golden-section bracket; it never
//! accepts a point whose objective falls below the starting value.

use nalgebra::{DMatrix, DVector};

use crate::components::{orthonormality_drift, orthonormalize, Basis};

/// Accept a step only if it loses less than this much objective.
const ACCEPT_SLACK: f64 = 1e-12;
/// Golden-section shrink steps per bracket.
const SEARCH_ITERS: usize = 32;
/// Halvings of the search range after a non-finite probe.
const MAX_RANGE_RETRIES: usize = 8;
/// Re-orthonormalize an accepted point when it drifts past this.
const DRIFT_LIMIT: f64 = 1e-10;

/// A direction in the tangent space at some basis: Υᵀ·gg = 0.
#[derive(Debug, Clone)]
pub struct TangentDirection {
    gg: DMatrix<f64>,
}

impl TangentDirection {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gg
    }

    pub fn norm(&self) -> f64 {
        self.gg.norm()
    }
}

/// gg = g − ΥΥᵀg, the component of `g` tangent at `base`. Idempotent.
pub fn project_to_tangent(base: &Basis, g: &DMatrix<f64>) -> TangentDirection {
    let u = base.matrix();
    assert_eq!(g.shape(), u.shape(), "gradient shape must match basis");
    let gg = g - u * (u.transpose() * g);
    TangentDirection { gg }
}

/// Precomputed pieces of one geodesic: evaluating at a new t is then just
/// column scalings and one d×d multiply.
struct GeodesicCurve {
    base_v: DMatrix<f64>,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    sigma: DVector<f64>,
}

impl GeodesicCurve {
    fn new(base: &Basis, dir: &TangentDirection) -> Self {
        let svd = nalgebra::SVD::new(dir.gg.clone(), true, true);
        let mut u = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        let mut sigma = svd.singular_values;

        // Two cleanups keep Υ(t) orthonormal even for badly conditioned
        // tangents. Numerically null directions get an arbitrary U column
        // from the SVD, so their angles are pinned to zero (their motion
        // would be invisible anyway). The live columns of U then lose any
        // component inside the base span: the base may carry drift up to
        // the acceptance limit, and the SVD amplifies that into U by
        // ‖g‖/σ_j, which is ruinous exactly when the tangent is small.
        let sigma_max = sigma.max();
        for j in 0..sigma.len() {
            if sigma[j] <= 1e-12 * sigma_max {
                sigma[j] = 0.0;
            }
        }
        u -= base.matrix() * (base.matrix().transpose() * &u);
        for j in 0..sigma.len() {
            if sigma[j] == 0.0 {
                continue;
            }
            let norm = u.column(j).norm();
            if norm == 0.0 {
                sigma[j] = 0.0;
                continue;
            }
            u.column_mut(j).unscale_mut(norm);
            let uj = u.column(j).clone_owned();
            for l in (j + 1)..sigma.len() {
                if sigma[l] == 0.0 {
                    continue;
                }
                let proj = uj.dot(&u.column(l));
                u.column_mut(l).axpy(-proj, &uj, 1.0);
            }
        }

        // A contaminated U column also inflates its singular value, so the
        // curve would move along the cleaned direction at the dirty speed.
        // Measuring the tangent against the cleaned pair restores the speed
        // the direction actually carries; a non-positive reading means the
        // column was pure contamination and the direction is dead.
        for j in 0..sigma.len() {
            if sigma[j] == 0.0 {
                continue;
            }
            let vj = v_t.row(j).transpose();
            sigma[j] = u.column(j).dot(&(&dir.gg * vj)).max(0.0);
        }

        let base_v = base.matrix() * v_t.transpose();
        Self {
            base_v,
            u,
            v_t,
            sigma,
        }
    }

    fn sigma_max(&self) -> f64 {
        self.sigma.max()
    }

    fn at(&self, t: f64) -> DMatrix<f64> {
        let mut cos_part = self.base_v.clone();
        let mut sin_part = self.u.clone();
        for j in 0..self.sigma.len() {
            let angle = self.sigma[j] * t;
            cos_part.column_mut(j).scale_mut(angle.cos());
            sin_part.column_mut(j).scale_mut(angle.sin());
        }
        (cos_part + sin_part) * &self.v_t
    }
}

/// Point at parameter t along the geodesic from `base` in direction `dir`.
/// t = 0 and the zero direction return `base` unchanged.
pub fn geodesic(base: &Basis, dir: &TangentDirection, t: f64) -> Basis {
    if t == 0.0 || dir.gg.iter().all(|&v| v == 0.0) {
        return base.clone();
    }
    Basis::new_unchecked(GeodesicCurve::new(base, dir).at(t))
}

/// Maximizes `objective` along the geodesic through `base`.
///
/// Golden-section search over t ∈ [0, π/(2σ_max)], 32 shrink steps, keeping
/// the best probed point. Non-finite probes halve the range (up to 8 times);
/// if nothing finite better than the start is found the step degrades to
/// t = 0. Accepted points are re-orthonormalized when drift exceeds 1e-10
/// and re-checked, so the returned objective never falls more than 1e-12
/// below the starting one.
pub fn line_search_geodesic<F>(objective: F, base: &Basis, dir: &TangentDirection) -> (f64, Basis)
where
    F: Fn(&Basis) -> f64,
{
    let f0 = objective(base);
    if !f0.is_finite() {
        return (0.0, base.clone());
    }
    let curve = GeodesicCurve::new(base, dir);
    let sigma_max = curve.sigma_max();
    if !(sigma_max > 0.0) {
        return (0.0, base.clone());
    }

    let golden: f64 = (5f64.sqrt() - 1.0) / 2.0;
    let mut t_hi = std::f64::consts::PI / (2.0 * sigma_max + 1e-12);

    'retry: for _ in 0..=MAX_RANGE_RETRIES {
        let mut best_t = 0.0;
        let mut best_f = f0;
        let probe = |t: f64, best_t: &mut f64, best_f: &mut f64| -> Option<f64> {
            let f = objective(&Basis::new_unchecked(curve.at(t)));
            if !f.is_finite() {
                return None;
            }
            if f > *best_f {
                *best_f = f;
                *best_t = t;
            }
            Some(f)
        };

        let mut lo = 0.0f64;
        let mut hi = t_hi;
        let mut mid_lo = hi - golden * (hi - lo);
        let mut mid_hi = lo + golden * (hi - lo);
        let (mut f_lo, mut f_hi) = match (
            probe(mid_lo, &mut best_t, &mut best_f),
            probe(mid_hi, &mut best_t, &mut best_f),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                t_hi /= 2.0;
                continue 'retry;
            }
        };
        for _ in 0..SEARCH_ITERS {
            if f_lo >= f_hi {
                hi = mid_hi;
                mid_hi = mid_lo;
                f_hi = f_lo;
                mid_lo = hi - golden * (hi - lo);
                match probe(mid_lo, &mut best_t, &mut best_f) {
                    Some(f) => f_lo = f,
                    None => {
                        t_hi /= 2.0;
                        continue 'retry;
                    }
                }
            } else {
                lo = mid_lo;
                mid_lo = mid_hi;
                f_lo = f_hi;
                mid_hi = lo + golden * (hi - lo);
                match probe(mid_hi, &mut best_t, &mut best_f) {
                    Some(f) => f_hi = f,
                    None => {
                        t_hi /= 2.0;
                        continue 'retry;
                    }
                }
            }
        }

        if best_t == 0.0 || best_f < f0 - ACCEPT_SLACK {
            return (0.0, base.clone());
        }
        let mat = curve.at(best_t);
        let candidate = if orthonormality_drift(&mat) > DRIFT_LIMIT {
            match orthonormalize(&mat) {
                Ok(b) => b,
                Err(_) => return (0.0, base.clone()),
            }
        } else {
            Basis::new_unchecked(mat)
        };
        // Drift correction can move the objective; re-validate acceptance.
        let f_final = objective(&candidate);
        if f_final.is_finite() && f_final >= f0 - ACCEPT_SLACK {
            return (best_t, candidate);
        }
        return (0.0, base.clone());
    }
    (0.0, base.clone())
}
