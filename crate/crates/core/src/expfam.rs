//! Bernoulli member of the exponential family.
//!
//! Densities are written as p(x|θ) = exp(xᵀθ + g(θ) + h(x)) with natural
//! parameter θ, g(θ) = Σ_i −log(1+e^{θ_i}) and h(x) = 0. The mean map is the
//! element-wise sigmoid. Only the Bernoulli member is supported.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// −log(1+e^t), overflow-safe. Beyond |t| = 30 the asymptotes −t and −e^t
/// are exact to well below 1e-12 and avoid Inf from exp.
#[inline]
pub(crate) fn neg_softplus(t: f64) -> f64 {
    if t > 30.0 {
        -t
    } else if t < -30.0 {
        -t.exp()
    } else if t > 0.0 {
        -t - (-t).exp().ln_1p()
    } else {
        -t.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Log-partition g(θ) = Σ_i −log(1+e^{θ_i}).
pub fn log_partition(theta: &DVector<f64>) -> f64 {
    theta.iter().map(|&t| neg_softplus(t)).sum()
}

/// Gradient of the log-partition: element-wise 1/(1+e^{θ_i}) − 1 = −σ(θ_i).
/// Entries lie in (−1, 0), saturating at the boundaries in floating point.
pub fn log_partition_grad(theta: &DVector<f64>) -> DVector<f64> {
    theta.map(|t| -sigmoid(t))
}

/// Log-density log p(x|θ) = xᵀθ + g(θ) for binary x. Always ≤ 0.
pub fn log_likelihood(x: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    if x.len() != theta.len() {
        return Err(Error::Usage(format!(
            "log_likelihood: x has {} entries but theta has {}",
            x.len(),
            theta.len()
        )));
    }
    debug_assert!(x.iter().all(|&v| v == 0.0 || v == 1.0));
    Ok(ll_unchecked(x, theta))
}

/// Hot-path variant of [`log_likelihood`]; shapes are validated by callers.
#[inline]
pub(crate) fn ll_unchecked(x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for (&xi, &ti) in x.iter().zip(theta.iter()) {
        acc += xi * ti + neg_softplus(ti);
    }
    acc
}

/// Mean parameters α_i = σ(θ_i), the expected value of each bit.
pub fn mean_params(theta: &DVector<f64>) -> DVector<f64> {
    theta.map(sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(entries: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(entries)
    }

    #[test]
    fn log_partition_at_zero_is_minus_log2_per_coordinate() {
        let got = log_partition(&vec(&[0.0, 0.0]));
        assert!((got - (-2.0 * std::f64::consts::LN_2)).abs() < 1e-15);
    }

    #[test]
    fn log_partition_matches_direct_evaluation() {
        // Direct form −ln(1+e^2), safe at this magnitude.
        let oracle = -(1.0 + 2.0f64.exp()).ln();
        assert!((oracle - (-2.1269280110429727)).abs() < 1e-15);
        assert!((log_partition(&vec(&[2.0])) - oracle).abs() < 1e-14);
    }

    #[test]
    fn log_partition_large_theta_follows_asymptote() {
        let got = log_partition(&vec(&[50.0]));
        assert!(got.is_finite());
        assert!((got + 50.0).abs() < 1e-12);
        // Deep negative side: −e^t, vanishing.
        let neg = log_partition(&vec(&[-50.0]));
        assert!((neg - (-(-50.0f64).exp())).abs() < 1e-30);
    }

    #[test]
    fn grad_at_zero_is_minus_half() {
        let g = log_partition_grad(&vec(&[0.0]));
        assert_eq!(g.len(), 1);
        assert!((g[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn grad_matches_sigmoid_oracle() {
        // σ(2) computed from the definition with an independent formula.
        let sigma2 = 2.0f64.exp() / (1.0 + 2.0f64.exp());
        assert!((sigma2 - 0.8807970779778823).abs() < 1e-15);
        let g = log_partition_grad(&vec(&[2.0]));
        assert!((g[0] + sigma2).abs() < 1e-14);
    }

    #[test]
    fn grad_matches_central_finite_differences() {
        let points: [&[f64]; 4] = [&[0.3], &[-1.7, 2.4], &[9.0, -9.0, 0.0], &[25.0]];
        for entries in points {
            let theta = vec(entries);
            let grad = log_partition_grad(&theta);
            for i in 0..theta.len() {
                let h = 1e-6 * (1.0 + theta[i].abs());
                let mut plus = theta.clone();
                plus[i] += h;
                let mut minus = theta.clone();
                minus[i] -= h;
                let fd = (log_partition(&plus) - log_partition(&minus)) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!(
                    ((grad[i] - fd) / denom).abs() < 1e-6,
                    "grad {} vs fd {} at θ={}",
                    grad[i],
                    fd,
                    theta[i]
                );
            }
        }
    }

    #[test]
    fn grad_entries_stay_in_open_interval() {
        for t in [-30.0, -4.0, -0.1, 0.0, 0.1, 4.0, 30.0] {
            let g = log_partition_grad(&vec(&[t]))[0];
            assert!(g > -1.0 && g < 0.0, "g'({t}) = {g}");
        }
    }

    #[test]
    fn log_likelihood_matches_pmf_oracle() {
        // p(x;α) = α^x (1−α)^(1−x) with α = σ(θ).
        let alpha = sigmoid(2.0);
        let on = log_likelihood(&vec(&[1.0]), &vec(&[2.0])).unwrap();
        assert!((on - alpha.ln()).abs() < 1e-14);
        let off = log_likelihood(&vec(&[0.0]), &vec(&[2.0])).unwrap();
        assert!((off - (1.0 - alpha).ln()).abs() < 1e-13);
    }

    #[test]
    fn log_likelihood_uniform_case() {
        let got = log_likelihood(&vec(&[1.0, 0.0]), &vec(&[0.0, 0.0])).unwrap();
        assert!((got - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_likelihood_is_never_positive() {
        let mut rng = crate::rng::stream(11, "expfam/ll-sign");
        use rand::Rng;
        for _ in 0..200 {
            let d = rng.random_range(1..8);
            let theta = DVector::from_fn(d, |_, _| rng.random_range(-40.0..40.0));
            let x = DVector::from_fn(d, |_, _| f64::from(rng.random_range(0..2u8)));
            let ll = log_likelihood(&x, &theta).unwrap();
            assert!(ll <= 0.0, "ll = {ll}");
        }
    }

    #[test]
    fn log_likelihood_rejects_shape_mismatch() {
        let err = log_likelihood(&vec(&[1.0]), &vec(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn brute_force_normalization() {
        let mut rng = crate::rng::stream(23, "expfam/normalization");
        use rand::Rng;
        for _ in 0..20 {
            let d = rng.random_range(1..=10usize);
            let theta = DVector::from_fn(d, |_, _| rng.random_range(-6.0..6.0));
            let mut total = 0.0;
            for mask in 0..(1u32 << d) {
                let x = DVector::from_fn(d, |i, _| f64::from((mask >> i) & 1));
                total += log_likelihood(&x, &theta).unwrap().exp();
            }
            assert!((total - 1.0).abs() < 1e-10, "Σp = {total} at D={d}");
        }
    }

    #[test]
    fn mean_params_negate_the_log_partition_gradient() {
        // α = σ(θ) and g' = −σ(θ) share the same sigmoid evaluation, so the
        // identity α = −g' holds bitwise.
        let mut rng = crate::rng::stream(5, "expfam/mean-grad");
        use rand::Rng;
        for _ in 0..50 {
            let theta = DVector::from_fn(6, |_, _| rng.random_range(-35.0..35.0));
            let mean = mean_params(&theta);
            let grad = log_partition_grad(&theta);
            for i in 0..6 {
                assert_eq!(mean[i], -grad[i]);
            }
        }
    }

    #[test]
    fn mean_params_asymptotes() {
        let m = mean_params(&vec(&[-50.0, 0.0, 2.0]));
        assert!(m[0] < 1e-20);
        assert!((m[1] - 0.5).abs() < 1e-15);
        assert!((m[2] - 0.8807970779778823).abs() < 1e-14);
    }
}
