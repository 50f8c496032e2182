//! The individual coordinate-ascent steps and the objective they share.

use nalgebra::{DMatrix, DVector};

use crate::components::{Basis, Scales};
use crate::data::BinaryDataset;
use crate::dpp::{build_l_ensemble, grad_log_det_wrt_phi, grad_log_det_wrt_upsilon, log_det_prior};
use crate::error::{Error, Result};
use crate::eval::log_sum_exp;
use crate::expfam;
use crate::inference::{LatentState, MixtureModel};
use crate::manifold::{line_search_geodesic, project_to_tangent};
use crate::parallel;

/// Gradient-step backtracking shared by the code and scale updates: start
/// here, halve on rejection.
const BACKTRACK_START: f64 = 0.5;
const BACKTRACK_LIMIT: usize = 20;

/// Largest move a single scale coordinate may make in one accepted step.
const SCALE_TRUST: f64 = 0.125;

/// Per-component score ln π_k + ln p(x | Wᵏ yᵏ) − ½‖yᵏ‖² for a single
/// sample, one candidate code per component. The quadratic term is the
/// code's own prior: a component that needs an extreme code to explain the
/// sample is discounted against one whose subspace fits it cheaply.
pub(crate) fn assignment_scores(
    model: &MixtureModel,
    x: &DVector<f64>,
    ys: &[DVector<f64>],
) -> Vec<f64> {
    model
        .components()
        .iter()
        .zip(model.pi().iter())
        .zip(ys.iter())
        .map(|((comp, &p), y)| {
            let theta = comp.materialize() * y;
            p.ln() + expfam::ll_unchecked(x, &theta) - 0.5 * y.norm_squared()
        })
        .collect()
}

/// Posterior over components for every sample, overwriting
/// `state.responsibilities` row by row:
/// R_nk ∝ π_k p(x_n | Wᵏ y_nᵏ) exp(−½‖y_nᵏ‖²).
/// Rows are normalized in log space; a row whose normalizer is not finite
/// aborts with a numerical error.
pub fn update_responsibilities(
    data: &BinaryDataset,
    model: &MixtureModel,
    state: &mut LatentState,
) -> Result<()> {
    let k = model.num_components();
    let ln_pi: Vec<f64> = model.pi().iter().map(|p| p.ln()).collect();
    let thetas: Vec<DMatrix<f64>> = model
        .components()
        .iter()
        .zip(state.codes.iter())
        .map(|(c, codes)| {
            let wt = c.materialize().transpose();
            codes * &wt
        })
        .collect();

    let rows: Vec<Result<Vec<f64>>> = parallel::map_indexed(data.len(), |i| {
        let x = data.row(i);
        let mut scores = vec![0.0; k];
        for (j, theta) in thetas.iter().enumerate() {
            scores[j] = ln_pi[j] + expfam::ll_unchecked(&x, &theta.row(i).transpose())
                - 0.5 * state.codes[j].row(i).norm_squared();
        }
        let lse = log_sum_exp(&scores);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "responsibility normalizer for sample {i} is {lse}"
            )));
        }
        Ok(scores.iter().map(|s| (s - lse).exp()).collect())
    });
    for (i, row) in rows.into_iter().enumerate() {
        for (j, r) in row?.into_iter().enumerate() {
            state.responsibilities[(i, j)] = r;
        }
    }
    Ok(())
}

/// Closed-form mixture-weight update: column means of the responsibilities.
/// This is the exact maximizer of the objective in π, so committing it can
/// only raise the objective.
pub fn update_pi(state: &LatentState) -> DVector<f64> {
    let n = state.responsibilities.nrows();
    let k = state.responsibilities.ncols();
    let mut pi = DVector::zeros(k);
    for j in 0..k {
        let mut sum = 0.0;
        for i in 0..n {
            sum += state.responsibilities[(i, j)];
        }
        pi[j] = sum / n as f64;
    }
    pi
}

/// The full fit objective. See `objective_parts` for the decomposition.
pub fn objective(data: &BinaryDataset, model: &MixtureModel, state: &LatentState) -> Result<f64> {
    objective_parts(data, model, state).map(|(value, _)| value)
}

/// Objective value plus whether the prior matrix needed jitter:
///   Σ_n Σ_k R_nk [ln π_k + ln p(x_n|Wᵏy_nᵏ) − ½‖y_nᵏ‖²]
///   − N·(d/2)·ln 2π
///   + λ·ln det(L + jitter·I).
/// Terms with R_nk = 0 are skipped, which also keeps a dead component's
/// ln π_k = -∞ out of the sum. λ = 0 skips the prior build entirely.
pub(crate) fn objective_parts(
    data: &BinaryDataset,
    model: &MixtureModel,
    state: &LatentState,
) -> Result<(f64, bool)> {
    let d = model.latent_dim();
    let ln_pi: Vec<f64> = model.pi().iter().map(|p| p.ln()).collect();
    let thetas: Vec<DMatrix<f64>> = model
        .components()
        .iter()
        .zip(state.codes.iter())
        .map(|(c, codes)| {
            let wt = c.materialize().transpose();
            codes * &wt
        })
        .collect();

    let contributions: Vec<f64> = parallel::map_indexed(data.len(), |i| {
        let x = data.row(i);
        let mut total = 0.0;
        for (j, theta) in thetas.iter().enumerate() {
            let r = state.responsibilities[(i, j)];
            if r == 0.0 {
                continue;
            }
            total += r
                * (ln_pi[j] + expfam::ll_unchecked(&x, &theta.row(i).transpose())
                    - 0.5 * state.codes[j].row(i).norm_squared());
        }
        total
    });
    let mut value: f64 = contributions.iter().sum();
    value -= data.len() as f64 * (d as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln();

    let mut jittered = false;
    if model.lambda() != 0.0 {
        let ensemble = build_l_ensemble(model.components(), model.xi(), model.varrho())?;
        jittered = ensemble.jitter() > 0.0;
        value += model.lambda() * log_det_prior(&ensemble)?;
    }
    if !value.is_finite() {
        return Err(Error::Numerical(format!("objective left the finite range: {value}")));
    }
    Ok((value, jittered))
}

/// Responsibility-weighted log-likelihood of one component over the whole
/// dataset, for a candidate loading matrix `w`. Rows with zero weight are
/// skipped. This is the data half of the acceptance objective used by the
/// basis and scale steps.
pub fn component_loglik(
    data: &BinaryDataset,
    resp: &DMatrix<f64>,
    k: usize,
    w: &DMatrix<f64>,
    codes: &DMatrix<f64>,
) -> f64 {
    let theta = codes * w.transpose();
    let x = data.matrix();
    let mut total = 0.0;
    for i in 0..data.len() {
        let r = resp[(i, k)];
        if r == 0.0 {
            continue;
        }
        let mut ll = 0.0;
        for j in 0..data.dim() {
            let t = theta[(i, j)];
            ll += x[(i, j)] * t + expfam::neg_softplus(t);
        }
        total += r * ll;
    }
    total
}

/// Acceptance objective for the component updates: weighted log-likelihood
/// plus the scaled prior. The pieces dropped from the full objective do not
/// depend on component k, so improving this improves the full objective by
/// the same amount. Any failure inside the prior evaluates to NaN, which
/// the searches treat as a rejection.
fn component_objective(
    data: &BinaryDataset,
    resp: &DMatrix<f64>,
    codes: &DMatrix<f64>,
    components: &[crate::components::Component],
    k: usize,
    lambda: f64,
    xi: f64,
    varrho: f64,
) -> f64 {
    let w = components[k].materialize();
    let loglik = component_loglik(data, resp, k, &w, codes);
    if lambda == 0.0 {
        return loglik;
    }
    match build_l_ensemble(components, xi, varrho).and_then(|e| log_det_prior(&e)) {
        Ok(ld) => loglik + lambda * ld,
        Err(_) => f64::NAN,
    }
}

/// Residual rows R_nk·(x_n − σ(θ_n)), the common factor of both component
/// gradients.
fn weighted_residuals(
    data: &BinaryDataset,
    resp: &DMatrix<f64>,
    k: usize,
    theta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = data.len();
    let dd = data.dim();
    let x = data.matrix();
    let mut v = DMatrix::zeros(n, dd);
    for i in 0..n {
        let r = resp[(i, k)];
        if r == 0.0 {
            continue;
        }
        for j in 0..dd {
            v[(i, j)] = r * (x[(i, j)] - expfam::sigmoid(theta[(i, j)]));
        }
    }
    v
}

/// Euclidean gradient of the acceptance objective in component k's basis,
/// before tangent projection: Vᵀ·Y·diag(Φ) + λ·(prior gradient), with V the
/// weighted residual rows.
pub fn basis_gradient(
    data: &BinaryDataset,
    resp: &DMatrix<f64>,
    model: &MixtureModel,
    codes: &DMatrix<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let comp = &model.components()[k];
    let w = comp.materialize();
    let theta = codes * w.transpose();
    let v = weighted_residuals(data, resp, k, &theta);
    let mut grad = v.transpose() * codes;
    for j in 0..comp.latent_dim() {
        grad.column_mut(j).scale_mut(comp.scales().values()[j]);
    }
    if model.lambda() != 0.0 {
        let ensemble = build_l_ensemble(model.components(), model.xi(), model.varrho())?;
        let prior = grad_log_det_wrt_upsilon(model.components(), &ensemble, k, model.varrho())?;
        grad += prior * model.lambda();
    }
    Ok(grad)
}

/// Data part of the scale gradient at an arbitrary working Φ:
/// ∂/∂Φ_i Σ_n R_nk ln p(x_n|Υdiag(Φ)y_n) = Σ_n [V·Υ]_{ni}·y_{ni} with V the
/// weighted residual rows at that Φ.
fn scales_data_gradient(
    data: &BinaryDataset,
    resp: &DMatrix<f64>,
    k: usize,
    upsilon: &DMatrix<f64>,
    phi: &DVector<f64>,
    codes: &DMatrix<f64>,
) -> DVector<f64> {
    let mut w = upsilon.clone();
    for j in 0..phi.len() {
        w.column_mut(j).scale_mut(phi[j]);
    }
    let theta = codes * w.transpose();
    let v = weighted_residuals(data, resp, k, &theta);
    let m = &v * upsilon;
    let mut grad = DVector::zeros(phi.len());
    for j in 0..phi.len() {
        let mut sum = 0.0;
        for i in 0..codes.nrows() {
            sum += m[(i, j)] * codes[(i, j)];
        }
        grad[j] = sum;
    }
    grad
}

/// Gradient of the acceptance objective in component k's signed scales at
/// the model's current Φ. The prior contributes exactly -λξ·sign(Φ_i) per
/// coordinate (zero at Φ_i = 0).
pub fn scales_gradient(
    data: &BinaryDataset,
    resp: &DMatrix<f64>,
    model: &MixtureModel,
    codes: &DMatrix<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    let comp = &model.components()[k];
    let mut grad = scales_data_gradient(
        data,
        resp,
        k,
        comp.basis().matrix(),
        comp.scales().values(),
        codes,
    );
    if model.lambda() != 0.0 {
        for i in 0..grad.len() {
            grad[i] += model.lambda() * grad_log_det_wrt_phi(comp.scales(), model.xi(), i);
        }
    }
    Ok(grad)
}

/// One basis step for component k: tangent-projected gradient, geodesic
/// line search, accept-only. Returns the (possibly unchanged) basis.
pub fn update_component_basis(
    data: &BinaryDataset,
    model: &MixtureModel,
    state: &LatentState,
    k: usize,
) -> Result<Basis> {
    let grad = basis_gradient(data, &state.responsibilities, model, &state.codes[k], k)?;
    let base = model.components()[k].basis();
    let dir = project_to_tangent(base, &grad);
    let objective_at = |b: &Basis| -> f64 {
        let mut comps = model.components().to_vec();
        comps[k] = match comps[k].with_basis(b.clone()) {
            Ok(c) => c,
            Err(_) => return f64::NAN,
        };
        component_objective(
            data,
            &state.responsibilities,
            &state.codes[k],
            &comps,
            k,
            model.lambda(),
            model.xi(),
            model.varrho(),
        )
    };
    let (_step, basis) = line_search_geodesic(objective_at, base, &dir);
    Ok(basis)
}

/// Coordinate sweeps over component k's signed scales. Each coordinate
/// proposes a backtracked gradient step; at Φ_i = 0 the prior's subgradient
/// is ambiguous, so all three slope choices are tried and the best accepted
/// candidate wins. Only candidates at least as good as the current value
/// are accepted, so the acceptance objective never decreases.
pub fn update_component_scales(
    data: &BinaryDataset,
    model: &MixtureModel,
    state: &LatentState,
    k: usize,
    sweeps: usize,
) -> Scales {
    let comp = &model.components()[k];
    let upsilon = comp.basis().matrix();
    let mut phi: DVector<f64> = comp.scales().values().clone();

    let eval = |phi: &DVector<f64>| -> f64 {
        let scales = match Scales::new(phi.clone()) {
            Ok(s) => s,
            Err(_) => return f64::NAN,
        };
        let mut comps = model.components().to_vec();
        comps[k] = match comps[k].with_scales(scales) {
            Ok(c) => c,
            Err(_) => return f64::NAN,
        };
        component_objective(
            data,
            &state.responsibilities,
            &state.codes[k],
            &comps,
            k,
            model.lambda(),
            model.xi(),
            model.varrho(),
        )
    };

    let mut current = eval(&phi);
    if !current.is_finite() {
        return comp.scales().clone();
    }
    for _ in 0..sweeps {
        for i in 0..phi.len() {
            let slopes: &[f64] = if phi[i] != 0.0 {
                if phi[i] > 0.0 {
                    &[1.0]
                } else {
                    &[-1.0]
                }
            } else if model.lambda() == 0.0 {
                &[0.0]
            } else {
                &[-1.0, 0.0, 1.0]
            };
            let data_slope = scales_data_gradient(
                data,
                &state.responsibilities,
                k,
                upsilon,
                &phi,
                &state.codes[k],
            )[i];
            let mut best: Option<(f64, f64)> = None; // (objective, phi_i)
            for &s in slopes {
                let g = data_slope + model.lambda() * (-model.xi() * s);
                if g == 0.0 || !g.is_finite() {
                    continue;
                }
                // First trial displacement is capped at SCALE_TRUST. An
                // unscaled gradient step can jump a scale past the
                // logistic's linear range in one move, and a component
                // that saturates early freezes the mixture before the
                // responsibilities have differentiated.
                let mut step = SCALE_TRUST / g.abs().max(1.0);
                for _ in 0..BACKTRACK_LIMIT {
                    let mut cand = phi.clone();
                    cand[i] = phi[i] + step * g;
                    let f = eval(&cand);
                    if f.is_finite() && f >= current {
                        if best.map_or(true, |(bf, _)| f > bf) {
                            best = Some((f, cand[i]));
                        }
                        break;
                    }
                    step *= 0.5;
                }
            }
            if let Some((f, value)) = best {
                phi[i] = value;
                current = f;
            }
        }
    }
    Scales::new(phi).expect("accepted scale updates keep entries finite")
}

/// Gradient of one component's per-sample code objective
/// -½‖y‖² + ln p(x|Wy), namely -y + Wᵀ(x − σ(Wy)).
pub fn code_gradient(
    x: &DVector<f64>,
    component: &crate::components::Component,
    y: &DVector<f64>,
) -> DVector<f64> {
    code_gradient_materialized(x, &component.materialize(), y)
}

fn code_gradient_materialized(
    x: &DVector<f64>,
    w: &DMatrix<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    let theta = w * y;
    let mut residual = x.clone();
    for j in 0..residual.len() {
        residual[j] -= expfam::sigmoid(theta[j]);
    }
    -y + w.transpose() * residual
}

/// Gradient ascent with backtracking on one sample's code against one
/// component. Accepts any step that does not lower the objective; a fully
/// rejected backtrack ends the ascent early.
pub(crate) fn ascend_code(
    x: &DVector<f64>,
    w: &DMatrix<f64>,
    mut y: DVector<f64>,
    steps: usize,
) -> DVector<f64> {
    let value =
        |y: &DVector<f64>| -> f64 { -0.5 * y.norm_squared() + expfam::ll_unchecked(x, &(w * y)) };
    let mut current = value(&y);
    if !current.is_finite() {
        return y;
    }
    for _ in 0..steps {
        let grad = code_gradient_materialized(x, w, &y);
        if grad.iter().any(|g| !g.is_finite()) || grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let mut step = BACKTRACK_START;
        let mut accepted = false;
        for _ in 0..BACKTRACK_LIMIT {
            let cand = &y + &grad * step;
            let f = value(&cand);
            if f.is_finite() && f >= current {
                y = cand;
                current = f;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    y
}

/// Updates every component's code for every sample in place by `steps`
/// rounds of backtracked gradient ascent. Each (sample, component) pair is
/// independent and ignores the responsibilities: the weight factors out of
/// the per-pair maximization, and keeping zero-weight codes current means
/// the next responsibility update compares components at their best.
pub fn update_codes(
    data: &BinaryDataset,
    model: &MixtureModel,
    state: &mut LatentState,
    steps: usize,
) {
    for (k, comp) in model.components().iter().enumerate() {
        let w = comp.materialize();
        let rows: Vec<DVector<f64>> = parallel::map_indexed(data.len(), |i| {
            let x = data.row(i);
            ascend_code(&x, &w, state.codes[k].row(i).transpose(), steps)
        });
        for (i, y) in rows.into_iter().enumerate() {
            state.codes[k].set_row(i, &y.transpose());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::{init_component, Component};
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::expfam::log_likelihood;
    use crate::rng::stream;
    use rand::Rng;

    fn small_data(seed: u64, samples: usize, dim: usize) -> BinaryDataset {
        let mut rng = stream(seed, "updates/data");
        let mut x = DMatrix::zeros(samples, dim);
        for i in 0..samples {
            for j in 0..dim {
                x[(i, j)] = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            }
        }
        BinaryDataset::new(x, None, None).unwrap()
    }

    fn small_model(seed: u64, k: usize, dim: usize, latent: usize, lambda: f64) -> MixtureModel {
        let comps: Vec<Component> = (0..k)
            .map(|j| init_component(dim, latent, seed * 100 + j as u64))
            .collect();
        let pi = DVector::from_element(k, 1.0 / k as f64);
        MixtureModel::new(pi, comps, 0.1, 0.1, lambda).unwrap()
    }

    fn random_state(seed: u64, n: usize, d: usize, k: usize) -> LatentState {
        let mut rng = stream(seed, "updates/state");
        let mut state = LatentState::zeros(n, d, k);
        for block in state.codes.iter_mut() {
            for i in 0..n {
                for j in 0..d {
                    block[(i, j)] = rng.random::<f64>() * 2.0 - 1.0;
                }
            }
        }
        for i in 0..n {
            let mut row: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|r| *r /= sum);
            for j in 0..k {
                state.responsibilities[(i, j)] = row[j];
            }
        }
        state
    }

    #[test]
    fn responsibilities_match_direct_bayes_rule() {
        // One sample, two components; the oracle works on raw probabilities
        // with no logs, which is fine at this scale. Each branch carries its
        // own code and that code's Gaussian prior weight.
        let data = small_data(3, 1, 4);
        let model = small_model(4, 2, 4, 2, 0.0);
        let mut state = random_state(5, 1, 2, 2);
        let x = data.row(0);
        let mut raw = [0.0f64; 2];
        for k in 0..2 {
            let y = state.codes[k].row(0).transpose();
            let theta = model.components()[k].materialize() * &y;
            let mut p = 1.0;
            for j in 0..4 {
                let s = crate::expfam::sigmoid(theta[j]);
                p *= if x[j] == 1.0 { s } else { 1.0 - s };
            }
            raw[k] = model.pi()[k] * p * (-0.5 * y.norm_squared()).exp();
        }
        update_responsibilities(&data, &model, &mut state).unwrap();
        let total = raw[0] + raw[1];
        assert!((state.responsibilities[(0, 0)] - raw[0] / total).abs() < 1e-12);
        assert!((state.responsibilities[(0, 1)] - raw[1] / total).abs() < 1e-12);
    }

    #[test]
    fn identical_components_recover_the_mixture_weights() {
        // With the components and their codes both identical, only π can
        // separate the posteriors.
        let data = small_data(7, 6, 5);
        let comp = init_component(5, 2, 11);
        let pi = DVector::from_column_slice(&[0.3, 0.7]);
        let model = MixtureModel::new(pi, vec![comp.clone(), comp], 0.1, 0.1, 0.0).unwrap();
        let mut state = random_state(8, 6, 2, 2);
        state.codes[1] = state.codes[0].clone();
        update_responsibilities(&data, &model, &mut state).unwrap();
        for i in 0..6 {
            assert!((state.responsibilities[(i, 0)] - 0.3).abs() < 1e-14);
            assert!((state.responsibilities[(i, 1)] - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weight_component_gets_exactly_zero_responsibility() {
        let data = small_data(9, 4, 5);
        let comps = vec![init_component(5, 2, 1), init_component(5, 2, 2)];
        let pi = DVector::from_column_slice(&[1.0, 0.0]);
        let model = MixtureModel::new(pi, comps, 0.1, 0.1, 0.0).unwrap();
        let mut state = random_state(10, 4, 2, 2);
        update_responsibilities(&data, &model, &mut state).unwrap();
        for i in 0..4 {
            assert_eq!(state.responsibilities[(i, 0)], 1.0);
            assert_eq!(state.responsibilities[(i, 1)], 0.0);
        }
    }

    #[test]
    fn responsibility_rows_stay_on_the_simplex() {
        let data = small_data(12, 20, 6);
        let model = small_model(13, 3, 6, 2, 1.0);
        let mut state = random_state(14, 20, 2, 3);
        update_responsibilities(&data, &model, &mut state).unwrap();
        for i in 0..20 {
            let mut sum = 0.0;
            for j in 0..3 {
                let r = state.responsibilities[(i, j)];
                assert!((0.0..=1.0).contains(&r));
                sum += r;
            }
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn pi_update_is_the_column_mean_and_the_maximizer() {
        let state = random_state(15, 30, 2, 2);
        let pi = update_pi(&state);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // The objective's π terms are Σ_nk R_nk ln π_k. Golden-section over
        // the K = 2 simplex must land on the column mean.
        let weight0: f64 = (0..30).map(|i| state.responsibilities[(i, 0)]).sum();
        let weight1: f64 = (0..30).map(|i| state.responsibilities[(i, 1)]).sum();
        let f = |p: f64| weight0 * p.ln() + weight1 * (1.0 - p).ln();
        let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
        let ratio = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - ratio * (hi - lo);
            let b = lo + ratio * (hi - lo);
            if f(a) < f(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        assert!((pi[0] - (lo + hi) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn objective_closed_form_with_zero_codes() {
        // θ = 0 makes every Bernoulli term ln(1/2) per dimension.
        let n = 8;
        let (dim, latent, k) = (5, 2, 3);
        let data = small_data(16, n, dim);
        let model = small_model(17, k, dim, latent, 0.0);
        let mut state = random_state(18, n, latent, k);
        for block in state.codes.iter_mut() {
            block.fill(0.0);
        }
        let mut expected = 0.0;
        for i in 0..n {
            for j in 0..k {
                expected += state.responsibilities[(i, j)] * model.pi()[j].ln();
            }
        }
        expected -= n as f64 * dim as f64 * 2.0f64.ln();
        expected -= n as f64 * (latent as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        let got = objective(&data, &model, &state).unwrap();
        assert!((got - expected).abs() < 1e-10, "got {got}, expected {expected}");
    }

    #[test]
    fn objective_matches_a_from_scratch_evaluation() {
        let n = 3;
        let (dim, latent, k) = (4, 2, 2);
        let data = small_data(19, n, dim);
        let model = small_model(20, k, dim, latent, 1.0);
        let state = random_state(21, n, latent, k);

        let mut expected = 0.0;
        for i in 0..n {
            let x = data.row(i);
            for j in 0..k {
                let y = state.codes[j].row(i).transpose();
                let theta = model.components()[j].materialize() * &y;
                expected += state.responsibilities[(i, j)]
                    * (model.pi()[j].ln() + log_likelihood(&x, &theta).unwrap()
                        - 0.5 * y.norm_squared());
            }
            expected -= (latent as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        }
        // Prior via a plain determinant rather than the Cholesky route.
        let ensemble = build_l_ensemble(model.components(), model.xi(), model.varrho()).unwrap();
        expected += model.lambda() * ensemble.regularized().determinant().ln();

        let got = objective(&data, &model, &state).unwrap();
        assert!((got - expected).abs() < 1e-10, "got {got}, expected {expected}");
    }

    #[test]
    fn component_loglik_agrees_with_the_public_likelihood() {
        let data = small_data(22, 6, 5);
        let model = small_model(23, 2, 5, 2, 0.0);
        let state = random_state(24, 6, 2, 2);
        let w = model.components()[0].materialize();
        let fast = component_loglik(&data, &state.responsibilities, 0, &w, &state.codes[0]);
        let mut slow = 0.0;
        for i in 0..6 {
            let theta = &w * state.codes[0].row(i).transpose();
            slow += state.responsibilities[(i, 0)]
                * log_likelihood(&data.row(i), &theta).unwrap();
        }
        assert!((fast - slow).abs() < 1e-12);
    }

    /// Raw-matrix replica of the acceptance objective that tolerates
    /// off-manifold bases, for finite-difference probes.
    fn raw_component_objective(
        data: &BinaryDataset,
        resp: &DMatrix<f64>,
        codes: &DMatrix<f64>,
        upsilons: &[DMatrix<f64>],
        phis: &[DVector<f64>],
        k: usize,
        lambda: f64,
        xi: f64,
        varrho: f64,
    ) -> f64 {
        let mut w = upsilons[k].clone();
        for j in 0..phis[k].len() {
            w.column_mut(j).scale_mut(phis[k][j]);
        }
        let loglik = component_loglik(data, resp, k, &w, codes);
        if lambda == 0.0 {
            return loglik;
        }
        let count = upsilons.len();
        let q: Vec<f64> = phis
            .iter()
            .map(|phi| (-0.5 * xi * phi.iter().map(|v| v.abs()).sum::<f64>()).exp())
            .collect();
        let ones = DVector::from_element(upsilons[0].ncols(), 1.0);
        let u: Vec<DVector<f64>> = upsilons.iter().map(|m| m * &ones).collect();
        let mut l = DMatrix::zeros(count, count);
        for a in 0..count {
            for b in 0..count {
                let s = (-0.5 * varrho * (&u[a] - &u[b]).norm_squared()).exp();
                l[(a, b)] = q[a] * q[b] * s;
            }
        }
        loglik + lambda * l.determinant().ln()
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let data = small_data(25, 8, 5);
        let model = small_model(26, 2, 5, 2, 2.0);
        let state = random_state(27, 8, 2, 2);
        let k = 0;
        let grad =
            basis_gradient(&data, &state.responsibilities, &model, &state.codes[k], k).unwrap();

        let upsilons: Vec<DMatrix<f64>> = model
            .components()
            .iter()
            .map(|c| c.basis().matrix().clone())
            .collect();
        let phis: Vec<DVector<f64>> = model
            .components()
            .iter()
            .map(|c| c.scales().values().clone())
            .collect();
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..2 {
                let mut up = upsilons.clone();
                up[k][(i, j)] += h;
                let plus = raw_component_objective(
                    &data, &state.responsibilities, &state.codes[k], &up, &phis, k, 2.0, 0.1, 0.1,
                );
                up[k][(i, j)] -= 2.0 * h;
                let minus = raw_component_objective(
                    &data, &state.responsibilities, &state.codes[k], &up, &phis, k, 2.0, 0.1, 0.1,
                );
                let fd = (plus - minus) / (2.0 * h);
                let denom = fd.abs().max(grad[(i, j)].abs()).max(1.0);
                assert!(
                    (fd - grad[(i, j)]).abs() / denom < 1e-5,
                    "entry ({i}, {j}): fd {fd} vs analytic {}",
                    grad[(i, j)]
                );
            }
        }
    }

    #[test]
    fn scales_gradient_matches_finite_differences() {
        let data = small_data(28, 8, 5);
        let model = small_model(29, 2, 5, 2, 2.0);
        let state = random_state(30, 8, 2, 2);
        let k = 1;
        let grad =
            scales_gradient(&data, &state.responsibilities, &model, &state.codes[k], k).unwrap();

        let upsilons: Vec<DMatrix<f64>> = model
            .components()
            .iter()
            .map(|c| c.basis().matrix().clone())
            .collect();
        let phis: Vec<DVector<f64>> = model
            .components()
            .iter()
            .map(|c| c.scales().values().clone())
            .collect();
        let h = 1e-6;
        for i in 0..2 {
            let mut ph = phis.clone();
            ph[k][i] += h;
            let plus = raw_component_objective(
                &data, &state.responsibilities, &state.codes[k], &upsilons, &ph, k, 2.0, 0.1, 0.1,
            );
            ph[k][i] -= 2.0 * h;
            let minus = raw_component_objective(
                &data, &state.responsibilities, &state.codes[k], &upsilons, &ph, k, 2.0, 0.1, 0.1,
            );
            let fd = (plus - minus) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1.0);
            assert!(
                (fd - grad[i]).abs() / denom < 1e-6,
                "coordinate {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn code_gradient_matches_finite_differences() {
        let data = small_data(31, 1, 6);
        let model = small_model(32, 3, 6, 3, 0.0);
        let x = data.row(0);
        let mut rng = stream(33, "updates/code-fd");
        let y = DVector::from_fn(3, |_, _| rng.random::<f64>() - 0.5);

        for k in 0..3 {
            let comp = &model.components()[k];
            let grad = code_gradient(&x, comp, &y);
            let w = comp.materialize();
            let value = |y: &DVector<f64>| -> f64 {
                -0.5 * y.norm_squared() + log_likelihood(&x, &(&w * y)).unwrap()
            };
            let h = 1e-6;
            for i in 0..3 {
                let mut yp = y.clone();
                yp[i] += h;
                let mut ym = y.clone();
                ym[i] -= h;
                let fd = (value(&yp) - value(&ym)) / (2.0 * h);
                assert!(
                    (fd - grad[i]).abs() / fd.abs().max(1.0) < 1e-6,
                    "component {k} coordinate {i}: fd {fd} vs analytic {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn basis_step_never_lowers_the_acceptance_objective() {
        let data = small_data(34, 15, 6);
        let state = random_state(35, 15, 2, 2);
        for trial in 0..10 {
            let model = small_model(40 + trial, 2, 6, 2, 1.0);
            let before = component_objective(
                &data,
                &state.responsibilities,
                &state.codes[0],
                model.components(),
                0,
                1.0,
                0.1,
                0.1,
            );
            let basis = update_component_basis(&data, &model, &state, 0).unwrap();
            let comp = model.components()[0].with_basis(basis).unwrap();
            let mut comps = model.components().to_vec();
            comps[0] = comp;
            let after = component_objective(
                &data,
                &state.responsibilities,
                &state.codes[0],
                &comps,
                0,
                1.0,
                0.1,
                0.1,
            );
            assert!(
                after >= before - 1e-9,
                "trial {trial}: objective fell from {before} to {after}"
            );
        }
    }

    #[test]
    fn scale_sweep_never_lowers_the_acceptance_objective() {
        let data = small_data(36, 15, 6);
        let state = random_state(37, 15, 2, 2);
        for trial in 0..10 {
            let model = small_model(60 + trial, 2, 6, 2, 1.0);
            let before = component_objective(
                &data,
                &state.responsibilities,
                &state.codes[1],
                model.components(),
                1,
                1.0,
                0.1,
                0.1,
            );
            let scales = update_component_scales(&data, &model, &state, 1, 2);
            let comp = model.components()[1].with_scales(scales).unwrap();
            let mut comps = model.components().to_vec();
            comps[1] = comp;
            let after = component_objective(
                &data,
                &state.responsibilities,
                &state.codes[1],
                &comps,
                1,
                1.0,
                0.1,
                0.1,
            );
            assert!(
                after >= before - 1e-9,
                "trial {trial}: objective fell from {before} to {after}"
            );
        }
    }

    #[test]
    fn code_update_never_lowers_any_pair_objective() {
        // Every (sample, component) code maximizes its own objective, so
        // each pair must hold or improve independently.
        let data = small_data(38, 10, 6);
        let model = small_model(39, 2, 6, 3, 0.0);
        let mut state = random_state(41, 10, 3, 2);
        let per_pair = |state: &LatentState| -> Vec<f64> {
            let mut out = Vec::new();
            for k in 0..2 {
                let w = model.components()[k].materialize();
                for i in 0..10 {
                    let y = state.codes[k].row(i).transpose();
                    out.push(
                        -0.5 * y.norm_squared()
                            + log_likelihood(&data.row(i), &(&w * &y)).unwrap(),
                    );
                }
            }
            out
        };
        let before = per_pair(&state);
        update_codes(&data, &model, &mut state, 5);
        let after = per_pair(&state);
        for (i, (a, b)) in after.iter().zip(before.iter()).enumerate() {
            assert!(*a >= b - 1e-9, "pair {i} regressed: {b} -> {a}");
        }
        // At least one code should actually move from a random start.
        assert!(after.iter().zip(before.iter()).any(|(a, b)| a > b));
    }

    #[test]
    fn repulsion_pushes_near_duplicates_apart() {
        // Two near-identical components under a strong prior: the basis
        // step must lower their similarity.
        let data = small_data(42, 10, 6);
        let base = init_component(6, 2, 77);
        let mut nudged = base.basis().matrix().clone();
        nudged[(0, 0)] += 1e-3;
        let second = Component::new(
            crate::components::orthonormalize(&nudged).unwrap(),
            base.scales().clone(),
        )
        .unwrap();
        let pi = DVector::from_element(2, 0.5);
        let model = MixtureModel::new(pi, vec![base, second], 0.1, 0.5, 50.0).unwrap();
        let state = random_state(43, 10, 2, 2);

        let before = crate::dpp::similarity(
            model.components()[0].basis(),
            model.components()[1].basis(),
            0.5,
        )
        .unwrap();
        let basis = update_component_basis(&data, &model, &state, 0).unwrap();
        let after =
            crate::dpp::similarity(&basis, model.components()[1].basis(), 0.5).unwrap();
        assert!(
            after < before,
            "similarity did not drop: {before} -> {after}"
        );
    }

    #[test]
    fn swapping_two_components_swaps_the_outputs_exactly() {
        let data = small_data(44, 12, 5);
        let comps = vec![init_component(5, 2, 5), init_component(5, 2, 6)];
        let pi = DVector::from_column_slice(&[0.4, 0.6]);
        let model = MixtureModel::new(pi, comps.clone(), 0.1, 0.1, 0.0).unwrap();
        let swapped = MixtureModel::new(
            DVector::from_column_slice(&[0.6, 0.4]),
            vec![comps[1].clone(), comps[0].clone()],
            0.1,
            0.1,
            0.0,
        )
        .unwrap();
        let mut state_a = random_state(45, 12, 2, 2);
        let mut state_b = state_a.clone();
        state_b.responsibilities.swap_columns(0, 1);
        state_b.codes.swap(0, 1);

        update_responsibilities(&data, &model, &mut state_a).unwrap();
        update_responsibilities(&data, &swapped, &mut state_b).unwrap();
        for i in 0..12 {
            assert_eq!(state_a.responsibilities[(i, 0)], state_b.responsibilities[(i, 1)]);
            assert_eq!(state_a.responsibilities[(i, 1)], state_b.responsibilities[(i, 0)]);
        }
    }

    #[test]
    fn objective_is_invariant_under_component_rotation() {
        let data = small_data(46, 10, 5);
        let comps: Vec<Component> = (0..3).map(|j| init_component(5, 2, 90 + j)).collect();
        let pi = DVector::from_column_slice(&[0.2, 0.3, 0.5]);
        let model = MixtureModel::new(pi, comps.clone(), 0.1, 0.1, 1.0).unwrap();
        let rotated = MixtureModel::new(
            DVector::from_column_slice(&[0.3, 0.5, 0.2]),
            vec![comps[1].clone(), comps[2].clone(), comps[0].clone()],
            0.1,
            0.1,
            1.0,
        )
        .unwrap();
        let state = random_state(47, 10, 2, 3);
        let mut rotated_state = state.clone();
        for i in 0..10 {
            rotated_state.responsibilities[(i, 0)] = state.responsibilities[(i, 1)];
            rotated_state.responsibilities[(i, 1)] = state.responsibilities[(i, 2)];
            rotated_state.responsibilities[(i, 2)] = state.responsibilities[(i, 0)];
        }
        rotated_state.codes[0] = state.codes[1].clone();
        rotated_state.codes[1] = state.codes[2].clone();
        rotated_state.codes[2] = state.codes[0].clone();
        let a = objective(&data, &model, &state).unwrap();
        let b = objective(&data, &rotated, &rotated_state).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn synthetic_data_responsibilities_stay_finite_under_the_prior() {
        let cfg = SyntheticConfig {
            copies: 4,
            ..SyntheticConfig::default()
        };
        let (noisy, _) = generate_synthetic(&cfg).unwrap();
        let model = small_model(48, 3, 16, 4, 10.0);
        let mut state = LatentState::zeros(noisy.len(), 4, 3);
        update_responsibilities(&noisy, &model, &mut state).unwrap();
        let (value, _) = objective_parts(&noisy, &model, &state).unwrap();
        assert!(value.is_finite());
    }
}
