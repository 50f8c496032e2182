//! The outer fit driver and held-out prediction.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;

use crate::components::init_component;
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::eval::log_sum_exp;
use crate::rng::{derive_seed, stream};

use super::updates::{
    ascend_code, assignment_scores, objective_parts, update_codes, update_component_basis,
    update_component_scales, update_pi, update_responsibilities,
};
use super::{FitConfig, FitOutcome, FitReport, LatentState, MixtureModel, Prediction};

/// Fixed-point schedule for `predict`: alternate this many rounds of code
/// ascent (with this many gradient steps each) and posterior reweighting,
/// stopping early once no posterior entry moves more than the tolerance.
const PREDICT_ROUNDS: usize = 10;
const PREDICT_CODE_STEPS: usize = 5;
const PREDICT_TOL: f64 = 1e-8;

fn abort(error: Error, trace: &[f64], outer_iters: usize, jitter_events: usize, seed: u64) -> Error {
    Error::FitAborted {
        reason: error.to_string(),
        report: Box::new(FitReport {
            objective_trace: trace.to_vec(),
            outer_iters,
            converged: false,
            jitter_events,
            seed,
        }),
    }
}

/// Fits the mixture by variational EM.
///
/// Initialization starts the mixture weights uniform, draws each
/// component from its own derived seed stream, and each latent code
/// from its unit-normal prior. Each outer iteration
/// commits the closed-form weight update, then runs inner iterations of
/// responsibilities, per-component basis and scale steps, and code ascent
/// until the objective moves less than `epsilon` or `max_inner` is hit;
/// the outer loop stops the same way against `max_outer`.
///
/// The report's trace holds the objective after initialization and after
/// every inner iteration. A numerical failure mid-run aborts with the
/// partial report attached.
pub fn fit(data: &BinaryDataset, cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    if cfg.latent_dim > data.dim() {
        return Err(Error::Usage(format!(
            "latent dimension {} exceeds data dimension {}",
            cfg.latent_dim,
            data.dim()
        )));
    }

    // Weights start uniform. A skewed draw hands the smallest component a
    // ln pi deficit larger than any early likelihood gap, and the weight
    // update then starves it before the responsibilities differentiate.
    let pi = DVector::from_element(cfg.num_components, 1.0 / cfg.num_components as f64);
    let components = (0..cfg.num_components)
        .map(|k| {
            init_component(
                data.dim(),
                cfg.latent_dim,
                derive_seed(cfg.seed, &format!("component/{k}")),
            )
        })
        .collect();
    let mut model = MixtureModel::new(pi, components, cfg.xi, cfg.varrho, cfg.lambda)?;
    let mut state = LatentState::zeros(data.len(), cfg.latent_dim, cfg.num_components);
    {
        // Codes start as a draw from their unit-normal prior rather than at
        // its mode. At zero the scale updates see no data term on the first
        // sweep and the repulsion prior alone drags every scale toward zero,
        // freezing the run in an undifferentiated state.
        let mut rng = stream(cfg.seed, "codes");
        for block in state.codes.iter_mut() {
            for i in 0..block.nrows() {
                for j in 0..block.ncols() {
                    block[(i, j)] = rand::Rng::sample(&mut rng, StandardNormal);
                }
            }
        }
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut jitter_events = 0usize;
    let mut outer_done = 0usize;

    update_responsibilities(data, &model, &mut state)
        .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
    let (initial, jittered) = objective_parts(data, &model, &state)
        .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
    if jittered {
        jitter_events += 1;
    }
    trace.push(initial);

    let mut converged = false;
    let mut outer_last = initial;
    for _ in 0..cfg.max_outer {
        let pi = update_pi(&state);
        model = model
            .with_pi(pi)
            .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;

        let mut inner_last = *trace.last().expect("trace holds the initial objective");
        for _ in 0..cfg.max_inner {
            update_responsibilities(data, &model, &mut state)
                .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
            for k in 0..cfg.num_components {
                let basis = update_component_basis(data, &model, &state, k)
                    .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
                let comp = model.components()[k]
                    .with_basis(basis)
                    .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
                model = model
                    .with_component(k, comp)
                    .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
                let scales = update_component_scales(data, &model, &state, k, cfg.phi_sweeps);
                let comp = model.components()[k]
                    .with_scales(scales)
                    .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
                model = model
                    .with_component(k, comp)
                    .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
            }
            update_codes(data, &model, &mut state, cfg.y_step_iters);

            let (value, jittered) = objective_parts(data, &model, &state)
                .map_err(|e| abort(e, &trace, outer_done, jitter_events, cfg.seed))?;
            if jittered {
                jitter_events += 1;
            }
            trace.push(value);
            let delta = (value - inner_last).abs();
            inner_last = value;
            if delta < cfg.epsilon {
                break;
            }
        }
        outer_done += 1;

        let outer_value = *trace.last().expect("inner loop pushed at least one value");
        if (outer_value - outer_last).abs() < cfg.epsilon {
            converged = true;
            break;
        }
        outer_last = outer_value;
    }

    Ok(FitOutcome {
        model,
        state,
        report: FitReport {
            objective_trace: trace,
            outer_iters: outer_done,
            converged,
            jitter_events,
            seed: cfg.seed,
        },
    })
}

/// Posterior inference for one binary sample: alternate per-component code
/// ascent with Bayes reweighting, starting from the mixture weights and
/// zero codes. The returned code is the winning component's.
pub fn predict(x: &DVector<f64>, model: &MixtureModel) -> Result<Prediction> {
    predict_with_scores(x, model).map(|(p, _)| p)
}

/// `predict` plus the final per-component assignment scores, for callers
/// that also want the sample's mixture score ln Σ_k exp(score_k).
pub(crate) fn predict_with_scores(
    x: &DVector<f64>,
    model: &MixtureModel,
) -> Result<(Prediction, Vec<f64>)> {
    if x.len() != model.data_dim() {
        return Err(Error::Usage(format!(
            "sample has {} dimensions but the model expects {}",
            x.len(),
            model.data_dim()
        )));
    }
    if x.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Usage("prediction expects a binary sample".into()));
    }

    let ws: Vec<DMatrix<f64>> = model.components().iter().map(|c| c.materialize()).collect();
    let mut posterior: Vec<f64> = model.pi().iter().copied().collect();
    let mut codes: Vec<DVector<f64>> = vec![DVector::zeros(model.latent_dim()); ws.len()];
    let mut scores = vec![0.0; ws.len()];
    for _ in 0..PREDICT_ROUNDS {
        for (k, w) in ws.iter().enumerate() {
            codes[k] = ascend_code(x, w, codes[k].clone(), PREDICT_CODE_STEPS);
        }
        scores = assignment_scores(model, x, &codes);
        let lse = log_sum_exp(&scores);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!(
                "posterior normalizer is {lse} during prediction"
            )));
        }
        let next: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
        let delta = next
            .iter()
            .zip(posterior.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        posterior = next;
        if delta < PREDICT_TOL {
            break;
        }
    }

    let mut component = 0usize;
    for k in 1..posterior.len() {
        if posterior[k] > posterior[component] {
            component = k;
        }
    }
    let code = codes.swap_remove(component);
    Ok((
        Prediction {
            component,
            posterior: DVector::from_vec(posterior),
            code,
        },
        scores,
    ))
}
