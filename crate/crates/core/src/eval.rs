//! Model evaluation: permutation-matched clustering accuracy, effective
//! dimension counts, and figure-data exports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::components::Scales;
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::expfam;
use crate::inference::MixtureModel;
use crate::parallel;

/// Evaluation summary for a labeled dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub matched_permutation: Vec<usize>,
    pub mean_log_likelihood: f64,
    pub effective_dims_per_component: Vec<usize>,
}

/// Best clustering accuracy over all cluster→label bijections, with the
/// maximizing permutation (`perm[cluster] = label`). Exhaustive search for
/// K ≤ 6, optimal-assignment search above; ties resolve to the
/// lexicographically smallest permutation in both branches.
pub fn clustering_accuracy(
    pred: &[usize],
    truth: &[usize],
    k: usize,
) -> Result<(f64, Vec<usize>)> {
    if pred.len() != truth.len() {
        return Err(Error::Usage(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Usage("no samples to score".into()));
    }
    if k == 0 {
        return Err(Error::Usage("need at least one cluster".into()));
    }
    if let Some(&bad) = pred.iter().chain(truth.iter()).find(|&&v| v >= k) {
        return Err(Error::Usage(format!("entry {bad} out of range [0, {k})")));
    }

    let mut counts = vec![vec![0i64; k]; k];
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        counts[p][t] += 1;
    }

    let perm = if k <= 6 {
        best_permutation_exhaustive(&counts)
    } else {
        best_permutation_assignment(&counts)
    };
    let agree: i64 = (0..k).map(|c| counts[c][perm[c]]).sum();
    Ok((agree as f64 / pred.len() as f64, perm))
}

/// Lexicographic walk over all K! bijections; strict improvement keeps the
/// first (smallest) maximizer.
fn best_permutation_exhaustive(counts: &[Vec<i64>]) -> Vec<usize> {
    let k = counts.len();
    let mut best_perm = Vec::new();
    let mut best_value = i64::MIN;
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; k];
    fn walk(
        counts: &[Vec<i64>],
        current: &mut Vec<usize>,
        used: &mut [bool],
        value: i64,
        best_value: &mut i64,
        best_perm: &mut Vec<usize>,
    ) {
        let c = current.len();
        if c == counts.len() {
            if value > *best_value {
                *best_value = value;
                *best_perm = current.clone();
            }
            return;
        }
        for t in 0..counts.len() {
            if !used[t] {
                used[t] = true;
                current.push(t);
                walk(counts, current, used, value + counts[c][t], best_value, best_perm);
                current.pop();
                used[t] = false;
            }
        }
    }
    walk(
        counts,
        &mut current,
        &mut used,
        0,
        &mut best_value,
        &mut best_perm,
    );
    best_perm
}

/// O(K³) assignment for the optimal value, then a greedy pass that pins each
/// position to the smallest label still compatible with that value.
fn best_permutation_assignment(counts: &[Vec<i64>]) -> Vec<usize> {
    let k = counts.len();
    let optimal = assignment_max_value(counts);
    let mut perm = vec![0usize; k];
    let mut used = vec![false; k];
    let mut fixed_sum = 0i64;
    for c in 0..k {
        for t in 0..k {
            if used[t] {
                continue;
            }
            // Best completion with rows c+1.. over the remaining labels.
            let rest_rows: Vec<usize> = ((c + 1)..k).collect();
            let rest_cols: Vec<usize> = (0..k).filter(|&j| !used[j] && j != t).collect();
            let sub: Vec<Vec<i64>> = rest_rows
                .iter()
                .map(|&r| rest_cols.iter().map(|&j| counts[r][j]).collect())
                .collect();
            let completion = if sub.is_empty() {
                0
            } else {
                assignment_max_value(&sub)
            };
            if fixed_sum + counts[c][t] + completion == optimal {
                perm[c] = t;
                used[t] = true;
                fixed_sum += counts[c][t];
                break;
            }
        }
    }
    perm
}

fn assignment_max_value(weights: &[Vec<i64>]) -> i64 {
    let (value, _) = hungarian_min(
        &weights
            .iter()
            .map(|row| row.iter().map(|&w| -w).collect())
            .collect::<Vec<_>>(),
    );
    -value
}

/// Minimum-cost perfect assignment on a square matrix via the potentials
/// method; returns (total cost, row→column map).
fn hungarian_min(cost: &[Vec<i64>]) -> (i64, Vec<usize>) {
    let n = cost.len();
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: 1-based row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    let mut total = 0i64;
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
        total += cost[p[j] - 1][j - 1];
    }
    (total, assignment)
}

/// Number of scale entries whose magnitude survives a relative threshold:
/// |Φ_i| > τ·max_j |Φ_j|, with an all-zero Φ counting zero dimensions.
pub fn effective_dims(phi: &Scales, tau: f64) -> usize {
    assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1), got {tau}");
    let max = phi.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    phi.values().iter().filter(|v| v.abs() > tau * max).count()
}

/// Predicts every sample, matches clusters to labels, and reports accuracy,
/// the matching, mean log-likelihood ln Σ_k π_k p(x|Wᵏy*), and per-component
/// effective dimensions.
pub fn evaluate(model: &MixtureModel, data: &BinaryDataset, tau: f64) -> Result<EvalReport> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::Usage("evaluation needs a labeled dataset".into()))?;
    let k = model.num_components();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Usage(format!(
            "label {bad} exceeds the model's {k} components"
        )));
    }
    if data.dim() != model.data_dim() {
        return Err(Error::Usage(format!(
            "data has {} columns but model expects {}",
            data.dim(),
            model.data_dim()
        )));
    }

    let per_sample: Vec<Result<(usize, f64)>> = parallel::map_indexed(data.len(), |n| {
        let x = data.row(n);
        let (p, scores) = crate::inference::predict_with_scores(&x, model)?;
        Ok((p.component, log_sum_exp(&scores)))
    });
    let mut pred = Vec::with_capacity(data.len());
    let mut ll_sum = 0.0;
    for r in per_sample {
        let (z, ll) = r?;
        pred.push(z);
        ll_sum += ll;
    }

    let (accuracy, matched_permutation) = clustering_accuracy(&pred, labels, k)?;
    let effective_dims_per_component = model
        .components()
        .iter()
        .map(|c| effective_dims(c.scales(), tau))
        .collect();
    Ok(EvalReport {
        accuracy,
        matched_permutation,
        mean_log_likelihood: ll_sum / data.len() as f64,
        effective_dims_per_component,
    })
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return max; // all -inf (or a NaN has poisoned the scores)
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Writes Φ in long form: component, dim_index, value, abs_value, sign.
/// Values use shortest round-trip formatting, so a parse recovers them
/// bit-exactly.
pub fn export_hinton(model: &MixtureModel, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "component,dim_index,value,abs_value,sign")?;
    for (k, comp) in model.components().iter().enumerate() {
        for (i, &v) in comp.scales().values().iter().enumerate() {
            let sign = if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            };
            writeln!(out, "{k},{i},{v},{},{sign}", v.abs())?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
}

/// Reconstructed Bernoulli means α_n = σ(W^{k*} y_n^{k*}), k* the argmax
/// responsibility (ties to the lowest index). CSV: one headerless row of D
/// values per sample. PGM: one 8-bit P5 file per sample under `path` (as a
/// directory), laid out √D×√D when D is a perfect square and 1×D otherwise,
/// gray = round-half-up of 255·α.
pub fn export_reconstructions(
    model: &MixtureModel,
    data: &BinaryDataset,
    codes: &[DMatrix<f64>],
    resp: &DMatrix<f64>,
    path: &Path,
    format: ExportFormat,
) -> Result<()> {
    let n = data.len();
    if codes.len() != model.num_components()
        || codes
            .iter()
            .any(|c| c.nrows() != n || c.ncols() != model.latent_dim())
        || resp.nrows() != n
        || resp.ncols() != model.num_components()
    {
        return Err(Error::Usage(
            "codes/responsibilities shaped for a different model or dataset".into(),
        ));
    }

    let ws: Vec<DMatrix<f64>> = model.components().iter().map(|c| c.materialize()).collect();
    let alphas: Vec<DVector<f64>> = parallel::map_indexed(n, |i| {
        let mut best = 0usize;
        for k in 1..model.num_components() {
            if resp[(i, k)] > resp[(i, best)] {
                best = k;
            }
        }
        let theta = &ws[best] * codes[best].row(i).transpose();
        expfam::mean_params(&theta)
    });

    match format {
        ExportFormat::Csv => {
            let mut out = BufWriter::new(File::create(path)?);
            for alpha in &alphas {
                let line: Vec<String> = alpha.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(","))?;
            }
            out.flush()?;
        }
        ExportFormat::Pgm => {
            std::fs::create_dir_all(path)?;
            let d = model.data_dim();
            let side = (d as f64).sqrt().round() as usize;
            let (w, h) = if side * side == d { (side, side) } else { (d, 1) };
            for (i, alpha) in alphas.iter().enumerate() {
                let file = path.join(format!("sample_{i:05}.pgm"));
                let mut out = BufWriter::new(File::create(file)?);
                write!(out, "P5\n{w} {h}\n255\n")?;
                let bytes: Vec<u8> = alpha
                    .iter()
                    .map(|&a| (255.0 * a + 0.5).floor() as u8)
                    .collect();
                out.write_all(&bytes)?;
                out.flush()?;
            }
        }
    }
    Ok(())
}
