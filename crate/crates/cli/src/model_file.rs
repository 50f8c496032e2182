//! On-disk model format: versioned JSON holding the mixture weights, the
//! factored components (bases row-major), the prior hyperparameters, the
//! fit seed, and a few fit statistics.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use depcam::components::{orthonormalize, Basis, Component, Scales, BASIS_TOL};
use depcam::inference::{FitReport, MixtureModel};
use depcam::{Error, Result};

/// Schema revision written by this binary.
pub const VERSION: &str = "1";

/// Bases are revalidated on load against this orthonormality drift; files
/// under it but over [`BASIS_TOL`] are re-orthonormalized rather than
/// rejected, so hand-rounded files still load.
pub const LOAD_TOL: f64 = 1e-6;

#[derive(Debug, Serialize, Deserialize)]
pub struct FitStats {
    pub outer_iters: usize,
    pub final_objective: f64,
    pub converged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ComponentRecord {
    /// D·d entries, row-major.
    pub upsilon: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub k: usize,
    pub d: usize,
    pub dim: usize,
    pub pi: Vec<f64>,
    pub xi: f64,
    pub varrho: f64,
    pub lambda: f64,
    pub components: Vec<ComponentRecord>,
    pub seed: u64,
    pub fit_stats: FitStats,
}

pub fn write_model(path: &Path, model: &MixtureModel, report: &FitReport) -> Result<()> {
    let file = ModelFile {
        version: VERSION.to_string(),
        k: model.num_components(),
        d: model.latent_dim(),
        dim: model.data_dim(),
        pi: model.pi().iter().copied().collect(),
        xi: model.xi(),
        varrho: model.varrho(),
        lambda: model.lambda(),
        components: model
            .components()
            .iter()
            .map(|c| ComponentRecord {
                upsilon: c.basis().matrix().transpose().as_slice().to_vec(),
                phi: c.scales().values().iter().copied().collect(),
            })
            .collect(),
        seed: report.seed,
        fit_stats: FitStats {
            outer_iters: report.outer_iters,
            final_objective: report.objective_trace.last().copied().unwrap_or(f64::NAN),
            converged: report.converged,
        },
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &file)
        .map_err(|e| Error::Usage(format!("cannot serialize model: {e}")))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<(MixtureModel, ModelFile)> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Parse {
            row: e.line(),
            col: e.column(),
            message: format!("model file: {e}"),
        })?;
    if file.version != VERSION {
        return Err(Error::Usage(format!(
            "model file version {} is not supported (expected {VERSION})",
            file.version
        )));
    }
    if file.components.len() != file.k || file.pi.len() != file.k {
        return Err(Error::Usage(format!(
            "model file declares k={} but holds {} components and {} weights",
            file.k,
            file.components.len(),
            file.pi.len()
        )));
    }
    let mut components = Vec::with_capacity(file.k);
    for (idx, rec) in file.components.iter().enumerate() {
        if rec.upsilon.len() != file.dim * file.d || rec.phi.len() != file.d {
            return Err(Error::Usage(format!(
                "component {idx} has {} basis entries and {} scales, expected {}x{}",
                rec.upsilon.len(),
                rec.phi.len(),
                file.dim,
                file.d
            )));
        }
        let upsilon = DMatrix::from_row_slice(file.dim, file.d, &rec.upsilon);
        let gram = upsilon.transpose() * &upsilon;
        let drift = (gram - DMatrix::identity(file.d, file.d)).norm();
        if !drift.is_finite() || drift > LOAD_TOL {
            return Err(Error::Degenerate(format!(
                "component {idx} basis drifted from orthonormality by {drift:.3e}"
            )));
        }
        let basis = if drift > BASIS_TOL {
            orthonormalize(&upsilon)?
        } else {
            Basis::new(upsilon)?
        };
        let scales = Scales::new(DVector::from_vec(rec.phi.clone()))?;
        components.push(Component::new(basis, scales)?);
    }
    let pi = DVector::from_vec(file.pi.clone());
    let model = MixtureModel::new(pi, components, file.xi, file.varrho, file.lambda)?;
    Ok((model, file))
}
