//! Fréchet Inception Distance between person-centered crop sets.

mod cache;
mod crops;
mod stats;

use std::path::{Path, PathBuf};

pub use cache::{cache_key, cached_features};
pub use crops::{person_crops, square_crop, ImageManifest, ImageSet, ManifestEntry, DEFAULT_CROP_SIZE};
pub use stats::{frechet_distance, gaussian_stats, FidResult, FidStats, RIDGE_EPS};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, DenoiserBackend};
use crate::dataio::DataError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("image set contains no persons")]
    EmptyDataset,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("feature dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("covariance has eigenvalue {eigenvalue:e} (largest {max:e}); not positive semidefinite")]
    IndefiniteCovariance { eigenvalue: f64, max: f64 },
    #[error("cannot decode {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Result written by the `fid` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub n_a: usize,
    pub n_b: usize,
    pub fid: f64,
    pub ridge_applied: bool,
}

/// Crops both sets, extracts (or loads cached) features and compares them.
pub fn fid_between(
    a: &ImageSet,
    b: &ImageSet,
    backend: &dyn DenoiserBackend,
    crop_size: u32,
    cache_dir: Option<&Path>,
) -> Result<FidReport, EvalError> {
    let backend_id = backend.info()?.identity();
    let fit = |set: &ImageSet| -> Result<FidStats, EvalError> {
        let crops = person_crops(set, crop_size)?;
        let (rows, _) = cached_features(backend, &backend_id, &crops, cache_dir)?;
        gaussian_stats(&rows)
    };
    let (sa, sb) = (fit(a)?, fit(b)?);
    let r = frechet_distance(&sa, &sb)?;
    Ok(FidReport {
        n_a: sa.n,
        n_b: sb.n,
        fid: r.fid,
        ridge_applied: r.ridge_applied,
    })
}
