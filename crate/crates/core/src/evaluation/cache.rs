//! On-disk feature cache: `<key>.f32` (raw little-endian rows) plus a
//! `<key>.json` array header.

use std::path::Path;

use image::RgbImage;
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::backend::DenoiserBackend;
use crate::dataio::{f32s_from_le, f32s_to_le, read_bytes, write_atomic, ArrayHeader};

/// Images per feature request.
const BATCH: usize = 32;

/// Cache key: digest of the extractor identity and every crop's pixels.
pub fn cache_key(backend_id: &str, crops: &[RgbImage]) -> String {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    for c in crops {
        h.update(c.width().to_le_bytes());
        h.update(c.height().to_le_bytes());
        h.update(c.as_raw());
    }
    hex::encode(h.finalize())
}

fn load(dir: &Path, key: &str, n: usize) -> Option<Vec<Vec<f32>>> {
    let header: ArrayHeader = serde_json::from_slice(&read_bytes(&dir.join(format!("{key}.json"))).ok()?).ok()?;
    let [rows, d] = header.shape[..] else { return None };
    if rows != n || header.dtype != "f32" || header.order != "C" {
        return None;
    }
    let path = dir.join(format!("{key}.f32"));
    let values = f32s_from_le(&path, &read_bytes(&path).ok()?).ok()?;
    (values.len() == rows * d).then(|| values.chunks(d.max(1)).map(|c| c.to_vec()).collect())
}

/// Features for `crops`, read from `cache_dir` when a matching entry exists.
/// Returns the rows and whether they came from the cache.
pub fn cached_features(
    backend: &dyn DenoiserBackend,
    backend_id: &str,
    crops: &[RgbImage],
    cache_dir: Option<&Path>,
) -> Result<(Vec<Vec<f32>>, bool), EvalError> {
    let key = cache_key(backend_id, crops);
    if let Some(dir) = cache_dir {
        if let Some(rows) = load(dir, &key, crops.len()) {
            return Ok((rows, true));
        }
    }
    let mut rows = Vec::with_capacity(crops.len());
    for chunk in crops.chunks(BATCH) {
        rows.extend(backend.features(chunk)?);
    }
    if let Some(dir) = cache_dir {
        let d = rows.first().map_or(0, |r| r.len());
        write_atomic(&dir.join(format!("{key}.f32")), &f32s_to_le(&rows.concat()))?;
        let header = serde_json::to_vec_pretty(&ArrayHeader::new(vec![rows.len(), d], "f32"))
            .expect("header serializes");
        write_atomic(&dir.join(format!("{key}.json")), &header)?;
    }
    Ok((rows, false))
}
