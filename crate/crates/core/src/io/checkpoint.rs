//! Checkpoint directory: `manifest.json` (configuration echo, step counter,
//! seed, parameter index) plus `params.bin` (little-endian f64 blob).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::json_err;
use super::FORMAT_VERSION;
use crate::error::{file_err, parse_err, Result};
use crate::pipeline::{ModelMeta, TrainedModel};

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_PARAMS: &str = "params.bin";
const CHECKPOINT_FORMAT: &str = "kdiff-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: usize,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    model: ModelMeta,
    param_count: usize,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    let layout = model.denoiser.layout();
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: FORMAT_VERSION,
        model: model.meta(),
        param_count: model.denoiser.num_params(),
        tensors: layout
            .groups
            .iter()
            .map(|g| TensorEntry {
                name: g.name.clone(),
                offset: g.slot.offset,
                shape: [g.slot.rows, g.slot.cols],
            })
            .collect(),
    };
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?).map_err(file_err(&manifest_path))?;
    let blob: Vec<u8> = model.denoiser.params().iter().flat_map(|p| p.to_le_bytes()).collect();
    let params_path = dir.join(CHECKPOINT_PARAMS);
    std::fs::write(&params_path, blob).map_err(file_err(&params_path))
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let text = std::fs::read_to_string(&manifest_path).map_err(file_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| json_err(&manifest_path, e))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != FORMAT_VERSION {
        return Err(parse_err(
            0,
            format!(
                "{}: expected {CHECKPOINT_FORMAT} version {FORMAT_VERSION}, found {} version {}",
                manifest_path.display(),
                manifest.format,
                manifest.version
            ),
        ));
    }
    let params_path = dir.join(CHECKPOINT_PARAMS);
    let blob = std::fs::read(&params_path).map_err(file_err(&params_path))?;
    if blob.len() != manifest.param_count * 8 {
        return Err(parse_err(
            0,
            format!(
                "{}: {} bytes, expected {} parameters",
                params_path.display(),
                blob.len(),
                manifest.param_count
            ),
        ));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let model = TrainedModel::from_meta(manifest.model, params)?;
    let layout = model.denoiser.layout();
    let consistent = layout.groups.len() == manifest.tensors.len()
        && layout
            .groups
            .iter()
            .zip(&manifest.tensors)
            .all(|(g, t)| g.name == t.name && g.slot.offset == t.offset && [g.slot.rows, g.slot.cols] == t.shape);
    if !consistent {
        return Err(parse_err(
            0,
            format!(
                "{}: tensor index does not match the configured model",
                manifest_path.display()
            ),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{Denoiser, DenoiserConfig};
    use crate::pipeline::LatentNormalizer;

    fn model() -> TrainedModel {
        let mut denoiser = Denoiser::new(DenoiserConfig::tiny(), 3).unwrap();
        denoiser.params_mut()[0] = 1.0 / 3.0;
        TrainedModel {
            denoiser,
            normalizer: LatentNormalizer::identity(),
            window: 8,
            drop_canonical_row: true,
            trained_steps: 17,
            seed: 5,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        save_checkpoint(dir.path(), &m).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), m);
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model()).unwrap();
        let p = dir.path().join(CHECKPOINT_PARAMS);
        let mut blob = std::fs::read(&p).unwrap();
        blob.truncate(blob.len() - 8);
        std::fs::write(&p, blob).unwrap();
        assert!(load_checkpoint(dir.path()).unwrap_err().to_string().contains("bytes"));
    }
}
