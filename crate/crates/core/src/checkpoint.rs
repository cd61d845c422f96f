//! Model checkpoint files: a JSON header line (network config plus pipeline
//! statistics), followed by the model state and the preprocessing mean image
//! as one little-endian f64 blob in declared layer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::blob;
use crate::data::{PreprocessStats, ValueRange};
use crate::error::{Error, Result};
use crate::network::{Model, NetworkConfig};
use crate::tensor::Tensor;

/// Preprocessing state a checkpoint carries so evaluation can reproduce the
/// training-time pipeline exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineStats {
    pub frame_height: usize,
    pub frame_width: usize,
    pub preprocess: PreprocessStats,
    pub range: ValueRange,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct PipelineHeader {
    frame_height: usize,
    frame_width: usize,
    mean: f64,
    std: f64,
    range: ValueRange,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    format: String,
    tool_version: String,
    config: NetworkConfig,
    best_epoch: Option<usize>,
    state_len: usize,
    pipeline: Option<PipelineHeader>,
}

const FORMAT: &str = "sitgru-checkpoint";

pub fn save(
    path: &Path,
    model: &Model,
    best_epoch: Option<usize>,
    pipeline: Option<&PipelineStats>,
) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: model.config.clone(),
        best_epoch,
        state_len: model.state_len(),
        pipeline: pipeline.map(|p| PipelineHeader {
            frame_height: p.frame_height,
            frame_width: p.frame_width,
            mean: p.preprocess.mean,
            std: p.preprocess.std,
            range: p.range,
        }),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    blob::write_f64s(&mut w, &model.flatten_state()).map_err(|e| Error::io(path, e))?;
    if let Some(p) = pipeline {
        blob::write_f64s(&mut w, p.preprocess.mean_image.data()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, Option<usize>, Option<PipelineStats>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header_bytes = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte).map_err(|e| Error::io(path, e))?;
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::format(path, e.to_string()))?;
    if header.format != FORMAT {
        return Err(Error::format(
            path,
            format!("unexpected format '{}'", header.format),
        ));
    }

    let mut model = Model::new(header.config, 0)?;
    if header.state_len != model.state_len() {
        return Err(Error::format(
            path,
            format!(
                "state length {} does not match config ({})",
                header.state_len,
                model.state_len()
            ),
        ));
    }
    let state = blob::read_f64s(&mut r, header.state_len).map_err(|e| Error::io(path, e))?;
    model.assign_state(&state)?;

    let pipeline = match header.pipeline {
        None => None,
        Some(p) => {
            let pixels = p.frame_height * p.frame_width;
            let mean_image_data =
                blob::read_f64s(&mut r, pixels).map_err(|e| Error::io(path, e))?;
            Some(PipelineStats {
                frame_height: p.frame_height,
                frame_width: p.frame_width,
                preprocess: PreprocessStats {
                    mean_image: Tensor::new(vec![p.frame_height, p.frame_width], mean_image_data)?,
                    mean: p.mean,
                    std: p.std,
                    from_training: true,
                },
                range: p.range,
            })
        }
    };
    Ok((model, header.best_epoch, pipeline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::tensor::ActivationKind;

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = NetworkConfig {
            layer_units: vec![3, 2, 1],
            cell_kind: CellKind::Sitgru,
            inter_activation: ActivationKind::Tanh,
            frame_pixels: 4,
            t_steps: 2,
        };
        let model = Model::new(cfg, 7).unwrap();
        let stats = PipelineStats {
            frame_height: 2,
            frame_width: 2,
            preprocess: PreprocessStats {
                mean_image: Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
                mean: 0.001,
                std: 0.25,
                from_training: true,
            },
            range: ValueRange {
                lo: -2.0,
                hi: 3.0,
                out_lo: 0.5,
                out_hi: 1.0,
            },
        };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &model, Some(4), Some(&stats)).unwrap();
        let (loaded, best, pipeline) = load(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(best, Some(4));
        assert_eq!(pipeline.unwrap(), stats);
    }

    #[test]
    fn identical_saves_are_byte_identical() {
        let cfg = NetworkConfig {
            layer_units: vec![2, 1],
            cell_kind: CellKind::Gru,
            inter_activation: ActivationKind::Tanh,
            frame_pixels: 3,
            t_steps: 2,
        };
        let model = Model::new(cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save(&a, &model, None, None).unwrap();
        save(&b, &model, None, None).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}
