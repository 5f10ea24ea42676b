//! JSON checkpoints and JSON-lines metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{GroundingModel, TENSOR_NAMES};
use crate::harness::{EpochRecord, OptimizerState};

use super::atomic_write;
use super::config::RunConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: usize,
    pub config: RunConfig,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Option<OptimizerState>,
}

fn shapes(model: &GroundingModel) -> [Vec<usize>; 10] {
    let (vg, prj) = (&model.vg, &model.prj);
    [
        vec![vg.input, vg.hidden],
        vec![vg.hidden],
        vec![vg.hidden, vg.output],
        vec![vg.output],
        vec![prj.input, prj.hidden],
        vec![prj.hidden],
        vec![prj.hidden, prj.output],
        vec![prj.output],
        vec![model.head.len()],
        vec![1],
    ]
}

impl Checkpoint {
    pub fn new(config: RunConfig, epoch: usize, model: &GroundingModel, optimizer: Option<&OptimizerState>) -> Self {
        let tensors = TENSOR_NAMES
            .iter()
            .zip(shapes(model))
            .zip(model.tensors())
            .map(|((name, shape), values)| TensorRecord {
                name: name.to_string(),
                shape,
                values: values.to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            epoch,
            config,
            tensors,
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuilds the model, checking every tensor name and shape against the config.
    pub fn model(&self) -> Result<GroundingModel> {
        let mut model = GroundingModel::init(self.config.dims(), 0)?;
        let expected = shapes(&model);
        if self.tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::invalid(format!(
                "checkpoint has {} tensors, expected {}",
                self.tensors.len(),
                TENSOR_NAMES.len()
            )));
        }
        for (i, dst) in model.tensors_mut().into_iter().enumerate() {
            let rec = &self.tensors[i];
            if rec.name != TENSOR_NAMES[i] || rec.shape != expected[i] || rec.values.len() != dst.len() {
                return Err(Error::invalid(format!(
                    "checkpoint tensor {} ({:?}, {} values) does not match {} {:?}",
                    rec.name,
                    rec.shape,
                    rec.values.len(),
                    TENSOR_NAMES[i],
                    expected[i]
                )));
            }
            dst.copy_from_slice(&rec.values);
        }
        model.validate()?;
        if let Some(opt) = &self.optimizer {
            opt.check_shapes(&model)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!(
                    "unsupported checkpoint version {}, expected {CHECKPOINT_VERSION}",
                    ck.format_version
                ),
            });
        }
        ck.config.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }
}

/// One JSON object per line.
pub fn metrics_jsonl(records: &[EpochRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<()> {
    atomic_write(path, metrics_jsonl(records).as_bytes())
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = RunConfig::default();
        let model = GroundingModel::init(cfg.dims(), 11).unwrap();
        let mut opt = OptimizerState::new(&model);
        opt.step = 3;
        opt.m[0][0] = 0.1 + 0.2;
        let ck = Checkpoint::new(cfg, 7, &model, Some(&opt));
        let back = Checkpoint::from_json(&ck.to_json(), Path::new("ck")).unwrap();
        assert_eq!(back, ck);
        let m2 = back.model().unwrap();
        for (a, b) in m2.tensors().iter().zip(model.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.optimizer.unwrap().m[0][0].to_bits(), (0.1f64 + 0.2).to_bits());
    }

    #[test]
    fn version_and_shape_checked() {
        let cfg = RunConfig::default();
        let model = GroundingModel::init(cfg.dims(), 1).unwrap();
        let mut ck = Checkpoint::new(cfg, 0, &model, None);
        ck.format_version = 9;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json(), Path::new("ck")),
            Err(Error::Format { .. })
        ));
        ck.format_version = CHECKPOINT_VERSION;
        ck.tensors[2].shape = vec![1, 1];
        assert!(ck.model().is_err());
    }

    #[test]
    fn metrics_lines() {
        let r = EpochRecord {
            epoch: 1,
            loss: 0.5,
            cls_loss: 0.5,
            align_loss: 0.0,
            mean_d_pos: None,
            mean_d_neg: None,
            gap: None,
        };
        let text = metrics_jsonl(&[r.clone(), r]);
        assert_eq!(text.lines().count(), 2);
        let first: EpochRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first.epoch, 1);
    }
}
