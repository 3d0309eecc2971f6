use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DialogueModel, ModelConfig};
use crate::training::optim::{Adam, PlateauScheduler, TrainSchedule};

const META_KEY: &str = "multiref";

/// Scalar training progress stored alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressMeta {
    pub step: u64,
    pub epoch: usize,
    pub adam_updates: u64,
    pub scheduler: PlateauScheduler,
    pub best_val: Option<f64>,
    pub stopped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    dtype: String,
    vocab_hash: String,
    progress: Option<ProgressMeta>,
}

/// Optimizer and schedule state that a resumed run continues from.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub scheduler: PlateauScheduler,
    pub adam: Adam,
    pub best_val: Option<f64>,
    pub stopped: bool,
}

impl TrainState {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self {
            step: 0,
            epoch: 0,
            scheduler: PlateauScheduler::new(schedule),
            adam: Adam::new(schedule),
            best_val: None,
            stopped: false,
        }
    }

    fn meta(&self) -> ProgressMeta {
        ProgressMeta {
            step: self.step,
            epoch: self.epoch,
            adam_updates: self.adam.updates,
            scheduler: self.scheduler.clone(),
            best_val: self.best_val,
            stopped: self.stopped,
        }
    }
}

pub struct LoadedCheckpoint {
    pub model: DialogueModel,
    pub vocab_hash: String,
    pub progress: Option<ProgressMeta>,
    moments: (BTreeMap<String, Tensor>, BTreeMap<String, Tensor>),
}

impl LoadedCheckpoint {
    /// Rebuilds the optimizer state for resuming under `schedule`.
    pub fn train_state(&self, schedule: &TrainSchedule) -> Option<TrainState> {
        let p = self.progress.as_ref()?;
        let mut adam = Adam::new(schedule);
        adam.updates = p.adam_updates;
        adam.m = self.moments.0.clone();
        adam.v = self.moments.1.clone();
        Some(TrainState {
            step: p.step,
            epoch: p.epoch,
            scheduler: p.scheduler.clone(),
            adam,
            best_val: p.best_val,
            stopped: p.stopped,
        })
    }
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

/// Writes parameters (`param/<name>`), optional Adam moments
/// (`adam_m/<name>`, `adam_v/<name>`) and a JSON metadata record.
pub fn save_checkpoint(path: &Path, model: &DialogueModel, vocab_hash: &str, state: Option<&TrainState>) -> Result<()> {
    let mut tensors: BTreeMap<String, Tensor> =
        model.params().iter().map(|(n, v)| (format!("param/{n}"), v.as_tensor().clone())).collect();
    if let Some(s) = state {
        for (n, t) in &s.adam.m {
            tensors.insert(format!("adam_m/{n}"), t.clone());
        }
        for (n, t) in &s.adam.v {
            tensors.insert(format!("adam_v/{n}"), t.clone());
        }
    }
    let meta = Meta {
        config: model.config().clone(),
        dtype: dtype_name(model.dtype())?.into(),
        vocab_hash: vocab_hash.into(),
        progress: state.map(TrainState::meta),
    };
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&meta)?)]);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    safetensors::serialize_to_file(tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(info), path)
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path)?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let raw = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{} has no metadata record", path.display())))?;
    let meta: Meta = serde_json::from_str(raw)?;
    let dtype = match meta.dtype.as_str() {
        "f32" => DType::F32,
        "f64" => DType::F64,
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
    };
    let all = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let model = DialogueModel::with_dtype(meta.config, 0, dtype)?;
    let mut params = BTreeMap::new();
    let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
    for (name, t) in all {
        if let Some(n) = name.strip_prefix("param/") {
            params.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix("adam_m/") {
            m.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix("adam_v/") {
            v.insert(n.to_string(), t);
        }
    }
    if params.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, the configured model has {}",
            params.len(),
            model.params().len()
        )));
    }
    model.params().restore(&params)?;
    Ok(LoadedCheckpoint { model, vocab_hash: meta.vocab_hash, progress: meta.progress, moments: (m, v) })
}
