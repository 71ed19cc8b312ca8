use std::path::Path;

use super::network::ModelParams;
use super::variant::ModelVariant;
use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::Result;

impl ModelParams {
    pub fn to_checkpoint(&self, config: serde_json::Value) -> Checkpoint {
        Checkpoint::new(
            CheckpointKind::Model,
            self.variant,
            self.dims,
            self.store.clone(),
            config,
            self.step,
        )
    }

    pub fn from_checkpoint(ckpt: Checkpoint, variant: Option<ModelVariant>) -> Result<Self> {
        ckpt.expect(CheckpointKind::Model, variant)?;
        let h = ckpt.header;
        ModelParams::from_store(h.variant, h.dims, ckpt.store, h.step)
    }

    pub fn save(&self, path: impl AsRef<Path>, config: serde_json::Value) -> Result<()> {
        self.to_checkpoint(config).save(path)
    }

    /// Loads a model checkpoint; `variant`, when given, must match the file.
    pub fn load(path: impl AsRef<Path>, variant: Option<ModelVariant>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?, variant)
    }

    /// Rounds every weight to f32, as a save/load round trip would.
    pub fn quantize(&mut self) {
        for (_, p) in self.store.iter_mut() {
            for v in p.value.as_mut_slice() {
                *v = *v as f32 as f64;
            }
        }
    }
}
