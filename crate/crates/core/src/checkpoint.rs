//! Weight checkpoint file: versioned JSON with per-layer weights in
//! row-major order plus training metadata. Loading validates the layer
//! dimensions and the exact 898-parameter count.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{PolicyWeights, HIDDEN_DIM, OBS_DIM, OUTPUT_DIM, PARAM_COUNT};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Batches completed when the checkpoint was written.
    pub batches: usize,
    /// Mean reward of the last completed batch; absent when no batch ran.
    pub final_mean_reward: Option<f64>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_dims: [usize; 3],
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
    pub metadata: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_weights(weights: &PolicyWeights, metadata: CheckpointMeta) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            layer_dims: [OBS_DIM, HIDDEN_DIM, OUTPUT_DIM],
            hidden_weights: weights.hidden_w.clone(),
            hidden_bias: weights.hidden_b.clone(),
            output_weights: weights.output_w.clone(),
            output_bias: weights.output_b.clone(),
            metadata,
        }
    }

    pub fn into_weights(self) -> Result<PolicyWeights> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.layer_dims != [OBS_DIM, HIDDEN_DIM, OUTPUT_DIM] {
            return Err(Error::Checkpoint(format!(
                "layer_dims {:?} do not match [{OBS_DIM}, {HIDDEN_DIM}, {OUTPUT_DIM}]",
                self.layer_dims
            )));
        }
        let total = self.hidden_weights.len()
            + self.hidden_bias.len()
            + self.output_weights.len()
            + self.output_bias.len();
        if total != PARAM_COUNT {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {total} parameters, expected exactly {PARAM_COUNT}"
            )));
        }
        let weights = PolicyWeights {
            hidden_w: self.hidden_weights,
            hidden_b: self.hidden_bias,
            output_w: self.output_weights,
            output_b: self.output_bias,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("cannot parse {}: {e}", path.display())))
    }
}

/// Convenience: load a checkpoint file straight into validated weights.
pub fn load_weights(path: &Path) -> Result<PolicyWeights> {
    Checkpoint::load(path)?.into_weights()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn meta() -> CheckpointMeta {
        CheckpointMeta { batches: 42, final_mean_reward: Some(-55.25), master_seed: 7 }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = seeds::rng(1, &[seeds::stream::WEIGHT_INIT]);
        let weights = PolicyWeights::init(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::from_weights(&weights, meta()).save(&path).unwrap();
        let loaded = load_weights(&path).unwrap();
        for (a, b) in weights.iter_params().zip(loaded.iter_params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = seeds::rng(2, &[seeds::stream::WEIGHT_INIT]);
        let weights = PolicyWeights::init(&mut rng);
        let mut ckpt = Checkpoint::from_weights(&weights, meta());
        ckpt.layer_dims = [4, 64, 2];
        assert!(ckpt.into_weights().is_err());

        let mut ckpt = Checkpoint::from_weights(&weights, meta());
        ckpt.hidden_bias.pop();
        assert!(ckpt.into_weights().is_err());

        let mut ckpt = Checkpoint::from_weights(&weights, meta());
        ckpt.format_version = 99;
        assert!(ckpt.into_weights().is_err());
    }

    #[test]
    fn parameter_count_enforced() {
        let weights = PolicyWeights::zeros();
        let ckpt = Checkpoint::from_weights(&weights, meta());
        let total = ckpt.hidden_weights.len()
            + ckpt.hidden_bias.len()
            + ckpt.output_weights.len()
            + ckpt.output_bias.len();
        assert_eq!(total, 898);
    }
}

