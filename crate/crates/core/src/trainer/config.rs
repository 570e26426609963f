use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::Readout;
use crate::experts::CombinerKind;
use crate::Error;

/// Scope of the frequency normalizer when sharpening assignments into targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetUpdate {
    /// Recompute from each minibatch's own assignments.
    Batch,
    /// Recompute once per epoch from the whole training set.
    Epoch,
}

/// Which scaffold objective accompanies the clustering loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignKind {
    /// Transport cost between one-hot scaffolds and assignments under the cosine distance.
    Ot,
    /// Distance between the topology vector and its scaffold embedding.
    Direct,
    /// Cross-entropy of a scaffold classifier on the topology vector.
    Classify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub combiner: CombinerKind,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub t0: f64,
    pub te: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub readout: Readout,
    pub gate_hidden: usize,
    pub d_z: usize,
    pub seed: u64,
    pub target_update: TargetUpdate,
    pub align: AlignKind,
    /// Allows values outside the published search grids.
    pub unsafe_hparams: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            combiner: CombinerKind::Topexpert,
            k: 3,
            alpha: 0.1,
            beta: 0.1,
            t0: 10.0,
            te: 0.1,
            max_epochs: 200,
            patience: 50,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            hidden: 300,
            layers: 5,
            readout: Readout::Mean,
            gate_hidden: 128,
            d_z: 64,
            seed: 0,
            target_update: TargetUpdate::Batch,
            align: AlignKind::Ot,
            unsafe_hparams: false,
        }
    }
}

pub const GRID_K: [usize; 4] = [3, 5, 7, 10];
pub const GRID_LOSS_WEIGHT: [f64; 4] = [5.0, 1.0, 0.1, 0.01];
pub const GRID_TE: [f64; 3] = [0.01, 0.1, 1.0];
pub const GRID_LR: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const GRID_WEIGHT_DECAY: [f64; 3] = [0.0, 1e-4, 1e-5];
pub const GRID_BATCH: [usize; 2] = [32, 512];
pub const T0: f64 = 10.0;
pub const MAX_EPOCHS: usize = 200;
pub const PATIENCE: usize = 50;

impl TrainConfig {
    /// Number of experts actually instantiated.
    pub fn experts(&self) -> usize {
        if self.combiner == CombinerKind::Single {
            1
        } else {
            self.k
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let err = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return err("k must be at least 1".into());
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("d_z", self.d_z),
            ("gate_hidden", self.gate_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.te > 0.0 && self.t0 > self.te && self.t0.is_finite()) {
            return err(format!(
                "need t0 > te > 0, got t0 = {}, te = {}",
                self.t0, self.te
            ));
        }
        if self.unsafe_hparams {
            return Ok(());
        }
        let off = |name: &str, v: String, grid: String| {
            Err(Error::Config(format!(
                "{name} = {v} is outside the search grid {grid}; set unsafe_hparams to allow it"
            )))
        };
        if self.combiner != CombinerKind::Single && !GRID_K.contains(&self.k) {
            return off("k", self.k.to_string(), format!("{GRID_K:?}"));
        }
        if self.combiner.uses_cluster_losses() {
            for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
                if !GRID_LOSS_WEIGHT.contains(&v) {
                    return off(name, v.to_string(), format!("{GRID_LOSS_WEIGHT:?}"));
                }
            }
        }
        if !GRID_TE.contains(&self.te) {
            return off("te", self.te.to_string(), format!("{GRID_TE:?}"));
        }
        if self.t0 != T0 {
            return off("t0", self.t0.to_string(), format!("[{T0}]"));
        }
        if !GRID_LR.contains(&self.lr) {
            return off("lr", self.lr.to_string(), format!("{GRID_LR:?}"));
        }
        if !GRID_WEIGHT_DECAY.contains(&self.weight_decay) {
            return off(
                "weight_decay",
                self.weight_decay.to_string(),
                format!("{GRID_WEIGHT_DECAY:?}"),
            );
        }
        if !GRID_BATCH.contains(&self.batch_size) {
            return off(
                "batch_size",
                self.batch_size.to_string(),
                format!("{GRID_BATCH:?}"),
            );
        }
        if self.max_epochs > MAX_EPOCHS {
            return off(
                "max_epochs",
                self.max_epochs.to_string(),
                format!("<= {MAX_EPOCHS}"),
            );
        }
        if self.patience != PATIENCE {
            return off(
                "patience",
                self.patience.to_string(),
                format!("[{PATIENCE}]"),
            );
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
