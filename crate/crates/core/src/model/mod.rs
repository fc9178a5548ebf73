//! Learned predictors: the single-person attention + GCN branch, the
//! cross-interaction attention module, and the two-person model variants.

mod base;
mod collab;
mod layers;
mod xia;

pub use base::{attend, AttentionState, BaseBranch, BranchInputs};
pub use collab::{make_variant, stack, CollabModel, PairInputs, Variant};
pub use layers::Bound;
pub use xia::{AttentionMode, XiaModule};

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by both branches.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Joints per person.
    pub joints: usize,
    /// Key/query window length `M`.
    pub key_len: usize,
    /// Frames predicted per forward pass `T`.
    pub step_len: usize,
    /// DCT coefficients kept per joint-coordinate trajectory.
    pub coeffs: usize,
    pub d_model: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub heads_key: usize,
    pub heads_value: usize,
    /// Millimetres per internal model unit; inputs are divided by this.
    pub unit_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 18,
            key_len: 10,
            step_len: 10,
            coeffs: 20,
            d_model: 64,
            gcn_layers: 4,
            gcn_hidden: 64,
            heads_key: 8,
            heads_value: 1,
            unit_mm: 1000.0,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration used by the gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            joints: 4,
            key_len: 4,
            step_len: 2,
            coeffs: 6,
            d_model: 8,
            gcn_layers: 2,
            gcn_hidden: 5,
            heads_key: 8,
            heads_value: 1,
            unit_mm: 1000.0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.key_len + self.step_len
    }

    /// Trajectory nodes per person (`joints × 3`).
    pub fn nodes(&self) -> usize {
        self.joints * 3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("joints", self.joints),
            ("key_len", self.key_len),
            ("step_len", self.step_len),
            ("coeffs", self.coeffs),
            ("d_model", self.d_model),
            ("gcn_layers", self.gcn_layers),
            ("gcn_hidden", self.gcn_hidden),
            ("heads_key", self.heads_key),
            ("heads_value", self.heads_value),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads_key != 0 {
            return Err(Error::Config(format!(
                "heads_key {} does not divide d_model {}",
                self.heads_key, self.d_model
            )));
        }
        if self.coeffs % self.heads_value != 0 {
            return Err(Error::Config(format!(
                "heads_value {} does not divide the value token width {}",
                self.heads_value, self.coeffs
            )));
        }
        if self.coeffs > self.window_len() {
            return Err(Error::Config(format!(
                "coeffs {} exceeds window length {}",
                self.coeffs,
                self.window_len()
            )));
        }
        if !(self.unit_mm > 0.0) {
            return Err(Error::Config("unit_mm must be positive".into()));
        }
        Ok(())
    }
}
