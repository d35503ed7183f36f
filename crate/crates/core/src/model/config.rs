use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_pos: usize,
    pub layernorm_eps: f64,
}

impl ModelConfig {
    /// Default block sizes for a vocabulary of `vocab_size` tokens.
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size,
            max_pos: 256,
            layernorm_eps: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of tap-point neurons: two post-residual sublayer outputs per block.
    pub fn n_neurons(&self) -> usize {
        self.n_layers * 2 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("layer, width and head counts must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} < 4", self.vocab_size));
        }
        if self.max_pos == 0 {
            return fail("max_pos must be positive".into());
        }
        if !(self.layernorm_eps > 0.0) {
            return fail("layernorm_eps must be positive".into());
        }
        Ok(())
    }
}
