//! Decoder-only transformer with activation taps, training and beam search.

mod beam;
mod config;
mod forward;
mod train;
mod weights;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

pub use beam::{
    beam_search, beam_search_until, generate_line, generate_line_with_max, BeamResult,
    DEFAULT_LINE_MAX_LEN,
};
pub use config::ModelConfig;
pub use forward::{
    forward, last_position_activations, last_position_activations_batch, loss, loss_and_grads,
    next_token_logprobs, next_token_logprobs_batch,
    ActivationTrace, Sublayer,
};
pub use train::{train_toy, TrainHyper, TrainOutcome};
pub use weights::{LayerWeights, Weights};

/// Float types the model can run in. Production weights are `f32`; `f64`
/// is used for finite-difference gradient checks.
pub trait Scalar: NdFloat + FromPrimitive {}

impl<T: NdFloat + FromPrimitive> Scalar for T {}
