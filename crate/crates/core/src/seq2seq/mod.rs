//! Encoder-decoder recurrent model: a bidirectional LSTM encoder, a MAX,
//! AVG or attention aggregation layer and an autoregressive LSTM decoder
//! optionally conditioned on the one-hot journey descriptor.
//!
//! The attention context is the weighted sum of the `2q`-dimensional
//! encoder states followed by a trainable `q x 2q` projection `W_z`, so the
//! decoder sees a `q`-vector for attention and a `2q`-vector for the static
//! aggregations.

mod lstm;
mod model;

pub use lstm::{LstmCell, LstmStep};
pub use model::{
    aggregate_avg, aggregate_max, AttentionParams, AttentionStep, DecoderOutput, EncDecConfig,
    encdec_gradient_check, EncDecModel, GRADCHECK_CASES, EncDecTrace, EncoderOutput,
};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Max,
    Avg,
    Attn,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Avg => "avg",
            Aggregation::Attn => "attn",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Aggregation::Max),
            "avg" => Ok(Aggregation::Avg),
            "attn" => Ok(Aggregation::Attn),
            other => Err(Error::InvalidInput(format!("unknown aggregation {other:?}"))),
        }
    }
}
