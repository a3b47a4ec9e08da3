//! Two-part fixed-rate quantized coding and control of unstable linear
//! systems driven by unbounded i.i.d. noise.
//!
//! An adaptive zooming quantizer captures the state coarsely; a fixed uniform
//! quantizer refines the coarse error. Encoder and decoder keep independent
//! copies of the zoom exponent and stay synchronized through the overflow
//! symbol alone.
//!
//! Modules, bottom up: [`noise`] and [`model`] describe the plant,
//! [`quantizer`] and [`codec`] implement the scheme, [`sim`] runs Monte Carlo
//! experiments and [`config`] ties them to the `quantctl` binary.

pub mod codec;
pub mod config;
pub mod dump;
pub mod model;
pub mod noise;
pub mod quad;
pub mod quantizer;
pub mod sim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use codec::{ClosedLoop, CoderState, Decoder, Encoder, Scheme, StepRecord};
pub use model::{InitSpec, Rational, SchemeParams, SystemModel, ValidationReport};
pub use noise::NoiseSpec;
pub use quantizer::{AdaptiveSymbol, ChannelMessage, FixedSymbol, UniformGrid};

/// Generator used for every simulated trial.
pub type TrialRng = ChaCha8Rng;

/// Deterministic stream `stream` of the generator keyed by `seed`. Distinct
/// streams of one seed never overlap.
pub fn trial_rng(seed: u64, stream: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
