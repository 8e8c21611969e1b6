//! Carrier-reference steganography.
//!
//! A message is never embedded in its carrier. Instead a deterministic
//! fixed-point model is run on an unmodified carrier, and the difference
//! between the message bytes and the model output is what gets shared.
//! Recovering the message needs the difference, the carrier location and
//! the model together.

pub mod carrier;
pub mod codec;
pub mod fixtures;
pub mod model;
pub mod parallel;
pub mod protocol;

pub use carrier::{CarrierError, CarrierRecord, CarrierSource, Corpus, Resolver, SecretLocation, Segment};
pub use codec::{CodecError, IntArray, SecretDifference};
pub use model::{ModelError, ModelOutput, ModelParams, OutputHead};
pub use parallel::{ParallelError, ParallelOptions, SecretNumber, SplitPlan};
pub use protocol::{AuthorizationSet, Bundle, ModelRef, ProtocolError, VerificationInfo};
