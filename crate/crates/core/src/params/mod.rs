//! Preset data model: logit layout, bounded maps and decoded effect parameters.

pub mod bounds;
pub mod effect;
pub mod init;
pub mod layout;
pub mod maps;
pub mod orthogonal;
pub mod preset;

pub use bounds::{BoundsConfig, FilterBounds, Interval};
pub use effect::{
    decode, decode_vjp, decode_with_tape, encode, DecodeTape, DelayParams, DynamicsParams,
    EffectParams, FdnParams, FilterParams, PeqParams, ToneParams,
};
pub use init::{initial_logits, initial_logits_with, InitOptions};
pub use layout::{count_parameters, parameter_name, Block, NUM_LOGITS, NUM_MINIMAL};
pub use preset::{from_minimal, to_minimal, Preset};
