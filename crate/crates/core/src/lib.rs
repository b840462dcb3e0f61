//! Adaptive attention captioning with a visual sentinel.
//!
//! The crate covers the full pipeline at desk scale: a reverse-mode autodiff
//! core ([`tensor`]), the sentinel-extended LSTM ([`recurrent`]), spatial and
//! adaptive attention ([`attention`]), a synthetic scene encoder
//! ([`encoder`]) and corpus ([`dataset`]), training and decoding
//! ([`captioner`]), corpus BLEU ([`metrics`]) and the grounding and
//! localization analyses ([`analysis`]).

pub mod analysis;
pub mod attention;
pub mod captioner;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod metrics;
pub(crate) mod params;
pub mod recurrent;
pub mod tensor;

pub use error::{Error, Result};
