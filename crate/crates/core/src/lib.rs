//! Pianist identification from MIDI performances.
//!
//! The pipeline reads several performances of the same piece, aligns them
//! note-by-note against a reference, averages the aligned notes into a norm
//! performance and measures per-note deviations from that norm for five
//! expressive quantities (onset, inter-onset interval, off-time duration,
//! dynamic level, note duration). Each performer is then modelled by the
//! distribution of those deviations (histogram, Gaussian KDE or GMM), and an
//! unknown performance is attributed to the performer whose distributions
//! have the smallest fused KL divergence from it.
//!
//! [`synth`] produces synthetic performers with known profiles so the whole
//! chain can be checked end to end without a recorded corpus.

pub mod alignment;
pub mod density;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod midi_io;
pub mod synth;

pub use error::{Error, Result};
