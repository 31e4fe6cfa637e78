//! Discrete preference-fading diffusion for sequential recommendation.
//!
//! The forward process fades a user's preferred item toward a
//! non-preference state through an idempotent fading matrix; a score network
//! learns log preference ratios with a score-entropy objective; the reverse
//! sampler grows preferences back from the non-preference state, optionally
//! sharpened by contrast against a learned non-preference user.
//!
//! Module map:
//! - [`fading`]: structured idempotent fading matrices and their targets
//! - [`schedule`]: retention probability `α(t)` and rate `β(t)`
//! - [`process`]: forward/inverse transitions, rates, reverse kernels
//! - [`losses`]: score entropy, its closed forms, and the soft-BCE link
//! - [`scorenet`]: the ratio network, its gradients, Adam, checkpoints
//! - [`train`]: the training loop
//! - [`sampler`]: reverse preference growing with guidance
//! - [`evaldata`]: datasets, synthetic data and ranking metrics
//! - [`verify`]: numeric property suites behind `fadegrow verify`

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dense;
pub mod error;
pub mod evaldata;
pub mod fading;
pub mod losses;
pub mod process;
pub mod sampler;
pub mod schedule;
pub mod scorenet;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use fading::{FadingKind, FadingMatrix, NonPreferenceState};
pub use schedule::{Schedule, ScheduleKind};
