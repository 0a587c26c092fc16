//! Fingerprint classification with small convolutional networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`rng`]: dense arrays and reproducible random streams.
//! - [`layers`], [`network`], [`optimizer`], [`topology`]: a minimal CNN engine
//!   with exact gradients and mini-batch SGD.
//! - [`synthgen`]: a deterministic generator of synthetic fingerprints for the
//!   five Henry classes.
//! - [`baseline`]: orientation map, Poincaré singular points and k-NN.
//! - [`evaluation`]: cross-validation, confusion matrices, penetration rate and
//!   the template/input robustness protocol.
//! - [`checkpoint`], [`io`]: on-disk formats.

pub mod baseline;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod layers;
pub mod network;
pub mod optimizer;
pub mod real;
pub mod rng;
pub mod synthgen;
pub mod tensor;
pub mod topology;

pub use error::{Error, Result};
pub use real::Real;
pub use rng::RngStream;
pub use synthgen::HenryClass;

pub use tensor::Tensor;

/// Runs `f` over `items` in parallel when the `parallel` feature is enabled,
/// preserving output order.
pub(crate) fn par_map<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
