//! Simulation and identification of stochastic hybrid systems.
//!
//! The crate has two halves. The simulation half ([`solvers`],
//! [`systems`]) integrates multi-mode dynamics with deterministic and
//! stochastic events. The learning half ([`nn`], [`recovery`], [`events`])
//! recovers a neural hybrid automaton from sampled trajectories: segment the
//! data at discontinuities, learn mode-conditioned vector fields while
//! clustering segments through a categorical bottleneck, then fit
//! interevent-time densities and jump maps per mode pair.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod events;
pub mod hybrid;
pub mod nn;
pub mod recovery;
pub mod solvers;
pub mod systems;

pub use error::{Error, Result};

// The book's code listings run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/overview.md")]
mod book_overview {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/simulation.md")]
mod book_simulation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/segmentation.md")]
mod book_segmentation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/recovery.md")]
mod book_recovery {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/events.md")]
mod book_events {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}

/// Derives an independent child seed (SplitMix64 finalizer over the pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
