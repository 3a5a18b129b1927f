//! Simulator and learning toolkit for multi-hop split learning over wireless
//! links, where idle devices transmit decoy signals so that eavesdroppers lock
//! onto the wrong transmitter.
//!
//! The crate is layered bottom-up:
//!
//! * [`topology`], [`slmodel`], [`costmodel`]: geometry, the split model and
//!   the time/energy ledger of one training iteration.
//! * [`eavesdrop`], [`powerstar`]: capture probabilities, expected leakage and
//!   closed-form optimal powers with brute-force oracles.
//! * [`mhsl`]: an executable split-training engine on dense networks.
//! * [`env`]: the scheduling MDP with masked discrete actions.
//! * [`nn`], [`icm`], [`agent`]: a small reverse-mode network library, the
//!   curiosity module and the attention actor-critic trainer.
//! * [`experiment`]: config files and the commands behind the `decoysplit` bin.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod costmodel;
pub mod eavesdrop;
pub mod env;
pub mod error;
pub mod experiment;
pub mod fsum;
pub mod icm;
pub mod mhsl;
pub mod nn;
pub mod powerstar;
pub mod slmodel;
pub mod topology;

pub use error::{Error, Result};

/// Random stream used everywhere in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Independent substream `stream` of a seeded generator.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    use rand::SeedableRng;
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
