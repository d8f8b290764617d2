//! Decentralized multi-robot target coverage.
//!
//! Robots pick one of five motion primitives per time step to maximize the
//! number of distinct targets covered. The crate provides the scenario model
//! and coverage objective ([`world`]), the classical selectors ([`selectors`]),
//! a graph neural network that learns to imitate the centralized greedy
//! expert ([`features`], [`neural`], [`imitation`]), a message-passing
//! execution of that network ([`runtime`]) and an experiment harness
//! ([`bench`], [`verify`]).

pub mod bench;
pub mod error;
pub mod features;
pub mod imitation;
pub mod neural;
pub mod runtime;
pub mod selectors;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
