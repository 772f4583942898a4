//! Feedback cooling of harmonic oscillator trees through their leaves.
//!
//! The crate is organised bottom-up:
//!
//! * [`topology`] builds and validates tree networks;
//! * [`dynamics`] integrates the stochastic quadrature equations;
//! * [`rewards`], [`control`] and [`env`] turn the dynamics into an episodic
//!   control problem with an analytical baseline controller;
//! * [`sac`] trains a soft actor-critic agent on that problem;
//! * [`qtraj`] simulates a single oscillator with quantum jump trajectories;
//! * [`simulate`] runs controller ensembles, [`metrics`] and [`csvio`]
//!   produce the statistics and files;
//! * [`envserver`] exposes the environment over a JSON-lines TCP protocol.

pub mod topology;
pub mod dynamics;
pub mod rng;
pub mod rewards;
pub mod control;
pub mod metrics;
pub mod env;
pub mod sac;
pub mod qtraj;
pub mod csvio;
pub mod simulate;
pub mod envserver;
