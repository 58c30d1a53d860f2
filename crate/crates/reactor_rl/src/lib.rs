//! Reinforcement-learning temperature control of a simulated batch
//! transesterification reactor.
//!
//! The crate bundles a reactor simulation (`plant`), PI/PID tracking
//! rewards (`reward`), a from-scratch MLP with Adam (`approx`), experience
//! replay (`replay`), TD3/DDPG/DQN agents with a two-stage offline/online
//! trainer (`agents`), and an experiment harness with CLI, config files
//! and benchmark metrics (`harness`).

pub mod approx;
mod binio;
pub mod agents;
pub mod error;
pub mod plant;
pub mod replay;
pub mod reward;

pub use error::{Error, Result};
