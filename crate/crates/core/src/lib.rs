//! Adversarial counterfactual error (ACoE) laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffnet`] small multilayer networks with hand-written reverse-mode
//!   gradients for both parameters and inputs, plus action distributions.
//! * [`envs`] small environments that additionally support pure reward
//!   queries at hypothetical states and snapshot/restore.
//! * [`attacks`] L-infinity bounded observation adversaries.
//! * [`belief`] particle beliefs over the attack neighbourhood (A2B, A3B) and
//!   counterfactual reward estimates.
//! * [`agents`] δ-PPO and δ-DQN trainers, vanilla baselines and evaluation.
//! * [`oracle`] exact finite-POMDP computations and bound verifiers.
//! * [`harness`] configuration, orchestration and persisted metrics.

pub mod agents;
pub mod attacks;
pub mod belief;
pub mod diffnet;
pub mod envs;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod space;

pub use error::{Error, Result};
pub use space::{Action, ActionSpace, Bounds};
