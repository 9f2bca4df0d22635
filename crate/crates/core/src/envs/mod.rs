//! Desk-scale environments.
//!
//! Besides the usual reset/step loop every environment answers pure reward
//! queries at hypothetical states (as needed for counterfactual rewards) and
//! can be snapshotted and restored, which lookahead attacks rely on.

mod bandit;
mod grid;
mod nav;

pub use bandit::{BanditConfig, BanditEnv};
pub use grid::{GridConfig, GridEnv, StartCell, TabularModel, TerminalCell};
pub use nav::{NavActions, NavConfig, NavEnv};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::space::{Action, ActionSpace, Bounds};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// Reached an absorbing state; no bootstrap beyond this step.
    pub terminal: bool,
    /// Hit the horizon.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Full environment state, including the RNG stream position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "kebab-case")]
pub enum EnvSnapshot {
    Nav(nav::NavState),
    Grid(grid::GridState),
    Bandit(bandit::BanditState),
}

impl EnvSnapshot {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvSnapshot::Nav(_) => "nav",
            EnvSnapshot::Grid(_) => "grid",
            EnvSnapshot::Bandit(_) => "bandit",
        }
    }
}

pub trait Env: Send {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn bounds(&self) -> &Bounds;
    fn action_space(&self) -> ActionSpace;
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;

    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepOutcome>;

    /// Reward of taking `action` at a hypothetical `state`. Does not touch
    /// the environment.
    fn reward_query(&self, state: &[f64], action: &Action) -> Result<f64>;

    /// Current true state in observation coordinates.
    fn state(&self) -> Vec<f64>;

    fn snapshot(&self) -> EnvSnapshot;
    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()>;

    fn box_clone(&self) -> Box<dyn Env>;
}

impl Clone for Box<dyn Env> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    Nav(NavConfig),
    Grid(GridConfig),
    Bandit(BanditConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Env>> {
        Ok(match self {
            EnvConfig::Nav(c) => Box::new(NavEnv::new(c.clone())?),
            EnvConfig::Grid(c) => Box::new(GridEnv::new(c.clone())?),
            EnvConfig::Bandit(c) => Box::new(BanditEnv::new(c.clone())?),
        })
    }
}

pub(crate) fn snapshot_mismatch(expected: &str, got: &EnvSnapshot) -> crate::Error {
    crate::Error::Contract(format!(
        "cannot restore a {} snapshot into a {expected} environment",
        got.kind()
    ))
}
