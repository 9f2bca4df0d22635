use serde::{Deserialize, Serialize};

use super::{snapshot_mismatch, Env, EnvSnapshot, StepOutcome};
use crate::error::{Error, Result};
use crate::space::{Action, ActionSpace, Bounds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    /// Deterministic reward of each arm, in [0, 1].
    pub arm_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    done: bool,
}

/// Single-step bandit with a constant observation.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    config: BanditConfig,
    bounds: Bounds,
    state: BanditState,
}

impl BanditEnv {
    pub fn new(config: BanditConfig) -> Result<Self> {
        if config.arm_rewards.is_empty()
            || config.arm_rewards.iter().any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(Error::Config("bandit arm rewards must lie in [0, 1]".into()));
        }
        Ok(Self {
            config,
            bounds: Bounds::uniform(1, -1.0, 1.0),
            state: BanditState { done: false },
        })
    }

    fn arm(&self, action: &Action) -> Result<usize> {
        match action {
            Action::Discrete(i) if *i < self.config.arm_rewards.len() => Ok(*i),
            _ => Err(Error::Contract(format!("invalid bandit arm {action:?}"))),
        }
    }
}

impl Env for BanditEnv {
    fn name(&self) -> &'static str {
        "bandit"
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.config.arm_rewards.len())
    }
    fn horizon(&self) -> usize {
        1
    }
    fn gamma(&self) -> f64 {
        0.0
    }
    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.state.done = false;
        vec![0.0]
    }
    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::Contract("step called on a finished bandit episode".into()));
        }
        let arm = self.arm(action)?;
        self.state.done = true;
        Ok(StepOutcome {
            obs: vec![0.0],
            reward: self.config.arm_rewards[arm],
            terminal: true,
            truncated: false,
        })
    }
    fn reward_query(&self, state: &[f64], action: &Action) -> Result<f64> {
        if !self.bounds.contains(state) {
            return Err(Error::OutOfBounds {
                state: state.to_vec(),
            });
        }
        Ok(self.config.arm_rewards[self.arm(action)?])
    }
    fn state(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Bandit(self.state.clone())
    }
    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()> {
        match snapshot {
            EnvSnapshot::Bandit(s) => {
                self.state = s.clone();
                Ok(())
            }
            other => Err(snapshot_mismatch("bandit", other)),
        }
    }
    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
