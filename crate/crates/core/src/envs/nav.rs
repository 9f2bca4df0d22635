use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{snapshot_mismatch, Env, EnvSnapshot, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::space::{linf, Action, ActionSpace, Bounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NavActions {
    /// 2d moves: index 2i is +e_i, 2i+1 is −e_i.
    Discrete,
    /// Velocity in [−1, 1]^d scaled by the step size.
    Continuous,
}

fn default_horizon() -> usize {
    100
}
fn default_nav_gamma() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    pub dim: usize,
    pub goal: Vec<f64>,
    pub step_size: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub actions: NavActions,
    #[serde(default = "default_nav_gamma")]
    pub gamma: f64,
    /// Standard deviation of gaussian noise added to every move.
    #[serde(default)]
    pub move_noise: f64,
}

impl NavConfig {
    pub fn new(dim: usize, actions: NavActions) -> Self {
        Self {
            dim,
            goal: vec![0.0; dim],
            step_size: 0.1,
            horizon: default_horizon(),
            actions,
            gamma: default_nav_gamma(),
            move_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pos: Vec<f64>,
    t: usize,
    done: bool,
    rng: Rng,
}

/// Point navigation in [−1, 1]^d with reward clamp(1 − ‖s − g‖∞, 0, 1)
/// collected at the pre-move state.
#[derive(Debug, Clone)]
pub struct NavEnv {
    config: NavConfig,
    bounds: Bounds,
    state: NavState,
}

impl NavEnv {
    pub fn new(config: NavConfig) -> Result<Self> {
        if !(1..=2).contains(&config.dim) {
            return Err(Error::Config(format!("nav dim must be 1 or 2, got {}", config.dim)));
        }
        if config.goal.len() != config.dim {
            return Err(Error::dim("nav goal", config.dim, config.goal.len()));
        }
        if !(config.step_size > 0.0) || config.horizon == 0 {
            return Err(Error::Config("nav step_size and horizon must be positive".into()));
        }
        let bounds = Bounds::uniform(config.dim, -1.0, 1.0);
        if !bounds.contains(&config.goal) {
            return Err(Error::OutOfBounds {
                state: config.goal.clone(),
            });
        }
        let state = NavState {
            pos: vec![0.0; config.dim],
            t: 0,
            done: false,
            rng: rng::from_seed(0),
        };
        Ok(Self {
            config,
            bounds,
            state,
        })
    }

    pub fn config(&self) -> &NavConfig {
        &self.config
    }

    pub fn reward_at(&self, state: &[f64]) -> f64 {
        (1.0 - linf(state, &self.config.goal)).clamp(0.0, 1.0)
    }

    /// Place the agent at `pos` without changing the step counter.
    pub fn set_position(&mut self, pos: &[f64]) -> Result<()> {
        if !self.bounds.contains(pos) {
            return Err(Error::OutOfBounds { state: pos.to_vec() });
        }
        self.state.pos = pos.to_vec();
        Ok(())
    }

    fn displacement(&self, action: &Action) -> Result<Vec<f64>> {
        let d = self.config.dim;
        let h = self.config.step_size;
        match (self.config.actions, action) {
            (NavActions::Discrete, Action::Discrete(i)) if *i < 2 * d => {
                let mut v = vec![0.0; d];
                v[i / 2] = if i % 2 == 0 { h } else { -h };
                Ok(v)
            }
            (NavActions::Continuous, Action::Continuous(v)) if v.len() == d => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("nav action".into()));
                }
                Ok(v.iter().map(|x| h * x.clamp(-1.0, 1.0)).collect())
            }
            _ => Err(Error::Contract(format!(
                "action {action:?} outside the nav action space {:?}",
                self.action_space()
            ))),
        }
    }
}

impl Env for NavEnv {
    fn name(&self) -> &'static str {
        "nav"
    }

    fn obs_dim(&self) -> usize {
        self.config.dim
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn action_space(&self) -> ActionSpace {
        match self.config.actions {
            NavActions::Discrete => ActionSpace::Discrete(2 * self.config.dim),
            NavActions::Continuous => ActionSpace::Continuous(self.config.dim),
        }
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn gamma(&self) -> f64 {
        self.config.gamma
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = rng::from_seed(seed);
        let pos = (0..self.config.dim)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        self.state = NavState {
            pos,
            t: 0,
            done: false,
            rng,
        };
        self.state.pos.clone()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::Contract("step called on a finished nav episode".into()));
        }
        let delta = self.displacement(action)?;
        let reward = self.reward_at(&self.state.pos);
        for (p, dv) in self.state.pos.iter_mut().zip(&delta) {
            *p += dv;
        }
        if self.config.move_noise > 0.0 {
            for p in self.state.pos.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut self.state.rng);
                *p += self.config.move_noise * n;
            }
        }
        self.bounds.clip(&mut self.state.pos);
        self.state.t += 1;
        let truncated = self.state.t >= self.config.horizon;
        self.state.done = truncated;
        Ok(StepOutcome {
            obs: self.state.pos.clone(),
            reward,
            terminal: false,
            truncated,
        })
    }

    fn reward_query(&self, state: &[f64], action: &Action) -> Result<f64> {
        if !self.bounds.contains(state) {
            return Err(Error::OutOfBounds {
                state: state.to_vec(),
            });
        }
        self.displacement(action)?;
        Ok(self.reward_at(state))
    }

    fn state(&self) -> Vec<f64> {
        self.state.pos.clone()
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Nav(self.state.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()> {
        match snapshot {
            EnvSnapshot::Nav(s) if s.pos.len() == self.config.dim => {
                self.state = s.clone();
                Ok(())
            }
            other => Err(snapshot_mismatch("nav", other)),
        }
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
