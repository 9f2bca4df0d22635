use serde::{Deserialize, Serialize};

use super::trajectory::{StepRecord, Trajectory};
use crate::attacks::Adversary;
use crate::belief::{build_belief, immediate_counterfactual_error, BeliefConfig, SurrogateCache};
use crate::diffnet::DiffNet;
use crate::envs::{Env, EnvSnapshot};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::{self, Rng};

/// Resumable position of a rollout worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub seed: u64,
    pub env: EnvSnapshot,
    pub obs: Vec<f64>,
    pub episodes_started: u64,
    pub episode_return: f64,
    pub episode_len: usize,
    pub action_rng: Rng,
    pub belief_rng: Rng,
    pub adversary: Adversary,
}

/// An environment instance with its own random streams. Episodes are
/// concatenated across calls to [`Worker::collect`].
pub struct Worker {
    env: Box<dyn Env>,
    seed: u64,
    obs: Vec<f64>,
    episodes_started: u64,
    episode_return: f64,
    episode_len: usize,
    action_rng: Rng,
    belief_rng: Rng,
    adversary: Adversary,
    cache: Option<SurrogateCache>,
}

/// What a collection pass produced.
#[derive(Debug, Clone, Default)]
pub struct Collected {
    pub trajectories: Vec<Trajectory>,
    /// Returns of episodes that finished during the pass.
    pub episode_returns: Vec<f64>,
}

/// Per-step inputs of a collection pass.
pub struct RolloutNets<'a> {
    pub policy: &'a dyn Policy,
    pub value: &'a DiffNet,
    pub delta: Option<&'a DiffNet>,
}

fn scalar(net: &DiffNet, obs: &[f64]) -> Result<f64> {
    Ok(net.forward(obs)?[0])
}

impl Worker {
    pub fn new(env: Box<dyn Env>, seed: u64, adversary: Adversary, belief: &BeliefConfig) -> Self {
        let mut w = Self {
            env,
            seed,
            obs: Vec::new(),
            episodes_started: 0,
            episode_return: 0.0,
            episode_len: 0,
            action_rng: rng::stream(seed, "rollout"),
            belief_rng: rng::stream(seed, "belief"),
            adversary,
            cache: belief.new_cache(),
        };
        w.start_episode();
        w
    }

    pub fn restore(env: Box<dyn Env>, state: WorkerState, belief: &BeliefConfig) -> Result<Self> {
        let mut env = env;
        env.restore(&state.env)?;
        Ok(Self {
            env,
            seed: state.seed,
            obs: state.obs,
            episodes_started: state.episodes_started,
            episode_return: state.episode_return,
            episode_len: state.episode_len,
            action_rng: state.action_rng,
            belief_rng: state.belief_rng,
            adversary: state.adversary,
            cache: belief.new_cache(),
        })
    }

    pub fn state(&self) -> WorkerState {
        WorkerState {
            seed: self.seed,
            env: self.env.snapshot(),
            obs: self.obs.clone(),
            episodes_started: self.episodes_started,
            episode_return: self.episode_return,
            episode_len: self.episode_len,
            action_rng: self.action_rng.clone(),
            belief_rng: self.belief_rng.clone(),
            adversary: self.adversary.clone(),
        }
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    fn start_episode(&mut self) {
        let episode_seed = rng::derive_seed(self.seed, &format!("episode-{}", self.episodes_started));
        self.episodes_started += 1;
        self.obs = self.env.reset(episode_seed);
        let horizon = self.env.horizon();
        self.adversary.begin_episode(horizon, episode_seed);
        self.episode_return = 0.0;
        self.episode_len = 0;
    }

    /// Collects exactly `steps` transitions, sampling actions from the
    /// policy on (possibly perturbed) observations and recording δ_R from
    /// the configured belief.
    pub fn collect(&mut self, nets: &RolloutNets<'_>, belief: &BeliefConfig, steps: usize) -> Result<Collected> {
        if let Some(c) = self.cache.as_mut() {
            c.clear();
        }
        let mut out = Collected::default();
        let mut current: Vec<StepRecord> = Vec::new();
        let bounds = self.env.bounds().clone();
        for _ in 0..steps {
            let clean = self.obs.clone();
            let s_o = self.adversary.perturb(nets.policy, self.env.as_mut(), &clean)?;
            let dist = nets.policy.distribution(&s_o)?;
            let action = dist.sample(&mut self.action_rng);
            let log_prob = dist.log_prob(&action)?;
            let value = scalar(nets.value, &s_o)?;
            let delta_value = match nets.delta {
                Some(d) => scalar(d, &s_o)?,
                None => 0.0,
            };
            let delta_r = match build_belief(
                belief,
                nets.policy,
                &s_o,
                &bounds,
                &mut self.belief_rng,
                self.cache.as_mut(),
            )? {
                Some(b) => immediate_counterfactual_error(self.env.as_ref(), &s_o, &action, &b)?,
                None => 0.0,
            };
            if !(delta_r.abs() <= 1.0 + 1e-12) {
                return Err(Error::Contract(format!("immediate counterfactual error {delta_r} outside [-1, 1]")));
            }
            let outcome = self.env.step(&action)?;
            self.episode_return += outcome.reward;
            self.episode_len += 1;
            current.push(StepRecord {
                obs: s_o,
                action,
                log_prob,
                reward: outcome.reward,
                value,
                delta_value,
                delta_r,
            });
            if outcome.done() {
                let (bv, bd) = if outcome.terminal {
                    (0.0, 0.0)
                } else {
                    self.bootstraps(nets, &outcome.obs)?
                };
                out.trajectories.push(Trajectory {
                    steps: std::mem::take(&mut current),
                    terminal: outcome.terminal,
                    bootstrap_value: bv,
                    bootstrap_delta: bd,
                });
                out.episode_returns.push(self.episode_return);
                self.start_episode();
            } else {
                self.obs = outcome.obs;
            }
        }
        if !current.is_empty() {
            let next = self.obs.clone();
            let (bv, bd) = self.bootstraps(nets, &next)?;
            out.trajectories.push(Trajectory {
                steps: current,
                terminal: false,
                bootstrap_value: bv,
                bootstrap_delta: bd,
            });
        }
        Ok(out)
    }

    fn bootstraps(&self, nets: &RolloutNets<'_>, obs: &[f64]) -> Result<(f64, f64)> {
        let bv = scalar(nets.value, obs)?;
        let bd = match nets.delta {
            Some(d) => scalar(d, obs)?,
            None => 0.0,
        };
        Ok((bv, bd))
    }
}

/// Runs every worker for `steps` transitions; workers run on separate
/// threads when there is more than one. Results are concatenated in worker
/// order, so the output does not depend on scheduling.
pub fn collect_rollouts(
    workers: &mut [Worker],
    nets: &RolloutNets<'_>,
    belief: &BeliefConfig,
    steps: usize,
) -> Result<Collected> {
    let parts: Vec<Result<Collected>> = if workers.len() <= 1 {
        workers.iter_mut().map(|w| w.collect(nets, belief, steps)).collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .iter_mut()
                .map(|w| scope.spawn(move || w.collect(nets, belief, steps)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("rollout worker panicked".into()))))
                .collect()
        })
    };
    let mut all = Collected::default();
    for part in parts {
        let part = part?;
        all.trajectories.extend(part.trajectories);
        all.episode_returns.extend(part.episode_returns);
    }
    Ok(all)
}
