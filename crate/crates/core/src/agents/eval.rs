use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attacks::Adversary;
use crate::diffnet::DiffNet;
use crate::envs::Env;
use crate::error::Result;
use crate::policy::{NetPolicy, Policy, ScorePolicy};
use crate::rng;

/// Frozen networks of a trained agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "kebab-case")]
pub enum AgentBundle {
    Ppo {
        policy: DiffNet,
        value: DiffNet,
        delta: DiffNet,
    },
    Dqn {
        q: DiffNet,
        delta: DiffNet,
        q_target: DiffNet,
        delta_target: DiffNet,
        lambda: f64,
        /// Whether δ enters action selection.
        uses_delta: bool,
    },
}

impl AgentBundle {
    pub fn policy(&self) -> Result<Arc<dyn Policy>> {
        Ok(match self {
            AgentBundle::Ppo { policy, .. } => Arc::new(NetPolicy::new(policy.clone())?),
            AgentBundle::Dqn { q, delta, lambda, uses_delta, .. } => Arc::new(ScorePolicy::new(
                q.clone(),
                uses_delta.then(|| delta.clone()),
                *lambda,
            )?),
        })
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            AgentBundle::Ppo { policy, .. } => policy.input_dim(),
            AgentBundle::Dqn { q, .. } => q.input_dim(),
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            AgentBundle::Ppo { policy, .. } => policy.output_dim(),
            AgentBundle::Dqn { q, .. } => q.output_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub episode_seed: u64,
    pub total_return: f64,
    pub length: usize,
    pub attacked_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attack: String,
    pub episodes: usize,
    pub mean_return: f64,
    /// Sample standard deviation (0 for fewer than two episodes).
    pub std_return: f64,
    pub records: Vec<EpisodeRecord>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn eval_episode_seed(seed: u64, episode: usize) -> u64 {
    rng::derive_seed(seed, &format!("eval-episode-{episode}"))
}

/// Greedy rollouts of a frozen policy against an adversary. No learning.
pub fn evaluate(
    policy: &dyn Policy,
    env: &mut dyn Env,
    adversary: &mut Adversary,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let episode_seed = eval_episode_seed(seed, episode);
        let mut obs = env.reset(episode_seed);
        adversary.begin_episode(env.horizon(), episode_seed);
        let (mut total, mut length) = (0.0, 0);
        loop {
            let seen = adversary.perturb(policy, env, &obs)?;
            let action = policy.greedy(&seen)?;
            let out = env.step(&action)?;
            total += out.reward;
            length += 1;
            if out.done() {
                break;
            }
            obs = out.obs;
        }
        records.push(EpisodeRecord {
            episode,
            episode_seed,
            total_return: total,
            length,
            attacked_steps: adversary.attacked_steps(),
        });
    }
    let returns: Vec<f64> = records.iter().map(|r| r.total_return).collect();
    let (mean_return, std_return) = mean_std(&returns);
    Ok(EvalReport {
        attack: adversary.spec().label(),
        episodes,
        mean_return,
        std_return,
        records,
    })
}
