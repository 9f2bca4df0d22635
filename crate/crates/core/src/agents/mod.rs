//! δ-PPO and δ-DQN trainers. Vanilla PPO and DQN are the λ = 0,
//! belief-free special cases of the same code.

mod dqn;
mod eval;
mod ppo;
mod rollout;
mod trajectory;

pub use dqn::{
    dqn_action, dqn_scores, dqn_targets, dqn_update, init_q_networks, DqnCheckpoint, DqnConfig,
    DqnIterationStats, DqnNets, DqnTrainer, DqnUpdate, QTarget, ReplayBuffer, ReplayEntry,
};
pub use eval::{eval_episode_seed, evaluate, mean_std, AgentBundle, EpisodeRecord, EvalReport};
pub use ppo::{init_networks, EnvFactory, PpoCheckpoint, PpoConfig, PpoIterationStats, PpoTrainer};
pub use rollout::{collect_rollouts, Collected, RolloutNets, Worker, WorkerState};
pub use trajectory::{
    acoe_advantage, compute_to_go, discounted_to_go, gae_advantage, normalize, StepRecord,
    Trajectory,
};

impl PpoTrainer {
    pub fn bundle(&self) -> AgentBundle {
        AgentBundle::Ppo {
            policy: self.policy().clone(),
            value: self.value().clone(),
            delta: self.delta().clone(),
        }
    }
}

impl DqnTrainer {
    pub fn bundle(&self) -> AgentBundle {
        let c = self.checkpoint();
        AgentBundle::Dqn {
            uses_delta: c.config.uses_belief(),
            lambda: c.config.lambda,
            q: c.q,
            delta: c.delta,
            q_target: c.q_target,
            delta_target: c.delta_target,
        }
    }
}
