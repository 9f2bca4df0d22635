use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::rollout::{collect_rollouts, RolloutNets, Worker, WorkerState};
use super::trajectory::{acoe_advantage, compute_to_go, gae_advantage, normalize};
use crate::attacks::{Adversary, AttackSpec};
use crate::belief::{BeliefConfig, BeliefKind};
use crate::diffnet::{Activation, DiffNet, Head, Loss, Optimizer, OptimizerConfig};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::policy::NetPolicy;
use crate::rng::{self, Rng};
use crate::space::{Action, ActionSpace};

fn default_lambda() -> f64 {
    0.2
}
fn default_gae() -> f64 {
    0.95
}
fn default_clip() -> f64 {
    0.2
}
fn default_epochs() -> usize {
    10
}
fn default_minibatch() -> usize {
    64
}
fn default_steps() -> usize {
    512
}
fn default_workers() -> usize {
    1
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_lr() -> f64 {
    0.005
}
fn default_iterations() -> usize {
    50
}
fn default_true() -> bool {
    true
}
fn default_grad_norm() -> Option<f64> {
    Some(0.5)
}
fn default_attack() -> AttackSpec {
    AttackSpec::identity()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    /// Robustness weight λ; 0 with no belief is vanilla PPO.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Discount; defaults to the environment's.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_gae")]
    pub gae_lambda: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    /// Transitions per worker per iteration.
    #[serde(default = "default_steps")]
    pub steps_per_iter: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_lr")]
    pub value_lr: f64,
    #[serde(default = "default_grad_norm")]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "default_true")]
    pub normalize_advantage: bool,
    #[serde(default)]
    pub belief: BeliefConfig,
    /// Adversary applied to training observations.
    #[serde(default = "default_attack")]
    pub attack_train: AttackSpec,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            gamma: None,
            gae_lambda: default_gae(),
            clip: default_clip(),
            epochs: default_epochs(),
            minibatch: default_minibatch(),
            steps_per_iter: default_steps(),
            workers: default_workers(),
            iterations: default_iterations(),
            hidden: default_hidden(),
            activation: None,
            lr: default_lr(),
            value_lr: default_lr(),
            max_grad_norm: default_grad_norm(),
            normalize_advantage: true,
            belief: BeliefConfig::default(),
            attack_train: AttackSpec::identity(),
        }
    }
}

impl PpoConfig {
    /// Vanilla PPO: λ = 0 and no belief.
    pub fn vanilla() -> Self {
        Self {
            lambda: 0.0,
            belief: BeliefConfig::none(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config("clip must lie in (0, 1)".into()));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Config("gamma must lie in [0, 1)".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gae_lambda must lie in [0, 1]".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.steps_per_iter == 0 || self.workers == 0 {
            return Err(Error::Config("epochs, minibatch, steps_per_iter and workers must be positive".into()));
        }
        if !(self.lr > 0.0 && self.value_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.belief.validate()?;
        self.attack_train.validate()
    }

    /// Whether the δ network is trained.
    pub fn uses_belief(&self) -> bool {
        self.belief.kind != BeliefKind::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoIterationStats {
    pub iteration: usize,
    pub steps: usize,
    pub episodes: usize,
    /// Mean return of episodes finished this iteration (0 if none).
    pub mean_return: f64,
    pub mean_delta_to_go: f64,
    pub mean_delta_r: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub delta_loss: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoCheckpoint {
    pub config: PpoConfig,
    pub seed: u64,
    pub iteration: usize,
    pub gamma: f64,
    pub policy: DiffNet,
    pub value: DiffNet,
    pub delta: DiffNet,
    pub policy_opt: Optimizer,
    pub value_opt: Optimizer,
    pub delta_opt: Optimizer,
    pub minibatch_rng: Rng,
    pub workers: Vec<WorkerState>,
}

pub struct PpoTrainer {
    config: PpoConfig,
    seed: u64,
    iteration: usize,
    gamma: f64,
    policy: DiffNet,
    value: DiffNet,
    delta: DiffNet,
    policy_opt: Optimizer,
    value_opt: Optimizer,
    delta_opt: Optimizer,
    minibatch_rng: Rng,
    workers: Vec<Worker>,
}

pub type EnvFactory<'a> = &'a dyn Fn(usize) -> Result<Box<dyn Env>>;

fn worker_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &format!("worker-{i}"))
}

fn optimizer(lr: f64, clip: Option<f64>, params: usize) -> Optimizer {
    let mut cfg = OptimizerConfig::adam(lr);
    cfg.max_grad_norm = clip;
    Optimizer::new(cfg, params)
}

/// Fresh policy, value and δ networks for an environment. The last layer
/// of the δ network starts at zero so δ_ψ ≡ 0 until it sees a nonzero target.
pub fn init_networks(
    obs_dim: usize,
    actions: ActionSpace,
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<(DiffNet, DiffNet, DiffNet)> {
    let (out, head) = match actions {
        ActionSpace::Discrete(n) => (n, Head::CategoricalLogits),
        ActionSpace::Continuous(d) => (d, Head::DiagonalGaussian),
    };
    let sizes = |o: usize| {
        let mut s = vec![obs_dim];
        s.extend_from_slice(hidden);
        s.push(o);
        s
    };
    let policy = DiffNet::random(&sizes(out), activation, head, 0.01, &mut rng::stream(seed, "init-policy"))?;
    let value = DiffNet::random(&sizes(1), activation, Head::Linear, 1.0, &mut rng::stream(seed, "init-value"))?;
    let delta = DiffNet::random(&sizes(1), activation, Head::Linear, 0.0, &mut rng::stream(seed, "init-delta"))?;
    Ok((policy, value, delta))
}

fn add_scaled(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, v) in acc.iter_mut().zip(g) {
        *a += scale * v;
    }
}

struct Sample {
    obs: Vec<f64>,
    action: Action,
    old_log_prob: f64,
    advantage: f64,
    value_target: f64,
    delta_target: f64,
}

impl PpoTrainer {
    pub fn new(config: PpoConfig, envs: EnvFactory<'_>, seed: u64) -> Result<Self> {
        config.validate()?;
        let probe = envs(0)?;
        let gamma = config.gamma.unwrap_or(probe.gamma());
        let activation = config.activation.unwrap_or(Activation::Tanh);
        let (policy, value, delta) = init_networks(probe.obs_dim(), probe.action_space(), &config.hidden, activation, seed)?;
        drop(probe);
        let mut workers = Vec::with_capacity(config.workers);
        for i in 0..config.workers {
            let adversary = Adversary::new(config.attack_train.clone())?;
            workers.push(Worker::new(envs(i)?, worker_seed(seed, i), adversary, &config.belief));
        }
        Ok(Self {
            policy_opt: optimizer(config.lr, config.max_grad_norm, policy.param_count()),
            value_opt: optimizer(config.value_lr, config.max_grad_norm, value.param_count()),
            delta_opt: optimizer(config.value_lr, config.max_grad_norm, delta.param_count()),
            minibatch_rng: rng::stream(seed, "minibatch"),
            config,
            seed,
            iteration: 0,
            gamma,
            policy,
            value,
            delta,
            workers,
        })
    }

    pub fn resume(checkpoint: PpoCheckpoint, envs: EnvFactory<'_>) -> Result<Self> {
        checkpoint.config.validate()?;
        if checkpoint.workers.len() != checkpoint.config.workers {
            return Err(Error::Config("checkpoint worker count does not match its config".into()));
        }
        let mut workers = Vec::with_capacity(checkpoint.workers.len());
        for (i, state) in checkpoint.workers.into_iter().enumerate() {
            workers.push(Worker::restore(envs(i)?, state, &checkpoint.config.belief)?);
        }
        Ok(Self {
            config: checkpoint.config,
            seed: checkpoint.seed,
            iteration: checkpoint.iteration,
            gamma: checkpoint.gamma,
            policy: checkpoint.policy,
            value: checkpoint.value,
            delta: checkpoint.delta,
            policy_opt: checkpoint.policy_opt,
            value_opt: checkpoint.value_opt,
            delta_opt: checkpoint.delta_opt,
            minibatch_rng: checkpoint.minibatch_rng,
            workers,
        })
    }

    pub fn checkpoint(&self) -> PpoCheckpoint {
        PpoCheckpoint {
            config: self.config.clone(),
            seed: self.seed,
            iteration: self.iteration,
            gamma: self.gamma,
            policy: self.policy.clone(),
            value: self.value.clone(),
            delta: self.delta.clone(),
            policy_opt: self.policy_opt.clone(),
            value_opt: self.value_opt.clone(),
            delta_opt: self.delta_opt.clone(),
            minibatch_rng: self.minibatch_rng.clone(),
            workers: self.workers.iter().map(Worker::state).collect(),
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }
    pub fn iteration(&self) -> usize {
        self.iteration
    }
    pub fn policy(&self) -> &DiffNet {
        &self.policy
    }
    pub fn value(&self) -> &DiffNet {
        &self.value
    }
    pub fn delta(&self) -> &DiffNet {
        &self.delta
    }
    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// One collect-and-update cycle.
    pub fn iterate(&mut self) -> Result<PpoIterationStats> {
        let use_delta = self.config.uses_belief();
        let policy = NetPolicy::new(self.policy.clone())?;
        let collected = {
            let nets = RolloutNets {
                policy: &policy,
                value: &self.value,
                delta: use_delta.then_some(&self.delta),
            };
            collect_rollouts(&mut self.workers, &nets, &self.config.belief, self.config.steps_per_iter)?
        };

        let mut samples = Vec::new();
        let mut advantages = Vec::new();
        let mut delta_sum = 0.0;
        let mut delta_r_sum = 0.0;
        for traj in &collected.trajectories {
            let (r_hat, d_hat) = compute_to_go(traj, self.gamma);
            let adv = gae_advantage(traj, self.gamma, self.config.gae_lambda);
            advantages.extend(acoe_advantage(&adv, &d_hat, self.config.lambda)?);
            for (t, step) in traj.steps.iter().enumerate() {
                delta_sum += d_hat[t];
                delta_r_sum += step.delta_r;
                samples.push(Sample {
                    obs: step.obs.clone(),
                    action: step.action.clone(),
                    old_log_prob: step.log_prob,
                    advantage: 0.0,
                    value_target: r_hat[t],
                    delta_target: d_hat[t],
                });
            }
        }
        if samples.is_empty() {
            return Err(Error::Contract("empty PPO batch".into()));
        }
        if self.config.normalize_advantage {
            normalize(&mut advantages);
        }
        for (s, a) in samples.iter_mut().zip(&advantages) {
            s.advantage = *a;
        }

        let (policy_loss, value_loss, delta_loss) = self.update(&samples, use_delta)?;
        self.iteration += 1;
        let n = samples.len() as f64;
        let episodes = collected.episode_returns.len();
        Ok(PpoIterationStats {
            iteration: self.iteration,
            steps: samples.len(),
            episodes,
            mean_return: if episodes == 0 {
                0.0
            } else {
                collected.episode_returns.iter().sum::<f64>() / episodes as f64
            },
            mean_delta_to_go: delta_sum / n,
            mean_delta_r: delta_r_sum / n,
            policy_loss,
            value_loss,
            delta_loss,
        })
    }

    fn update(&mut self, samples: &[Sample], use_delta: bool) -> Result<(f64, f64, f64)> {
        let mut index: Vec<usize> = (0..samples.len()).collect();
        let (mut pl, mut vl, mut dl, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..self.config.epochs {
            index.shuffle(&mut self.minibatch_rng);
            for chunk in index.chunks(self.config.minibatch) {
                let scale = 1.0 / chunk.len() as f64;
                let mut gp = vec![0.0; self.policy.param_count()];
                let mut gv = vec![0.0; self.value.param_count()];
                let mut gd = vec![0.0; if use_delta { self.delta.param_count() } else { 0 }];
                let (mut lp, mut lv, mut ld) = (0.0, 0.0, 0.0);
                for &i in chunk {
                    let s = &samples[i];
                    let clip = Loss::PpoClip {
                        action: s.action.clone(),
                        old_log_prob: s.old_log_prob,
                        advantage: s.advantage,
                        clip: self.config.clip,
                    };
                    let (l, g) = self.policy.param_gradient(&s.obs, &clip)?;
                    lp += l * scale;
                    add_scaled(&mut gp, &g, scale);
                    let (l, g) = self.value.param_gradient(&s.obs, &Loss::SquaredErrorAt { index: 0, target: s.value_target })?;
                    lv += l * scale;
                    add_scaled(&mut gv, &g, scale);
                    if use_delta {
                        let (l, g) = self.delta.param_gradient(&s.obs, &Loss::SquaredErrorAt { index: 0, target: s.delta_target })?;
                        ld += l * scale;
                        add_scaled(&mut gd, &g, scale);
                    }
                }
                if !(lp.is_finite() && lv.is_finite() && ld.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "PPO losses at iteration {}: policy {lp}, value {lv}, delta {ld}",
                        self.iteration + 1
                    )));
                }
                self.policy_opt.step(&mut self.policy, &gp)?;
                self.value_opt.step(&mut self.value, &gv)?;
                if use_delta {
                    self.delta_opt.step(&mut self.delta, &gd)?;
                }
                pl += lp;
                vl += lv;
                dl += ld;
                batches += 1;
            }
        }
        let b = batches.max(1) as f64;
        Ok((pl / b, vl / b, dl / b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{BanditConfig, EnvConfig};

    fn bandit_factory() -> impl Fn(usize) -> Result<Box<dyn Env>> {
        |_| EnvConfig::Bandit(BanditConfig { arm_rewards: vec![0.2, 0.9] }).build()
    }

    fn small(mut cfg: PpoConfig) -> PpoConfig {
        cfg.hidden = vec![8];
        cfg.steps_per_iter = 32;
        cfg.minibatch = 16;
        cfg.epochs = 2;
        cfg
    }

    #[test]
    fn bandit_probability_of_better_arm_increases() {
        let f = bandit_factory();
        let mut t = PpoTrainer::new(small(PpoConfig::vanilla()), &f, 3).unwrap();
        let prob = |t: &PpoTrainer| match t.policy().distribution(&[0.0]).unwrap() {
            crate::diffnet::ActionDistribution::Categorical(p) => p[1],
            _ => unreachable!(),
        };
        let mut last = prob(&t);
        for _ in 0..10 {
            t.iterate().unwrap();
            let p = prob(&t);
            assert!(p > last, "{p} <= {last}");
            last = p;
        }
    }

    #[test]
    fn zero_advantage_leaves_policy_unchanged() {
        let f = |_: usize| EnvConfig::Bandit(BanditConfig { arm_rewards: vec![0.5, 0.5] }).build();
        let mut cfg = small(PpoConfig::vanilla());
        cfg.normalize_advantage = false;
        cfg.gae_lambda = 1.0;
        let mut t = PpoTrainer::new(cfg, &f, 1).unwrap();
        // an exact critic makes every TD residual, hence every advantage, zero
        t.value.layers_mut().last_mut().unwrap().weights.iter_mut().for_each(|w| *w = 0.0);
        t.value.layers_mut().last_mut().unwrap().bias = vec![0.5];
        let before = t.policy().params();
        t.iterate().unwrap();
        assert_eq!(t.policy().params(), before);
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let f = bandit_factory();
        let mut cfg = small(PpoConfig::default());
        cfg.belief.kind = BeliefKind::A2b;
        let mut a = PpoTrainer::new(cfg, &f, 8).unwrap();
        a.iterate().unwrap();
        let ckpt: PpoCheckpoint = serde_json::from_str(&serde_json::to_string(&a.checkpoint()).unwrap()).unwrap();
        let mut b = PpoTrainer::resume(ckpt, &f).unwrap();
        let sa = a.iterate().unwrap();
        let sb = b.iterate().unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.policy(), b.policy());
        assert_eq!(a.delta(), b.delta());
    }
}
