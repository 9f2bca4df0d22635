use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attacks::{Adversary, AttackSpec};
use crate::belief::{build_belief, immediate_counterfactual_error, BeliefConfig, BeliefKind};
use crate::diffnet::{argmax, Activation, DiffNet, Head, Loss, Optimizer, OptimizerConfig};
use crate::envs::{Env, EnvSnapshot};
use crate::error::{Error, Result};
use crate::policy::ScorePolicy;
use crate::rng::{self, Rng};
use crate::space::{Action, ActionSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QTarget {
    /// r + γ max_a' Q⁻(s', a').
    Max,
    /// r + γ min_a' Q⁻(s', a').
    Min,
}

fn default_lambda() -> f64 {
    0.2
}
fn default_lr() -> f64 {
    0.005
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_capacity() -> usize {
    10_000
}
fn default_minibatch() -> usize {
    64
}
fn default_sync() -> usize {
    200
}
fn default_explore_start() -> f64 {
    1.0
}
fn default_explore_end() -> f64 {
    0.05
}
fn default_decay() -> usize {
    2_000
}
fn default_total() -> usize {
    5_000
}
fn default_learn_start() -> usize {
    200
}
fn default_log_every() -> usize {
    500
}
fn default_q_target() -> QTarget {
    QTarget::Max
}
fn default_grad_norm() -> Option<f64> {
    Some(10.0)
}
fn default_attack() -> AttackSpec {
    AttackSpec::identity()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    /// Robustness temperature λ in argmax Q − λδ.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default = "default_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    /// Target networks are reset every K environment steps.
    #[serde(default = "default_sync")]
    pub target_sync: usize,
    #[serde(default = "default_explore_start")]
    pub explore_start: f64,
    #[serde(default = "default_explore_end")]
    pub explore_end: f64,
    /// Steps over which exploration decays linearly.
    #[serde(default = "default_decay")]
    pub explore_decay_steps: usize,
    #[serde(default = "default_total")]
    pub total_steps: usize,
    #[serde(default = "default_learn_start")]
    pub learn_start: usize,
    /// Environment steps per stats row.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default = "default_q_target")]
    pub q_target: QTarget,
    #[serde(default = "default_grad_norm")]
    pub max_grad_norm: Option<f64>,
    #[serde(default)]
    pub belief: BeliefConfig,
    #[serde(default = "default_attack")]
    pub attack_train: AttackSpec,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            gamma: None,
            lr: default_lr(),
            hidden: default_hidden(),
            activation: None,
            replay_capacity: default_capacity(),
            minibatch: default_minibatch(),
            target_sync: default_sync(),
            explore_start: default_explore_start(),
            explore_end: default_explore_end(),
            explore_decay_steps: default_decay(),
            total_steps: default_total(),
            learn_start: default_learn_start(),
            log_every: default_log_every(),
            q_target: default_q_target(),
            max_grad_norm: default_grad_norm(),
            belief: BeliefConfig::default(),
            attack_train: AttackSpec::identity(),
        }
    }
}

impl DqnConfig {
    pub fn vanilla() -> Self {
        Self {
            lambda: 0.0,
            belief: BeliefConfig::none(),
            ..Self::default()
        }
    }

    pub fn uses_belief(&self) -> bool {
        self.belief.kind != BeliefKind::None
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Config("gamma must lie in [0, 1)".into()));
            }
        }
        if self.replay_capacity == 0 || self.minibatch == 0 || self.target_sync == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "replay_capacity, minibatch, target_sync and log_every must be positive".into(),
            ));
        }
        for e in [self.explore_start, self.explore_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::Config("exploration rates must lie in [0, 1]".into()));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.belief.validate()?;
        self.attack_train.validate()
    }

    pub fn exploration(&self, step: usize) -> f64 {
        if self.explore_decay_steps == 0 {
            return self.explore_end;
        }
        let frac = (step as f64 / self.explore_decay_steps as f64).min(1.0);
        self.explore_start + frac * (self.explore_end - self.explore_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub delta_r: f64,
    /// Terminal transition: no bootstrap.
    pub done: bool,
}

impl ReplayEntry {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_r.abs() <= 1.0 + 1e-12) {
            return Err(Error::Contract(format!("δ_R {} outside [-1, 1]", self.delta_r)));
        }
        let finite = self.reward.is_finite()
            && self.obs.iter().chain(&self.next_obs).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("replay entry".into()));
        }
        Ok(())
    }
}

/// FIFO replay memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, entry: ReplayEntry) -> Result<()> {
        entry.validate()?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&ReplayEntry> {
        self.entries.get(i)
    }

    /// `k` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, k: usize, rng: &mut Rng) -> Vec<usize> {
        (0..k).map(|_| rng.gen_range(0..self.entries.len())).collect()
    }
}

/// ε-greedy over argmax_a Q(s,a) − λδ(s,a), ties to the lowest index. The
/// random stream is consumed identically whatever λ is.
pub fn dqn_action(
    q: &DiffNet,
    delta: Option<&DiffNet>,
    s: &[f64],
    lambda: f64,
    explore: f64,
    rng: &mut Rng,
) -> Result<usize> {
    let u: f64 = rng.gen();
    let n = q.output_dim();
    if u < explore {
        return Ok(rng.gen_range(0..n));
    }
    Ok(argmax(&dqn_scores(q, delta, s, lambda)?))
}

pub fn dqn_scores(q: &DiffNet, delta: Option<&DiffNet>, s: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mut scores = q.forward(s)?;
    if let (Some(d), true) = (delta, lambda != 0.0) {
        for (sc, dv) in scores.iter_mut().zip(d.forward(s)?) {
            *sc -= lambda * dv;
        }
    }
    Ok(scores)
}

/// Bootstrapped regression targets (q_i, y_i) for one entry.
pub fn dqn_targets(
    entry: &ReplayEntry,
    q_target: &DiffNet,
    delta_target: Option<&DiffNet>,
    gamma: f64,
    mode: QTarget,
) -> Result<(f64, f64)> {
    if entry.done {
        return Ok((entry.reward, entry.delta_r));
    }
    let qn = q_target.forward(&entry.next_obs)?;
    let q_next = match mode {
        QTarget::Max => qn.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        QTarget::Min => qn.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    let d_next = match delta_target {
        Some(d) => d
            .forward(&entry.next_obs)?
            .into_iter()
            .fold(f64::INFINITY, f64::min),
        None => 0.0,
    };
    Ok((entry.reward + gamma * q_next, entry.delta_r + gamma * d_next))
}

/// Networks updated by one minibatch step.
pub struct DqnNets<'a> {
    pub q: &'a mut DiffNet,
    pub q_opt: &'a mut Optimizer,
    pub q_target: &'a DiffNet,
    /// δ network, its optimizer and its target network.
    pub delta: Option<(&'a mut DiffNet, &'a mut Optimizer, &'a DiffNet)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DqnUpdate {
    pub q_loss: f64,
    pub delta_loss: f64,
    pub skipped: bool,
}

/// One gradient step on the mean squared TD errors of the given entries.
/// A batch with non-finite targets is skipped.
pub fn dqn_update(
    nets: DqnNets<'_>,
    batch: &[&ReplayEntry],
    gamma: f64,
    mode: QTarget,
) -> Result<DqnUpdate> {
    if batch.is_empty() {
        return Err(Error::Contract("empty DQN minibatch".into()));
    }
    let delta_target = nets.delta.as_ref().map(|(_, _, t)| *t);
    let mut targets = Vec::with_capacity(batch.len());
    for e in batch {
        let t = dqn_targets(e, nets.q_target, delta_target, gamma, mode)?;
        if !(t.0.is_finite() && t.1.is_finite()) {
            eprintln!("warning: skipping DQN minibatch with non-finite targets");
            return Ok(DqnUpdate {
                skipped: true,
                ..DqnUpdate::default()
            });
        }
        targets.push(t);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut gq = vec![0.0; nets.q.param_count()];
    let mut out = DqnUpdate::default();
    for (e, (qi, _)) in batch.iter().zip(&targets) {
        let (l, g) = nets.q.param_gradient(&e.obs, &Loss::SquaredErrorAt { index: e.action, target: *qi })?;
        out.q_loss += l * scale;
        for (a, v) in gq.iter_mut().zip(g) {
            *a += scale * v;
        }
    }
    nets.q_opt.step(nets.q, &gq)?;
    if let Some((d, opt, _)) = nets.delta {
        let mut gd = vec![0.0; d.param_count()];
        for (e, (_, yi)) in batch.iter().zip(&targets) {
            let (l, g) = d.param_gradient(&e.obs, &Loss::SquaredErrorAt { index: e.action, target: *yi })?;
            out.delta_loss += l * scale;
            for (a, v) in gd.iter_mut().zip(g) {
                *a += scale * v;
            }
        }
        opt.step(d, &gd)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnIterationStats {
    pub iteration: usize,
    pub steps: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_delta_r: f64,
    pub q_loss: f64,
    pub delta_loss: f64,
    pub explore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnCheckpoint {
    pub config: DqnConfig,
    pub seed: u64,
    pub step: usize,
    pub iteration: usize,
    pub gamma: f64,
    pub q: DiffNet,
    pub delta: DiffNet,
    pub q_target: DiffNet,
    pub delta_target: DiffNet,
    pub q_opt: Optimizer,
    pub delta_opt: Optimizer,
    pub replay: ReplayBuffer,
    pub action_rng: Rng,
    pub replay_rng: Rng,
    pub belief_rng: Rng,
    pub env: EnvSnapshot,
    pub obs: Vec<f64>,
    pub episodes_started: u64,
    pub episode_return: f64,
    pub adversary: Adversary,
}

pub struct DqnTrainer {
    state: DqnCheckpoint,
    env: Box<dyn Env>,
}

/// Q network and δ network with the δ output layer zeroed.
pub fn init_q_networks(
    obs_dim: usize,
    n_actions: usize,
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<(DiffNet, DiffNet)> {
    let mut sizes = vec![obs_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(n_actions);
    let q = DiffNet::random(&sizes, activation, Head::Linear, 1.0, &mut rng::stream(seed, "init-q"))?;
    let d = DiffNet::random(&sizes, activation, Head::Linear, 0.0, &mut rng::stream(seed, "init-delta"))?;
    Ok((q, d))
}

impl DqnTrainer {
    pub fn new(config: DqnConfig, mut env: Box<dyn Env>, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = match env.action_space() {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Continuous(_) => {
                return Err(Error::Config("DQN needs a discrete action space".into()))
            }
        };
        let gamma = config.gamma.unwrap_or(env.gamma());
        let activation = config.activation.unwrap_or(Activation::Relu);
        let (q, delta) = init_q_networks(env.obs_dim(), n, &config.hidden, activation, seed)?;
        let mut cfg = OptimizerConfig::adam(config.lr);
        cfg.max_grad_norm = config.max_grad_norm;
        let mut adversary = Adversary::new(config.attack_train.clone())?;
        let episode_seed = rng::derive_seed(seed, "episode-0");
        let obs = env.reset(episode_seed);
        adversary.begin_episode(env.horizon(), episode_seed);
        let state = DqnCheckpoint {
            seed,
            step: 0,
            iteration: 0,
            gamma,
            q_target: q.clone(),
            delta_target: delta.clone(),
            q_opt: Optimizer::new(cfg, q.param_count()),
            delta_opt: Optimizer::new(cfg, delta.param_count()),
            q,
            delta,
            replay: ReplayBuffer::new(config.replay_capacity),
            action_rng: rng::stream(seed, "explore"),
            replay_rng: rng::stream(seed, "replay"),
            belief_rng: rng::stream(seed, "belief"),
            env: env.snapshot(),
            obs,
            episodes_started: 1,
            episode_return: 0.0,
            adversary,
            config,
        };
        Ok(Self { state, env })
    }

    pub fn resume(checkpoint: DqnCheckpoint, mut env: Box<dyn Env>) -> Result<Self> {
        checkpoint.config.validate()?;
        env.restore(&checkpoint.env)?;
        Ok(Self { state: checkpoint, env })
    }

    pub fn checkpoint(&self) -> DqnCheckpoint {
        let mut c = self.state.clone();
        c.env = self.env.snapshot();
        c
    }

    pub fn config(&self) -> &DqnConfig {
        &self.state.config
    }
    pub fn q(&self) -> &DiffNet {
        &self.state.q
    }
    pub fn delta(&self) -> &DiffNet {
        &self.state.delta
    }
    pub fn step_count(&self) -> usize {
        self.state.step
    }
    pub fn replay(&self) -> &ReplayBuffer {
        &self.state.replay
    }
    pub fn is_finished(&self) -> bool {
        self.state.step >= self.state.config.total_steps
    }

    /// The greedy policy softmax(Q − λδ) used for beliefs and attacks.
    pub fn score_policy(&self) -> Result<ScorePolicy> {
        let s = &self.state;
        let delta = self.state.config.uses_belief().then(|| s.delta.clone());
        ScorePolicy::new(s.q.clone(), delta, s.config.lambda)
    }

    /// Runs `log_every` environment steps (fewer at the end of training).
    pub fn iterate(&mut self) -> Result<DqnIterationStats> {
        let cfg = self.state.config.clone();
        let use_delta = cfg.uses_belief();
        let n = cfg.log_every.min(cfg.total_steps.saturating_sub(self.state.step)).max(1);
        let (mut returns, mut delta_sum, mut q_loss, mut d_loss, mut updates) = (Vec::new(), 0.0, 0.0, 0.0, 0usize);
        let bounds = self.env.bounds().clone();
        for _ in 0..n {
            let st = &mut self.state;
            let policy = ScorePolicy::new(st.q.clone(), use_delta.then(|| st.delta.clone()), cfg.lambda)?;
            let s_o = st.adversary.perturb(&policy, self.env.as_mut(), &st.obs)?;
            let explore = cfg.exploration(st.step);
            let a = dqn_action(&st.q, use_delta.then_some(&st.delta), &s_o, cfg.lambda, explore, &mut st.action_rng)?;
            let action = Action::Discrete(a);
            let delta_r = match build_belief(&cfg.belief, &policy, &s_o, &bounds, &mut st.belief_rng, None)? {
                Some(b) => immediate_counterfactual_error(self.env.as_ref(), &s_o, &action, &b)?,
                None => 0.0,
            };
            let out = self.env.step(&action)?;
            st.episode_return += out.reward;
            delta_sum += delta_r;
            let next_clean = out.obs.clone();
            st.replay.push(ReplayEntry {
                obs: s_o,
                action: a,
                reward: out.reward,
                next_obs: next_clean.clone(),
                delta_r,
                done: out.terminal,
            })?;
            st.step += 1;
            if out.done() {
                returns.push(st.episode_return);
                let seed = rng::derive_seed(st.seed, &format!("episode-{}", st.episodes_started));
                st.episodes_started += 1;
                st.obs = self.env.reset(seed);
                st.adversary.begin_episode(self.env.horizon(), seed);
                st.episode_return = 0.0;
            } else {
                st.obs = next_clean;
            }
            if st.step >= cfg.learn_start && st.replay.len() >= cfg.minibatch {
                let idx = st.replay.sample_indices(cfg.minibatch, &mut st.replay_rng);
                let batch: Vec<&ReplayEntry> = idx.iter().map(|&i| st.replay.get(i).unwrap()).collect();
                let nets = DqnNets {
                    q: &mut st.q,
                    q_opt: &mut st.q_opt,
                    q_target: &st.q_target,
                    delta: if use_delta {
                        Some((&mut st.delta, &mut st.delta_opt, &st.delta_target))
                    } else {
                        None
                    },
                };
                let u = dqn_update(nets, &batch, st.gamma, cfg.q_target)?;
                if !u.skipped {
                    q_loss += u.q_loss;
                    d_loss += u.delta_loss;
                    updates += 1;
                }
            }
            if st.step % cfg.target_sync == 0 {
                st.q_target = st.q.clone();
                st.delta_target = st.delta.clone();
            }
        }
        self.state.iteration += 1;
        let u = updates.max(1) as f64;
        Ok(DqnIterationStats {
            iteration: self.state.iteration,
            steps: self.state.step,
            episodes: returns.len(),
            mean_return: if returns.is_empty() {
                0.0
            } else {
                returns.iter().sum::<f64>() / returns.len() as f64
            },
            mean_delta_r: delta_sum / n as f64,
            q_loss: q_loss / u,
            delta_loss: d_loss / u,
            explore: cfg.exploration(self.state.step),
        })
    }
}
