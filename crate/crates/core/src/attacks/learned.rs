use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{PpoConfig, PpoTrainer};
use crate::belief::BeliefConfig;
use crate::diffnet::{argmax, DiffNet};
use crate::envs::{Env, EnvConfig, EnvSnapshot, StepOutcome};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::space::{Action, ActionSpace, Bounds};

use super::AttackSpec;

/// The direction set {0, +εe₀, −εe₀, +εe₁, …}, truncated to the first `m`.
pub fn perturbation_directions(dim: usize, eps: f64, m: usize) -> Result<Vec<Vec<f64>>> {
    if m == 0 || m > 2 * dim + 1 {
        return Err(Error::Config(format!(
            "a {dim}-dimensional observation admits 1..={} directions, got {m}",
            2 * dim + 1
        )));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be finite and >= 0, got {eps}")));
    }
    let mut out = vec![vec![0.0; dim]];
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; dim];
            d[i] = sign * eps;
            out.push(d);
        }
    }
    out.truncate(m);
    Ok(out)
}

fn apply_direction(s: &[f64], d: &[f64], bounds: &Bounds) -> Vec<f64> {
    let mut o: Vec<f64> = s.iter().zip(d).map(|(a, b)| a + b).collect();
    bounds.clip(&mut o);
    o
}

/// A categorical policy over fixed perturbation directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedAdversary {
    pub eps: f64,
    pub directions: Vec<Vec<f64>>,
    pub net: DiffNet,
}

impl LearnedAdversary {
    pub fn new(eps: f64, directions: Vec<Vec<f64>>, net: DiffNet) -> Result<Self> {
        if net.output_dim() != directions.len() {
            return Err(Error::dim("learned adversary directions", net.output_dim(), directions.len()));
        }
        if directions.iter().any(|d| d.len() != net.input_dim()) {
            return Err(Error::Config("direction length differs from the observation size".into()));
        }
        Ok(Self { eps, directions, net })
    }

    /// Applies the most likely direction.
    pub fn perturb(&self, s: &[f64], bounds: &Bounds) -> Result<Vec<f64>> {
        let logits = self.net.forward(s)?;
        Ok(apply_direction(s, &self.directions[argmax(&logits)], bounds))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let adv: Self = serde_json::from_slice(&crate::error::read_input(path.as_ref())?)?;
        Self::new(adv.eps, adv.directions, adv.net)
    }

    pub fn spec(&self, path: &str) -> AttackSpec {
        let mut spec = AttackSpec::new(super::AttackKind::Learned);
        spec.eps = self.eps;
        spec.directions = self.directions.len();
        spec.path = Some(path.to_string());
        spec
    }
}

/// The victim's environment seen from the adversary: actions pick a
/// perturbation direction, the frozen victim acts greedily on the perturbed
/// observation, and the adversary earns 1 − victim reward.
pub struct AdversaryEnv {
    inner: Box<dyn Env>,
    victim: Arc<dyn Policy>,
    directions: Vec<Vec<f64>>,
    obs: Vec<f64>,
}

impl AdversaryEnv {
    pub fn new(inner: Box<dyn Env>, victim: Arc<dyn Policy>, directions: Vec<Vec<f64>>) -> Result<Self> {
        if victim.obs_dim() != inner.obs_dim() {
            return Err(Error::dim("victim observation", inner.obs_dim(), victim.obs_dim()));
        }
        if directions.is_empty() || directions.iter().any(|d| d.len() != inner.obs_dim()) {
            return Err(Error::Config("directions must be nonempty and match the observation size".into()));
        }
        let obs = inner.state();
        Ok(Self {
            inner,
            victim,
            directions,
            obs,
        })
    }

    fn direction(&self, action: &Action) -> Result<&[f64]> {
        match action {
            Action::Discrete(i) if *i < self.directions.len() => Ok(&self.directions[*i]),
            _ => Err(Error::Contract(format!("adversary action {action:?} is not a direction index"))),
        }
    }
}

impl Env for AdversaryEnv {
    fn name(&self) -> &'static str {
        "adversary"
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn bounds(&self) -> &Bounds {
        self.inner.bounds()
    }
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.directions.len())
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.obs = self.inner.reset(seed);
        self.obs.clone()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let o = apply_direction(&self.obs, self.direction(action)?, self.inner.bounds());
        let victim_action = self.victim.greedy(&o)?;
        let mut out = self.inner.step(&victim_action)?;
        out.reward = 1.0 - out.reward;
        self.obs = out.obs.clone();
        Ok(out)
    }

    fn reward_query(&self, state: &[f64], action: &Action) -> Result<f64> {
        let o = apply_direction(state, self.direction(action)?, self.inner.bounds());
        let victim_action = self.victim.greedy(&o)?;
        Ok(1.0 - self.inner.reward_query(state, &victim_action)?)
    }

    fn state(&self) -> Vec<f64> {
        self.inner.state()
    }

    fn snapshot(&self) -> EnvSnapshot {
        self.inner.snapshot()
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()> {
        self.inner.restore(snapshot)?;
        self.obs = self.inner.state();
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn Env> {
        Box::new(Self {
            inner: self.inner.box_clone(),
            victim: Arc::clone(&self.victim),
            directions: self.directions.clone(),
            obs: self.obs.clone(),
        })
    }
}

/// Trains a direction-picking adversary against a frozen victim with PPO.
/// The PPO config's belief and training attack are ignored.
pub fn train_learned_adversary(
    victim: Arc<dyn Policy>,
    env: &EnvConfig,
    eps: f64,
    m: usize,
    ppo: &PpoConfig,
    seed: u64,
) -> Result<LearnedAdversary> {
    let dim = env.build()?.obs_dim();
    let directions = perturbation_directions(dim, eps, m)?;
    let mut config = ppo.clone();
    config.lambda = 0.0;
    config.belief = BeliefConfig::none();
    config.attack_train = AttackSpec::identity();
    let factory = |_: usize| -> Result<Box<dyn Env>> {
        Ok(Box::new(AdversaryEnv::new(env.build()?, Arc::clone(&victim), directions.clone())?))
    };
    let mut trainer = PpoTrainer::new(config, &factory, seed)?;
    while !trainer.is_finished() {
        trainer.iterate()?;
    }
    LearnedAdversary::new(eps, directions, trainer.policy().clone())
}
