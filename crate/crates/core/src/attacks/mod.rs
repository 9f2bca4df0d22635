//! L∞-bounded observation adversaries.
//!
//! Every attack maps a clean observation `s` to some `o` with
//! ‖o − s‖∞ ≤ ε inside the observation bounds. ε = 0 returns `s` unchanged.

mod gradient;
pub mod learned;
mod spec;
mod strategic;

pub use gradient::{
    attack_fgsm, attack_identity, attack_mad, attack_pgd, projected_ascent, surrogate_loss,
};
pub use learned::{perturbation_directions, train_learned_adversary, AdversaryEnv, LearnedAdversary};
pub use spec::{AttackKind, AttackSpec, Surrogate, DEFAULT_EPS, DEFAULT_MAD_EPS, DEFAULT_STEPS};
pub use strategic::{
    apply_myopic, attack_critical_point, attack_timed, critical_point_candidates,
    lookahead_return, StepBudget,
};

use serde::{Deserialize, Serialize};

use crate::envs::Env;
use crate::error::Result;
use crate::policy::Policy;
use crate::rng::{self, Rng};

/// Stateful adversary used inside rollouts and evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    spec: AttackSpec,
    learned: Option<LearnedAdversary>,
    rng: Rng,
    budget: StepBudget,
    attacked: usize,
}

impl Adversary {
    /// Loads the learned adversary checkpoint when the spec names one.
    pub fn new(spec: AttackSpec) -> Result<Self> {
        spec.validate()?;
        let learned = match (&spec.kind, &spec.path) {
            (AttackKind::Learned, Some(path)) => Some(LearnedAdversary::load(path)?),
            _ => None,
        };
        Ok(Self::assemble(spec, learned))
    }

    pub fn with_learned(spec: AttackSpec, learned: LearnedAdversary) -> Self {
        Self::assemble(spec, Some(learned))
    }

    pub fn identity() -> Self {
        Self::assemble(AttackSpec::identity(), None)
    }

    fn assemble(spec: AttackSpec, learned: Option<LearnedAdversary>) -> Self {
        Self {
            spec,
            learned,
            rng: rng::from_seed(0),
            budget: StepBudget::unlimited(),
            attacked: 0,
        }
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    /// Resets the per-episode budget and random stream.
    pub fn begin_episode(&mut self, horizon: usize, episode_seed: u64) {
        self.rng = rng::stream(episode_seed, "attack");
        self.budget = StepBudget::for_episode(self.spec.budget, horizon);
        self.attacked = 0;
    }

    /// Steps perturbed so far in this episode (timed attacks only count
    /// triggered steps; other non-identity attacks count every step).
    pub fn attacked_steps(&self) -> usize {
        self.attacked
    }

    pub fn perturb(
        &mut self,
        policy: &dyn Policy,
        env: &mut dyn Env,
        obs: &[f64],
    ) -> Result<Vec<f64>> {
        let bounds = env.bounds().clone();
        let out = match self.spec.kind {
            AttackKind::Identity => return Ok(obs.to_vec()),
            AttackKind::Fgsm | AttackKind::Pgd | AttackKind::Mad => {
                apply_myopic(&self.spec, policy, obs, &bounds, &mut self.rng)?
            }
            AttackKind::Timed => {
                let base = self.spec.base_spec();
                let (o, hit) = attack_timed(
                    policy,
                    obs,
                    &bounds,
                    &base,
                    self.spec.threshold,
                    &mut self.budget,
                    &mut self.rng,
                )?;
                if !hit {
                    return Ok(o);
                }
                o
            }
            AttackKind::CriticalPoint => {
                let base = self.spec.base_spec();
                attack_critical_point(
                    policy,
                    env,
                    obs,
                    &base,
                    self.spec.depth,
                    self.spec.branches,
                    &mut self.rng,
                )?
            }
            AttackKind::Learned => match &self.learned {
                Some(l) => l.perturb(obs, &bounds)?,
                None => {
                    return Err(crate::Error::AttackSpec {
                        spec: self.spec.to_string(),
                        reason: "no learned adversary loaded".into(),
                    })
                }
            },
        };
        self.attacked += 1;
        Ok(out)
    }
}
