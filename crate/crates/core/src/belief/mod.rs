//! Particle beliefs over the ε-neighbourhood of an observation and the
//! counterfactual reward estimates built from them.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack_pgd, AttackSpec};
use crate::diffnet::{kl_divergence, softmax};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::Rng;
use crate::space::{linf, Action, Bounds};

pub const KL_FLOOR: f64 = 1e-8;
pub const SCORE_CLAMP: f64 = 50.0;
pub const DEFAULT_NEIGHBORHOOD: usize = 10;
pub const DEFAULT_SURROGATE_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeliefSource {
    A2b,
    A3b,
    PointMass,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeliefKind {
    /// No belief: δ_R is identically zero and nothing is sampled.
    None,
    A2b,
    A3b,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefParticles {
    pub states: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Scores before the softmax (z for A3B, KL for A2B).
    pub scores: Vec<f64>,
    pub source: BeliefSource,
}

impl BeliefParticles {
    pub fn point_mass(s: &[f64]) -> Self {
        Self {
            states: vec![s.to_vec()],
            weights: vec![1.0],
            scores: vec![0.0],
            source: BeliefSource::PointMass,
        }
    }

    /// Weights softmax(scores).
    pub fn from_scores(states: Vec<Vec<f64>>, scores: Vec<f64>, source: BeliefSource) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Contract("a belief needs at least one particle".into()));
        }
        if states.len() != scores.len() {
            return Err(Error::dim("belief scores", states.len(), scores.len()));
        }
        if scores.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("belief scores".into()));
        }
        let weights = softmax(&scores);
        Ok(Self {
            states,
            weights,
            scores,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks normalisation and that every particle lies within `eps` of
    /// `center`.
    pub fn validate(&self, center: &[f64], eps: f64) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("belief weights sum to {total}")));
        }
        if let Some(s) = self.states.iter().find(|s| linf(s, center) > eps + 1e-12) {
            return Err(Error::Contract(format!(
                "particle {s:?} outside the {eps}-ball around {center:?}"
            )));
        }
        Ok(())
    }
}

/// `n` uniform draws from the L∞ ball of radius `eps` around `s_o`
/// intersected with the bounds, followed by `s_o` itself.
pub fn sample_neighborhood(
    s_o: &[f64],
    eps: f64,
    n: usize,
    bounds: &Bounds,
    rng: &mut Rng,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n + 1);
    for _ in 0..n {
        if eps == 0.0 {
            out.push(s_o.to_vec());
            continue;
        }
        let x = s_o
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let lo = (c - eps).max(bounds.low[i]);
                let hi = (c + eps).min(bounds.high[i]);
                if lo < hi {
                    rng.gen_range(lo..hi)
                } else {
                    lo.min(hi)
                }
            })
            .collect();
        out.push(x);
    }
    out.push(s_o.to_vec());
    out
}

/// b(s) ∝ exp(KL(π(s) ‖ π(s_o))).
pub fn a2b_weights(
    policy: &dyn Policy,
    s_o: &[f64],
    neighborhood: &[Vec<f64>],
) -> Result<BeliefParticles> {
    let center = policy.distribution(s_o)?;
    let scores = neighborhood
        .iter()
        .map(|s| kl_divergence(&policy.distribution(s)?, &center))
        .collect::<Result<Vec<_>>>()?;
    BeliefParticles::from_scores(neighborhood.to_vec(), scores, BeliefSource::A2b)
}

/// Memoises surrogate attack outputs by quantised particle state. Only valid
/// while the policy is unchanged.
#[derive(Debug, Clone)]
pub struct SurrogateCache {
    resolution: f64,
    map: HashMap<Vec<i64>, Vec<f64>>,
}

impl SurrogateCache {
    pub fn new(resolution: f64) -> Self {
        Self {
            resolution,
            map: HashMap::new(),
        }
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn key(&self, s: &[f64]) -> Vec<i64> {
        s.iter().map(|v| (v / self.resolution).round() as i64).collect()
    }
}

/// z(s) = KL(π(s_o) ‖ π(s)) / max(KL(π(ν(s)) ‖ π(s)), 1e-8), clamped to
/// [0, 50], with ν the surrogate attack; b = softmax(z).
pub fn a3b_scores(
    policy: &dyn Policy,
    s_o: &[f64],
    neighborhood: &[Vec<f64>],
    surrogate: &AttackSpec,
    bounds: &Bounds,
    mut cache: Option<&mut SurrogateCache>,
) -> Result<BeliefParticles> {
    let center = policy.distribution(s_o)?;
    let alpha = surrogate.step_size();
    let mut scores = Vec::with_capacity(neighborhood.len());
    for s in neighborhood {
        let pi_s = policy.distribution(s)?;
        let numerator = kl_divergence(&center, &pi_s)?;
        if numerator == 0.0 {
            scores.push(0.0);
            continue;
        }
        let attacked = match cache.as_deref_mut() {
            Some(c) => {
                let key = c.key(s);
                match c.map.get(&key) {
                    Some(v) => v.clone(),
                    None => {
                        let v = attack_pgd(policy, s, bounds, surrogate.eps, surrogate.steps, alpha, None)?;
                        c.map.insert(key, v.clone());
                        v
                    }
                }
            }
            None => attack_pgd(policy, s, bounds, surrogate.eps, surrogate.steps, alpha, None)?,
        };
        let denominator = kl_divergence(&policy.distribution(&attacked)?, &pi_s)?.max(KL_FLOOR);
        scores.push((numerator / denominator).clamp(0.0, SCORE_CLAMP));
    }
    BeliefParticles::from_scores(neighborhood.to_vec(), scores, BeliefSource::A3b)
}

fn default_eps() -> f64 {
    0.1
}
fn default_n() -> usize {
    DEFAULT_NEIGHBORHOOD
}
fn default_surrogate_steps() -> usize {
    DEFAULT_SURROGATE_STEPS
}
fn default_kind() -> BeliefKind {
    BeliefKind::A3b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefConfig {
    #[serde(default = "default_kind")]
    pub kind: BeliefKind,
    /// Neighbourhood radius, normally the training attack budget.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    /// PGD steps of the A3B surrogate attack.
    #[serde(default = "default_surrogate_steps")]
    pub surrogate_steps: usize,
    /// Quantisation step of the surrogate cache; `None` disables caching.
    #[serde(default)]
    pub cache_resolution: Option<f64>,
}

impl Default for BeliefConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            eps: default_eps(),
            n: default_n(),
            surrogate_steps: default_surrogate_steps(),
            cache_resolution: None,
        }
    }
}

impl BeliefConfig {
    pub fn none() -> Self {
        Self {
            kind: BeliefKind::None,
            ..Self::default()
        }
    }

    pub fn surrogate(&self) -> AttackSpec {
        AttackSpec::pgd(self.eps, self.surrogate_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::Config("belief eps must be >= 0".into()));
        }
        if self.n == 0 || self.surrogate_steps == 0 {
            return Err(Error::Config("belief n and surrogate_steps must be >= 1".into()));
        }
        if let Some(r) = self.cache_resolution {
            if !(r > 0.0) {
                return Err(Error::Config("cache_resolution must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn new_cache(&self) -> Option<SurrogateCache> {
        self.cache_resolution.map(SurrogateCache::new)
    }
}

/// Builds the configured belief around `s_o`; `None` when beliefs are
/// disabled. ε = 0 gives a point mass.
pub fn build_belief(
    config: &BeliefConfig,
    policy: &dyn Policy,
    s_o: &[f64],
    bounds: &Bounds,
    rng: &mut Rng,
    cache: Option<&mut SurrogateCache>,
) -> Result<Option<BeliefParticles>> {
    if config.kind == BeliefKind::None {
        return Ok(None);
    }
    if config.eps == 0.0 {
        return Ok(Some(BeliefParticles::point_mass(s_o)));
    }
    let neighborhood = sample_neighborhood(s_o, config.eps, config.n, bounds, rng);
    let belief = match config.kind {
        BeliefKind::A2b => a2b_weights(policy, s_o, &neighborhood)?,
        BeliefKind::A3b => a3b_scores(policy, s_o, &neighborhood, &config.surrogate(), bounds, cache)?,
        BeliefKind::None => unreachable!(),
    };
    Ok(Some(belief))
}

/// Σ_s b(s) R(s, a).
pub fn belief_reward_estimate(env: &dyn Env, belief: &BeliefParticles, action: &Action) -> Result<f64> {
    let mut total = 0.0;
    for (s, w) in belief.states.iter().zip(&belief.weights) {
        total += w * env.reward_query(s, action)?;
    }
    Ok(total)
}

/// δ_R = R(s_o, a) − Σ_s b(s) R(s, a).
pub fn immediate_counterfactual_error(
    env: &dyn Env,
    s_o: &[f64],
    action: &Action,
    belief: &BeliefParticles,
) -> Result<f64> {
    let observed = env.reward_query(s_o, action)?;
    Ok(observed - belief_reward_estimate(env, belief, action)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, DiffNet, Head};
    use crate::envs::{NavActions, NavConfig, NavEnv};
    use crate::policy::NetPolicy;
    use crate::rng;

    fn nav(dim: usize) -> NavEnv {
        NavEnv::new(NavConfig::new(dim, NavActions::Discrete)).unwrap()
    }

    fn random_policy(seed: u64, dim: usize) -> NetPolicy {
        let mut r = rng::from_seed(seed);
        NetPolicy::new(
            DiffNet::random(&[dim, 8, 2 * dim], Activation::Tanh, Head::CategoricalLogits, 2.0, &mut r)
                .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_radius_samples_collapse() {
        let b = Bounds::uniform(2, -1.0, 1.0);
        let s = [0.3, -0.2];
        let n = sample_neighborhood(&s, 0.0, 10, &b, &mut rng::from_seed(1));
        assert_eq!(n.len(), 11);
        assert!(n.iter().all(|x| x == &s));
    }

    #[test]
    fn samples_stay_in_ball_and_bounds() {
        let b = Bounds::uniform(2, -1.0, 1.0);
        let s = [0.95, -0.3];
        let mut r = rng::from_seed(2);
        for x in sample_neighborhood(&s, 0.1, 500, &b, &mut r) {
            assert!(linf(&x, &s) <= 0.1 + 1e-12);
            assert!(b.contains(&x));
        }
    }

    #[test]
    fn sample_mean_matches_uniform_moments() {
        let b = Bounds::uniform(2, -1.0, 1.0);
        let s = [0.1, -0.4];
        let eps = 0.1;
        let n = 10_000;
        let samples = sample_neighborhood(&s, eps, n, &b, &mut rng::from_seed(3));
        // uniform on [c − ε, c + ε]: variance ε²/3
        let sd = (eps * eps / 3.0 / n as f64).sqrt();
        for i in 0..2 {
            let mean: f64 = samples[..n].iter().map(|x| x[i]).sum::<f64>() / n as f64;
            assert!((mean - s[i]).abs() < 3.0 * sd, "dim {i}: {mean}");
        }
    }

    #[test]
    fn a2b_constant_policy_is_uniform() {
        let net = DiffNet::zeros(&[2, 4], Activation::Tanh, Head::CategoricalLogits).unwrap();
        let p = NetPolicy::new(net).unwrap();
        let b = Bounds::uniform(2, -1.0, 1.0);
        let s = [0.0, 0.0];
        let nb = sample_neighborhood(&s, 0.1, 9, &b, &mut rng::from_seed(4));
        let belief = a2b_weights(&p, &s, &nb).unwrap();
        for w in &belief.weights {
            assert!((w - 0.1).abs() < 1e-15);
        }
        let a3b = a3b_scores(&p, &s, &nb, &AttackSpec::pgd(0.1, 50), &b, None).unwrap();
        assert!(a3b.scores.iter().all(|z| *z == 0.0));
        assert!(a3b.weights.iter().all(|w| (w - 0.1).abs() < 1e-15));
    }

    #[test]
    fn two_particle_softmax_by_hand() {
        let belief = BeliefParticles::from_scores(
            vec![vec![0.0], vec![0.1]],
            vec![0.0, 3f64.ln()],
            BeliefSource::A2b,
        )
        .unwrap();
        assert!((belief.weights[0] - 0.25).abs() < 1e-15);
        assert!((belief.weights[1] - 0.75).abs() < 1e-15);
        let shifted = BeliefParticles::from_scores(
            vec![vec![0.0], vec![0.1]],
            vec![7.5, 7.5 + 3f64.ln()],
            BeliefSource::A2b,
        )
        .unwrap();
        for (a, b) in belief.weights.iter().zip(&shifted.weights) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn a3b_center_particle_scores_zero() {
        let p = random_policy(5, 2);
        let b = Bounds::uniform(2, -1.0, 1.0);
        let s = [0.2, 0.1];
        let nb = sample_neighborhood(&s, 0.1, 6, &b, &mut rng::from_seed(6));
        let belief = a3b_scores(&p, &s, &nb, &AttackSpec::pgd(0.1, 50), &b, None).unwrap();
        assert_eq!(*belief.scores.last().unwrap(), 0.0);
        assert!(belief.scores.iter().all(|z| (0.0..=SCORE_CLAMP).contains(z)));
        belief.validate(&s, 0.1).unwrap();
    }

    /// logit_0(x) = 3x − 1 + 10·relu(x − 0.1), logit_1 = 0. Moving s₂ = 0.1
    /// to s_o = 0 barely changes π while the attack from s₂ pushes right
    /// into the steep region; s₁ = −0.1 is attacked exactly onto s_o.
    #[test]
    fn adversary_unlikely_states_get_lower_a3b_weight() {
        let mut net = DiffNet::zeros(&[1, 2, 2], Activation::Relu, Head::CategoricalLogits).unwrap();
        net.layers_mut()[0].weights = vec![1.0, 1.0];
        net.layers_mut()[0].bias = vec![5.0, -0.1];
        net.layers_mut()[1].weights = vec![3.0, 10.0, 0.0, 0.0];
        net.layers_mut()[1].bias = vec![-16.0, 0.0];
        let p = NetPolicy::new(net).unwrap();
        let b = Bounds::uniform(1, -1.0, 1.0);
        let s_o = [0.0];
        let particles = vec![vec![-0.1], vec![0.1], vec![0.0]];
        let belief = a3b_scores(&p, &s_o, &particles, &AttackSpec::pgd(0.1, 50), &b, None).unwrap();
        let (z1, z2) = (belief.scores[0], belief.scores[1]);
        assert!((z1 - 1.0).abs() < 1e-9, "z1 = {z1}");
        assert!(z2 < z1, "z2 = {z2}");
        assert!(belief.weights[1] < belief.weights[0]);
    }

    #[test]
    fn cache_gives_same_scores() {
        let p = random_policy(7, 2);
        let b = Bounds::uniform(2, -1.0, 1.0);
        let s = [0.0, 0.3];
        let nb = sample_neighborhood(&s, 0.1, 5, &b, &mut rng::from_seed(8));
        let plain = a3b_scores(&p, &s, &nb, &AttackSpec::pgd(0.1, 20), &b, None).unwrap();
        let mut cache = SurrogateCache::new(1e-12);
        let cached = a3b_scores(&p, &s, &nb, &AttackSpec::pgd(0.1, 20), &b, Some(&mut cache)).unwrap();
        let again = a3b_scores(&p, &s, &nb, &AttackSpec::pgd(0.1, 20), &b, Some(&mut cache)).unwrap();
        assert_eq!(plain, cached);
        assert_eq!(cached, again);
        assert!(!cache.is_empty());
    }

    #[test]
    fn reward_estimates() {
        let env = nav(1);
        let a = Action::Discrete(0);
        let pm = BeliefParticles::point_mass(&[0.3]);
        assert_eq!(belief_reward_estimate(&env, &pm, &a).unwrap(), env.reward_query(&[0.3], &a).unwrap());
        assert_eq!(immediate_counterfactual_error(&env, &[0.3], &a, &pm).unwrap(), 0.0);
        // rewards 1 − |s|: 0.2 at s = 0.8, 0.8 at s = 0.2
        let uniform = BeliefParticles::from_scores(
            vec![vec![0.8], vec![0.2]],
            vec![0.0, 0.0],
            BeliefSource::Custom,
        )
        .unwrap();
        assert!((belief_reward_estimate(&env, &uniform, &a).unwrap() - 0.5).abs() < 1e-12);
        // observed 0.9 at s_o = 0.1, belief mean 0.6
        let d = immediate_counterfactual_error(&env, &[0.1], &a, &uniform).unwrap();
        assert!((d - 0.4).abs() < 1e-12);
        let mid = BeliefParticles::from_scores(
            vec![vec![0.5], vec![0.3]],
            vec![0.0, 0.0],
            BeliefSource::Custom,
        )
        .unwrap();
        let d = immediate_counterfactual_error(&env, &[0.1], &a, &mid).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_belief_is_point_mass() {
        let p = random_policy(9, 2);
        let b = Bounds::uniform(2, -1.0, 1.0);
        for kind in [BeliefKind::A2b, BeliefKind::A3b] {
            let cfg = BeliefConfig {
                kind,
                eps: 0.0,
                ..BeliefConfig::default()
            };
            let belief = build_belief(&cfg, &p, &[0.4, 0.4], &b, &mut rng::from_seed(0), None)
                .unwrap()
                .unwrap();
            assert_eq!(belief.source, BeliefSource::PointMass);
            assert_eq!(belief.states, vec![vec![0.4, 0.4]]);
        }
        assert!(build_belief(&BeliefConfig::none(), &p, &[0.0, 0.0], &b, &mut rng::from_seed(0), None)
            .unwrap()
            .is_none());
    }

    /// Ratio estimator against quadrature of ∫R p with p ∝ e^z on a 1-D ball.
    #[test]
    fn ratio_estimator_matches_quadrature() {
        let env = nav(1);
        let a = Action::Discrete(0);
        let (c, eps) = (0.5, 0.1);
        let z = |s: f64| 0.5 + 2.0 * (s - c) / eps;
        let grid = 20_000;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..grid {
            let s = c - eps + (i as f64 + 0.5) * 2.0 * eps / grid as f64;
            num += z(s).exp() * env.reward_query(&[s], &a).unwrap();
            den += z(s).exp();
        }
        let target = num / den;
        let b = Bounds::uniform(1, -1.0, 1.0);
        let mut r = rng::from_seed(11);
        let trials = 1000;
        let n = 100;
        let mut est = Vec::with_capacity(trials);
        for _ in 0..trials {
            let mut states = sample_neighborhood(&[c], eps, n, &b, &mut r);
            states.pop();
            let scores = states.iter().map(|s| z(s[0])).collect();
            let belief = BeliefParticles::from_scores(states, scores, BeliefSource::Custom).unwrap();
            est.push(belief_reward_estimate(&env, &belief, &a).unwrap());
        }
        let mean = est.iter().sum::<f64>() / trials as f64;
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target} (se {se})");
    }
}
