use serde::{Deserialize, Serialize};

use super::gradient::{attack_fgsm, attack_mad, attack_pgd};
use super::spec::{AttackKind, AttackSpec};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::Rng;
use crate::space::Bounds;

/// Runs a myopic (stateless) attack described by `spec`.
pub fn apply_myopic(
    spec: &AttackSpec,
    policy: &dyn Policy,
    s: &[f64],
    bounds: &Bounds,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let alpha = spec.step_size();
    match spec.kind {
        AttackKind::Identity => Ok(s.to_vec()),
        AttackKind::Fgsm => attack_fgsm(policy, s, bounds, spec.eps),
        AttackKind::Pgd => {
            let start = if spec.random_start { Some(rng) } else { None };
            attack_pgd(policy, s, bounds, spec.eps, spec.steps, alpha, start)
        }
        AttackKind::Mad => attack_mad(policy, s, bounds, spec.eps, spec.steps, alpha, rng),
        other => Err(Error::AttackSpec {
            spec: spec.to_string(),
            reason: format!("{} is not a myopic attack", other.name()),
        }),
    }
}

/// Per-episode step budget of the timed attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBudget {
    pub used: usize,
    pub max: usize,
}

impl StepBudget {
    /// floor(fraction · horizon) attackable steps.
    pub fn for_episode(fraction: f64, horizon: usize) -> Self {
        Self {
            used: 0,
            max: (fraction * horizon as f64 + 1e-9).floor() as usize,
        }
    }

    pub fn unlimited() -> Self {
        Self {
            used: 0,
            max: usize::MAX,
        }
    }
}

/// Attacks only when the preference gap max π − min π exceeds `threshold`
/// and budget remains.
pub fn attack_timed(
    policy: &dyn Policy,
    s: &[f64],
    bounds: &Bounds,
    base: &AttackSpec,
    threshold: f64,
    budget: &mut StepBudget,
    rng: &mut Rng,
) -> Result<(Vec<f64>, bool)> {
    if budget.used >= budget.max {
        return Ok((s.to_vec(), false));
    }
    let gap = policy.distribution(s)?.preference_gap();
    if gap > threshold {
        budget.used += 1;
        Ok((apply_myopic(base, policy, s, bounds, rng)?, true))
    } else {
        Ok((s.to_vec(), false))
    }
}

/// Candidate set {no attack, base attack, s ± ε e_i}, truncated to `branches`.
pub fn critical_point_candidates(
    policy: &dyn Policy,
    s: &[f64],
    bounds: &Bounds,
    base: &AttackSpec,
    branches: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![s.to_vec()];
    if branches <= 1 {
        return Ok(out);
    }
    out.push(apply_myopic(base, policy, s, bounds, rng)?);
    'axes: for i in 0..s.len() {
        for sign in [1.0, -1.0] {
            if out.len() >= branches {
                break 'axes;
            }
            let mut x = s.to_vec();
            x[i] += sign * base.eps;
            bounds.project_ball(&mut x, s, base.eps);
            out.push(x);
        }
    }
    out.truncate(branches);
    Ok(out)
}

/// Undiscounted victim return over `depth` steps when the first observation
/// is `first_obs` and later observations are clean. The env is restored.
pub fn lookahead_return(
    policy: &dyn Policy,
    env: &mut dyn Env,
    first_obs: &[f64],
    depth: usize,
) -> Result<f64> {
    let snapshot = env.snapshot();
    let mut obs = first_obs.to_vec();
    let mut total = 0.0;
    let mut result = Ok(());
    for _ in 0..depth {
        let action = match policy.greedy(&obs) {
            Ok(a) => a,
            Err(e) => {
                result = Err(e);
                break;
            }
        };
        match env.step(&action) {
            Ok(out) => {
                total += out.reward;
                if out.done() {
                    break;
                }
                obs = out.obs;
            }
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    env.restore(&snapshot)?;
    result.map(|_| total)
}

/// Picks the candidate perturbation whose `depth`-step lookahead return is
/// lowest (earliest on ties). Depth 0 falls back to the base attack.
#[allow(clippy::too_many_arguments)]
pub fn attack_critical_point(
    policy: &dyn Policy,
    env: &mut dyn Env,
    s: &[f64],
    base: &AttackSpec,
    depth: usize,
    branches: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let bounds = env.bounds().clone();
    if depth == 0 {
        return apply_myopic(base, policy, s, &bounds, rng);
    }
    let candidates = critical_point_candidates(policy, s, &bounds, base, branches, rng)?;
    if candidates.len() == 1 {
        return Ok(candidates.into_iter().next().unwrap());
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let ret = lookahead_return(policy, env, c, depth)?;
        if best.map_or(true, |(b, _)| ret < b) {
            best = Some((ret, i));
        }
    }
    Ok(candidates[best.unwrap().1].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, DiffNet, Head};
    use crate::envs::{GridConfig, GridEnv};
    use crate::policy::NetPolicy;
    use crate::rng;

    fn random_policy(seed: u64) -> NetPolicy {
        let mut r = rng::from_seed(seed);
        NetPolicy::new(
            DiffNet::random(&[2, 8, 4], Activation::Tanh, Head::CategoricalLogits, 2.0, &mut r)
                .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn timed_with_unit_threshold_never_attacks() {
        let p = random_policy(3);
        let b = Bounds::uniform(2, -1.0, 1.0);
        let base = AttackSpec::pgd(0.1, 10);
        let mut budget = StepBudget::unlimited();
        let mut r = rng::from_seed(1);
        for i in 0..50 {
            let s = [i as f64 / 50.0 - 0.5, 0.2];
            let (o, hit) = attack_timed(&p, &s, &b, &base, 1.0, &mut budget, &mut r).unwrap();
            assert!(!hit);
            assert_eq!(o, s);
        }
    }

    #[test]
    fn timed_with_zero_threshold_equals_base_attack() {
        let p = random_policy(4);
        let b = Bounds::uniform(2, -1.0, 1.0);
        let base = AttackSpec::pgd(0.1, 10);
        let mut budget = StepBudget::unlimited();
        let mut r = rng::from_seed(1);
        for i in 0..20 {
            let s = [i as f64 / 20.0 - 0.5, -0.3];
            let (o, hit) = attack_timed(&p, &s, &b, &base, 0.0, &mut budget, &mut r).unwrap();
            assert!(hit);
            assert_eq!(o, apply_myopic(&base, &p, &s, &b, &mut rng::from_seed(1)).unwrap());
        }
    }

    #[test]
    fn budget_is_floor_of_fraction() {
        assert_eq!(StepBudget::for_episode(0.3, 100).max, 30);
        assert_eq!(StepBudget::for_episode(0.25, 10).max, 2);
        assert_eq!(StepBudget::for_episode(0.0, 10).max, 0);
    }

    #[test]
    fn critical_point_reductions() {
        let mut env = GridEnv::new(GridConfig::cliff(11, 3)).unwrap();
        env.reset(0);
        let p = random_policy(5);
        let s = env.state();
        let base = AttackSpec::pgd(0.1, 10);
        let mut r = rng::from_seed(2);
        let n0 = attack_critical_point(&p, &mut env, &s, &base, 0, 8, &mut r).unwrap();
        let direct = apply_myopic(&base, &p, &s, env.bounds(), &mut rng::from_seed(2)).unwrap();
        assert_eq!(n0, direct);
        let one = attack_critical_point(&p, &mut env, &s, &base, 3, 1, &mut r).unwrap();
        assert_eq!(one, s);
    }

    #[test]
    fn lookahead_leaves_env_untouched() {
        let mut env = GridEnv::new(GridConfig::cliff(11, 3)).unwrap();
        env.reset(7);
        let before = env.snapshot();
        let p = random_policy(6);
        let s = env.state();
        lookahead_return(&p, &mut env, &s, 5).unwrap();
        assert_eq!(env.snapshot().kind(), before.kind());
        assert_eq!(env.state(), s);
    }
}
