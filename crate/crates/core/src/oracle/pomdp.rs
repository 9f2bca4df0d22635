use std::path::Path;

use rand::Rng as _;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_STATES: usize = 12;
pub const MAX_ACTIONS: usize = 4;
pub const ROW_TOL: f64 = 1e-12;

/// A finite POMDP whose observation space equals its state space, together
/// with a fixed adversary ν[s][o] and a defender policy π[o][a].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePomdp {
    /// T[s][a][s′]
    pub transition: Vec<Vec<Vec<f64>>>,
    /// R[s][a] in [0, 1]
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    /// ν[s][o]: probability of observing o in true state s.
    pub adversary: Vec<Vec<f64>>,
    /// neighborhoods[s]: observations the adversary may emit in state s.
    pub neighborhoods: Vec<Vec<usize>>,
    /// π[o][a]
    pub policy: Vec<Vec<f64>>,
    /// Optional 1-D embedding of the states, strictly increasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactBelief(pub Vec<f64>);

impl ExactBelief {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_row(&p, "belief")?;
        Ok(Self(p))
    }

    pub fn point(n: usize, s: usize) -> Self {
        let mut p = vec![0.0; n];
        p[s] = 1.0;
        Self(p)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(i, _)| i)
    }
}

pub(crate) fn check_row(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Contract(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::Contract(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

pub(crate) fn normalize_row(p: &mut [f64]) {
    let sum: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= sum;
    }
}

impl FinitePomdp {
    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn n_actions(&self) -> usize {
        self.reward.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        let m = self.n_actions();
        if n == 0 || n > MAX_STATES {
            return Err(Error::Contract(format!("state count {n} outside 1..={MAX_STATES}")));
        }
        if m == 0 || m > MAX_ACTIONS {
            return Err(Error::Contract(format!("action count {m} outside 1..={MAX_ACTIONS}")));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Contract(format!("gamma {} must lie in [0, 1)", self.gamma)));
        }
        let dims = [
            ("transition", self.transition.len()),
            ("adversary", self.adversary.len()),
            ("neighborhoods", self.neighborhoods.len()),
            ("policy", self.policy.len()),
        ];
        for (what, len) in dims {
            if len != n {
                return Err(Error::Contract(format!("{what} has {len} rows for {n} states")));
            }
        }
        for s in 0..n {
            if self.reward[s].len() != m || self.transition[s].len() != m || self.policy[s].len() != m {
                return Err(Error::Contract(format!("row {s} has the wrong action count")));
            }
            if self.reward[s].iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::Contract(format!("rewards of state {s} leave [0, 1]")));
            }
            for a in 0..m {
                if self.transition[s][a].len() != n {
                    return Err(Error::Contract(format!("T[{s}][{a}] has the wrong length")));
                }
                check_row(&self.transition[s][a], &format!("T[{s}][{a}]"))?;
            }
            check_row(&self.policy[s], &format!("pi[{s}]"))?;
            if self.adversary[s].len() != n {
                return Err(Error::Contract(format!("nu[{s}] has the wrong length")));
            }
            check_row(&self.adversary[s], &format!("nu[{s}]"))?;
            if self.neighborhoods[s].iter().any(|o| *o >= n) {
                return Err(Error::Contract(format!("neighborhood of {s} names an unknown state")));
            }
            for (o, p) in self.adversary[s].iter().enumerate() {
                if *p > 0.0 && !self.neighborhoods[s].contains(&o) {
                    return Err(Error::Contract(format!(
                        "nu[{s}] puts mass on {o}, outside the neighborhood of {s}"
                    )));
                }
            }
        }
        if let Some(x) = &self.positions {
            if x.len() != n {
                return Err(Error::dim("positions", n, x.len()));
            }
            if x.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Contract("positions must be strictly increasing".into()));
            }
        }
        Ok(())
    }

    /// Same instance with the adversary replaced by the identity.
    pub fn with_identity_adversary(&self) -> Self {
        let n = self.n_states();
        let mut out = self.clone();
        out.adversary = (0..n).map(|s| ExactBelief::point(n, s).0).collect();
        for (s, nb) in out.neighborhoods.iter_mut().enumerate() {
            if !nb.contains(&s) {
                nb.push(s);
            }
        }
        out
    }

    /// Posterior over the true state after observing `o` under a uniform
    /// prior: b(s) ∝ ν(o|s).
    pub fn observation_posterior(&self, o: usize) -> Result<ExactBelief> {
        let mut b: Vec<f64> = self.adversary.iter().map(|row| row[o]).collect();
        let z: f64 = b.iter().sum();
        if z <= 0.0 {
            return Err(Error::ImpossibleObservation { observation: o });
        }
        for v in b.iter_mut() {
            *v /= z;
        }
        Ok(ExactBelief(b))
    }

    /// Expected reward R(b, a).
    pub fn belief_reward(&self, b: &ExactBelief, a: usize) -> f64 {
        b.probs().iter().zip(&self.reward).map(|(p, r)| p * r[a]).sum()
    }

    /// ε used by distance-based bounds: the largest |x_s − x_o| with
    /// o in the neighborhood of s.
    pub fn neighborhood_radius(&self) -> Option<f64> {
        let x = self.positions.as_ref()?;
        let mut r: f64 = 0.0;
        for (s, nb) in self.neighborhoods.iter().enumerate() {
            for &o in nb {
                r = r.max((x[s] - x[o]).abs());
            }
        }
        Some(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: Self = serde_json::from_slice(&crate::error::read_input(path.as_ref())?)?;
        p.validate()?;
        Ok(p)
    }
}

fn dirichlet_row(rng: &mut Rng, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut row = Dirichlet::new(&vec![1.0; n]).expect("n >= 2").sample(rng);
    normalize_row(&mut row);
    row
}

fn index_neighborhoods(n: usize, radius: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|s| (s.saturating_sub(radius)..=(s + radius).min(n - 1)).collect())
        .collect()
}

/// Random adversary over each state's neighborhood with Dirichlet(1) weights.
fn random_adversary(rng: &mut Rng, neighborhoods: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let n = neighborhoods.len();
    neighborhoods
        .iter()
        .map(|nb| {
            let w = dirichlet_row(rng, nb.len());
            let mut row = vec![0.0; n];
            for (o, p) in nb.iter().zip(w) {
                row[*o] = p;
            }
            row
        })
        .collect()
}

/// Random instance: Dirichlet(1) transition, adversary and policy rows,
/// uniform rewards, neighborhoods = index distance ≤ 1.
pub fn random_instance(rng: &mut Rng, n_states: usize, n_actions: usize, gamma: f64) -> Result<FinitePomdp> {
    let neighborhoods = index_neighborhoods(n_states, 1);
    let p = FinitePomdp {
        transition: (0..n_states)
            .map(|_| (0..n_actions).map(|_| dirichlet_row(rng, n_states)).collect())
            .collect(),
        reward: (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen::<f64>()).collect())
            .collect(),
        gamma,
        adversary: random_adversary(rng, &neighborhoods),
        neighborhoods,
        policy: (0..n_states).map(|_| dirichlet_row(rng, n_actions)).collect(),
        positions: None,
    };
    p.validate()?;
    Ok(p)
}

/// Random walk on an evenly spaced line: each action moves one cell left,
/// stays or moves right with Dirichlet(1) probabilities (reflecting at
/// the ends). Neighborhoods are adjacent cells, so ε equals `spacing`.
pub fn random_line_instance(
    rng: &mut Rng,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    spacing: f64,
) -> Result<FinitePomdp> {
    let neighborhoods = index_neighborhoods(n_states, 1);
    let transition = (0..n_states)
        .map(|s| {
            (0..n_actions)
                .map(|_| {
                    let w = dirichlet_row(rng, 3);
                    let mut row = vec![0.0; n_states];
                    row[s.saturating_sub(1)] += w[0];
                    row[s] += w[1];
                    row[(s + 1).min(n_states - 1)] += w[2];
                    normalize_row(&mut row);
                    row
                })
                .collect()
        })
        .collect();
    let p = FinitePomdp {
        transition,
        reward: (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen::<f64>()).collect())
            .collect(),
        gamma,
        adversary: random_adversary(rng, &neighborhoods),
        neighborhoods,
        policy: (0..n_states).map(|_| dirichlet_row(rng, n_actions)).collect(),
        positions: Some((0..n_states).map(|i| i as f64 * spacing).collect()),
    };
    p.validate()?;
    Ok(p)
}

/// Deterministic rightward drift on a fine line with a reward ramp and an
/// adversary that reports a uniformly chosen adjacent cell. Next-state
/// distributions from neighboring cells have disjoint supports one cell
/// apart, which is where a total-variation bound is loose and a
/// Wasserstein bound is not.
pub fn shift_chain_instance(n_states: usize, spacing: f64, gamma: f64) -> Result<FinitePomdp> {
    let neighborhoods = index_neighborhoods(n_states, 1);
    let transition = (0..n_states)
        .map(|s| vec![ExactBelief::point(n_states, (s + 1).min(n_states - 1)).0])
        .collect();
    let reward = (0..n_states)
        .map(|s| vec![s as f64 / (n_states - 1).max(1) as f64])
        .collect();
    let adversary = neighborhoods
        .iter()
        .map(|nb| {
            let mut row = vec![0.0; n_states];
            for &o in nb {
                row[o] = 1.0 / nb.len() as f64;
            }
            row
        })
        .collect();
    let p = FinitePomdp {
        transition,
        reward,
        gamma,
        adversary,
        neighborhoods,
        policy: vec![vec![1.0]; n_states],
        positions: Some((0..n_states).map(|i| i as f64 * spacing).collect()),
    };
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn generated_instances_validate_and_round_trip() {
        let mut r = rng::from_seed(1);
        let p = random_instance(&mut r, 5, 3, 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        assert_eq!(FinitePomdp::load(&path).unwrap(), p);
        random_line_instance(&mut r, 8, 2, 0.5, 0.1).unwrap();
        shift_chain_instance(12, 0.1, 0.9).unwrap();
    }

    #[test]
    fn validation_rejects_bad_instances() {
        let mut r = rng::from_seed(2);
        let good = random_instance(&mut r, 4, 2, 0.9).unwrap();
        let mut p = good.clone();
        p.transition[0][0][0] += 1e-9;
        assert!(p.validate().is_err());
        let mut p = good.clone();
        p.gamma = 1.0;
        assert!(p.validate().is_err());
        let mut p = good.clone();
        p.adversary[0] = vec![0.0, 0.0, 0.0, 1.0];
        assert!(p.validate().is_err());
        let mut p = good;
        p.reward[1][1] = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn posterior_under_uniform_prior() {
        let p = shift_chain_instance(4, 0.1, 0.5).unwrap();
        let b = p.observation_posterior(0).unwrap();
        assert!((b.0[0] - 0.6).abs() < 1e-15 && (b.0[1] - 0.4).abs() < 1e-15);
    }
}
