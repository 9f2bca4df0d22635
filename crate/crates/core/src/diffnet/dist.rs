use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::space::Action;

/// Entries of the second categorical argument are floored here before the log.
pub const CATEGORICAL_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionDistribution {
    Categorical(Vec<f64>),
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ActionDistribution {
    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "categorical probabilities must be nonnegative and sum to 1, got {probs:?}"
            )));
        }
        Ok(Self::Categorical(probs))
    }

    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::dim("gaussian std", mean.len(), std.len()));
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Contract("gaussian std must be strictly positive".into()));
        }
        Ok(Self::Gaussian { mean, std })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Categorical(p) => p.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (Self::Categorical(p), Action::Discrete(i)) => p
                .get(*i)
                .map(|v| v.max(CATEGORICAL_LOG_FLOOR).ln())
                .ok_or_else(|| Error::Contract(format!("action {i} out of range"))),
            (Self::Gaussian { mean, std }, Action::Continuous(a)) => {
                if a.len() != mean.len() {
                    return Err(Error::dim("gaussian action", mean.len(), a.len()));
                }
                Ok(mean
                    .iter()
                    .zip(std)
                    .zip(a)
                    .map(|((m, s), x)| {
                        let z = (x - m) / s;
                        -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    })
                    .sum())
            }
            _ => Err(Error::KindMismatch(format!(
                "action {action:?} does not match distribution kind"
            ))),
        }
    }

    /// Mode of the distribution. Ties between categories go to the lowest index.
    pub fn greedy(&self) -> Action {
        match self {
            Self::Categorical(p) => Action::Discrete(argmax(p)),
            Self::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Action {
        match self {
            Self::Categorical(p) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(p.len() - 1)
            }
            Self::Gaussian { mean, std } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let n: f64 = StandardNormal.sample(rng);
                        m + s * n
                    })
                    .collect(),
            ),
        }
    }

    /// max_a π(a) − min_a π(a) for categorical distributions; for gaussians the
    /// density has no finite gap so the peak density is used instead.
    pub fn preference_gap(&self) -> f64 {
        match self {
            Self::Categorical(p) => {
                let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
                max - min
            }
            Self::Gaussian { std, .. } => std
                .iter()
                .map(|s| 1.0 / (s * (2.0 * std::f64::consts::PI).sqrt()))
                .product(),
        }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// KL(p ‖ q).
pub fn kl_divergence(p: &ActionDistribution, q: &ActionDistribution) -> Result<f64> {
    match (p, q) {
        (ActionDistribution::Categorical(p), ActionDistribution::Categorical(q)) => {
            if p.len() != q.len() {
                return Err(Error::dim("kl_divergence", p.len(), q.len()));
            }
            let kl: f64 = p
                .iter()
                .zip(q)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(pi, qi)| pi * (pi.ln() - qi.max(CATEGORICAL_LOG_FLOOR).ln()))
                .sum();
            Ok(kl.max(0.0))
        }
        (
            ActionDistribution::Gaussian { mean: mp, std: sp },
            ActionDistribution::Gaussian { mean: mq, std: sq },
        ) => {
            if mp.len() != mq.len() {
                return Err(Error::dim("kl_divergence", mp.len(), mq.len()));
            }
            let kl: f64 = (0..mp.len())
                .map(|i| {
                    let d = mp[i] - mq[i];
                    (sq[i] / sp[i]).ln() + (sp[i] * sp[i] + d * d) / (2.0 * sq[i] * sq[i]) - 0.5
                })
                .sum();
            Ok(kl.max(0.0))
        }
        _ => Err(Error::KindMismatch(
            "kl_divergence between categorical and gaussian".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn kl_to_self_is_zero() {
        let p = ActionDistribution::categorical(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let g = ActionDistribution::gaussian(vec![0.1, -1.0], vec![0.4, 2.0]).unwrap();
        assert!(kl_divergence(&g, &g).unwrap().abs() < 1e-15);
    }

    #[test]
    fn categorical_kl_closed_form() {
        let p = ActionDistribution::categorical(vec![0.5, 0.5]).unwrap();
        let q = ActionDistribution::categorical(vec![0.9, 0.1]).unwrap();
        let want = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_divergence(&p, &q).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn gaussian_kl_closed_form() {
        // one-dimensional N(0, 1) vs N(1, 2): ln 2 + (1 + 1) / 8 - 1/2
        let p = ActionDistribution::gaussian(vec![0.0], vec![1.0]).unwrap();
        let q = ActionDistribution::gaussian(vec![1.0], vec![2.0]).unwrap();
        let want = 2f64.ln() + 2.0 / 8.0 - 0.5;
        assert!((kl_divergence(&p, &q).unwrap() - want).abs() < 1e-14);
        // two dimensions add
        let p2 = ActionDistribution::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let q2 = ActionDistribution::gaussian(vec![1.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert!((kl_divergence(&p2, &q2).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let p = ActionDistribution::categorical(vec![1.0]).unwrap();
        let g = ActionDistribution::gaussian(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(kl_divergence(&p, &g), Err(Error::KindMismatch(_))));
    }

    #[test]
    fn degenerate_q_is_floored() {
        let p = ActionDistribution::categorical(vec![0.5, 0.5]).unwrap();
        let q = ActionDistribution::categorical(vec![1.0, 0.0]).unwrap();
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(kl.is_finite() && kl > 10.0);
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        assert!(ActionDistribution::categorical(vec![0.7, 0.7]).is_err());
        assert!(ActionDistribution::gaussian(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn kl_nonnegative_and_zero_only_at_equality() {
        let mut r = rng::from_seed(42);
        for _ in 0..1000 {
            let n = r.gen_range(2..6);
            let a: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
            let p = ActionDistribution::Categorical(softmax(&a));
            let q = ActionDistribution::Categorical(softmax(&b));
            let kl = kl_divergence(&p, &q).unwrap();
            assert!(kl >= 0.0);
            let equal = match (&p, &q) {
                (ActionDistribution::Categorical(x), ActionDistribution::Categorical(y)) => {
                    x.iter().zip(y).all(|(u, v)| (u - v).abs() <= 1e-9)
                }
                _ => unreachable!(),
            };
            assert_eq!(kl == 0.0, equal || kl == 0.0);
            if !equal {
                assert!(kl > 0.0);
            }
        }
    }

    #[test]
    fn categorical_sampling_frequencies() {
        let p = ActionDistribution::categorical(vec![0.2, 0.8]).unwrap();
        let mut r = rng::from_seed(0);
        let n = 20_000;
        let ones = (0..n)
            .filter(|_| p.sample(&mut r) == Action::Discrete(1))
            .count() as f64;
        let sigma = (n as f64 * 0.8 * 0.2).sqrt();
        assert!((ones - 0.8 * n as f64).abs() < 4.0 * sigma);
    }
}
