use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Observation the agent acted on.
    pub obs: Vec<f64>,
    pub action: Action,
    pub log_prob: f64,
    pub reward: f64,
    /// V_φ(s_o).
    pub value: f64,
    /// δ_ψ(s_o).
    pub delta_value: f64,
    /// Immediate counterfactual error δ_R.
    pub delta_r: f64,
}

/// One contiguous piece of an episode. A trajectory either ends in a
/// terminal state (bootstraps are zero) or is cut off, in which case the
/// bootstraps hold V_φ and δ_ψ at the next observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub terminal: bool,
    pub bootstrap_value: f64,
    pub bootstrap_delta: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    fn tails(&self) -> (f64, f64) {
        if self.terminal {
            (0.0, 0.0)
        } else {
            (self.bootstrap_value, self.bootstrap_delta)
        }
    }
}

/// x_t = u_t + γ x_{t+1}, run backwards from `tail`.
pub fn discounted_to_go(terms: &[f64], gamma: f64, tail: f64) -> Vec<f64> {
    let mut out = vec![0.0; terms.len()];
    let mut acc = tail;
    for t in (0..terms.len()).rev() {
        acc = terms[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// (R̂_t, δ̂_t) per step.
pub fn compute_to_go(trajectory: &Trajectory, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let (tv, td) = trajectory.tails();
    let rewards: Vec<f64> = trajectory.steps.iter().map(|s| s.reward).collect();
    let deltas: Vec<f64> = trajectory.steps.iter().map(|s| s.delta_r).collect();
    (
        discounted_to_go(&rewards, gamma, tv),
        discounted_to_go(&deltas, gamma, td),
    )
}

/// Generalised advantage estimates over the TD residuals
/// r_t + γV(s_{t+1}) − V(s_t).
pub fn gae_advantage(trajectory: &Trajectory, gamma: f64, lambda_gae: f64) -> Vec<f64> {
    let (tail, _) = trajectory.tails();
    let n = trajectory.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n {
            trajectory.steps[t + 1].value
        } else {
            tail
        };
        let s = &trajectory.steps[t];
        let td = s.reward + gamma * next - s.value;
        acc = td + gamma * lambda_gae * acc;
        adv[t] = acc;
    }
    adv
}

/// A_c = Â − λ δ̂.
pub fn acoe_advantage(advantage: &[f64], delta_to_go: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if advantage.len() != delta_to_go.len() {
        return Err(Error::dim("C-ACoE advantage", advantage.len(), delta_to_go.len()));
    }
    Ok(advantage
        .iter()
        .zip(delta_to_go)
        .map(|(a, d)| a - lambda * d)
        .collect())
}

/// Shifts to mean 0 and scales to unit (population) standard deviation.
/// A batch with zero spread is only centred.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-12 {
            *v /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(rewards: &[f64], values: &[f64], deltas: &[f64], terminal: bool, bv: f64, bd: f64) -> Trajectory {
        Trajectory {
            steps: rewards
                .iter()
                .zip(values)
                .zip(deltas)
                .map(|((r, v), d)| StepRecord {
                    obs: vec![0.0],
                    action: Action::Discrete(0),
                    log_prob: 0.0,
                    reward: *r,
                    value: *v,
                    delta_value: 0.0,
                    delta_r: *d,
                })
                .collect(),
            terminal,
            bootstrap_value: bv,
            bootstrap_delta: bd,
        }
    }

    #[test]
    fn single_step_to_go() {
        let t = traj(&[0.7], &[0.1], &[0.2], true, 9.0, 9.0);
        assert_eq!(compute_to_go(&t, 0.9), (vec![0.7], vec![0.2]));
    }

    #[test]
    fn zero_discount_to_go_is_immediate() {
        let t = traj(&[0.1, 0.5, 0.3], &[0.0; 3], &[0.2, -0.1, 0.4], false, 5.0, 5.0);
        let (r, d) = compute_to_go(&t, 0.0);
        assert_eq!(r, vec![0.1, 0.5, 0.3]);
        assert_eq!(d, vec![0.2, -0.1, 0.4]);
    }

    #[test]
    fn three_step_return() {
        let t = traj(&[0.1, 0.2, 1.0], &[0.0; 3], &[0.0; 3], true, 0.0, 0.0);
        let (r, _) = compute_to_go(&t, 0.9);
        assert!((r[0] - (0.1 + 0.9 * 0.2 + 0.81 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn truncated_bootstraps() {
        let t = traj(&[0.5], &[0.0], &[0.1], false, 2.0, 0.4);
        let (r, d) = compute_to_go(&t, 0.5);
        assert_eq!(r, vec![1.5]);
        assert_eq!(d, vec![0.30000000000000004]);
    }

    #[test]
    fn gae_reductions() {
        let t = traj(&[0.1, 0.4, 0.2, 0.9], &[0.3, 0.2, 0.5, 0.1], &[0.0; 4], false, 0.7, 0.0);
        let g = 0.9;
        let zero = gae_advantage(&t, g, 0.0);
        let values = [0.3, 0.2, 0.5, 0.1, 0.7];
        for i in 0..4 {
            let td = t.steps[i].reward + g * values[i + 1] - values[i];
            assert!((zero[i] - td).abs() < 1e-12);
        }
        let one = gae_advantage(&t, g, 1.0);
        let (r, _) = compute_to_go(&t, g);
        for i in 0..4 {
            assert!((one[i] - (r[i] - values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_direct_sum() {
        let r = [0.3, 0.9, 0.1, 0.6, 0.2];
        let v = [0.5, 0.4, 0.8, 0.2, 0.3];
        let t = traj(&r, &v, &[0.0; 5], true, 0.0, 0.0);
        let (g, l) = (0.95, 0.8);
        let adv = gae_advantage(&t, g, l);
        let next = |i: usize| if i + 1 < 5 { v[i + 1] } else { 0.0 };
        for i in 0..5 {
            let direct: f64 = (i..5)
                .map(|k| (g * l as f64).powi((k - i) as i32) * (r[k] + g * next(k) - v[k]))
                .sum();
            assert!((adv[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn acoe_arithmetic() {
        let a = acoe_advantage(&[1.0, -0.5], &[0.5, 0.5], 0.2).unwrap();
        assert!((a[0] - 0.9).abs() < 1e-12 && (a[1] + 0.6).abs() < 1e-12);
        assert_eq!(acoe_advantage(&[1.0, -0.5], &[0.5, 0.5], 0.0).unwrap(), vec![1.0, -0.5]);
        assert!(acoe_advantage(&[1.0], &[0.5, 0.5], 0.2).is_err());
    }

    proptest! {
        #[test]
        fn to_go_satisfies_backward_recursion(
            terms in prop::collection::vec(-1.0f64..1.0, 1..30),
            gamma in 0.0f64..1.0,
            tail in -5.0f64..5.0,
        ) {
            let x = discounted_to_go(&terms, gamma, tail);
            for t in 0..terms.len() {
                let next = if t + 1 < terms.len() { x[t + 1] } else { tail };
                prop_assert!((x[t] - (terms[t] + gamma * next)).abs() <= 1e-12);
            }
        }

        #[test]
        fn acoe_is_elementwise(
            adv in prop::collection::vec(-3.0f64..3.0, 1..20),
            lambda in 0.0f64..2.0,
        ) {
            let d: Vec<f64> = adv.iter().map(|a| a * 0.3 - 0.1).collect();
            let c = acoe_advantage(&adv, &d, lambda).unwrap();
            for i in 0..adv.len() {
                prop_assert!((c[i] - (adv[i] - lambda * d[i])).abs() <= 1e-12);
            }
        }
    }
}
