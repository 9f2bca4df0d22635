//! Policies as seen by attackers, belief builders and evaluators.
//!
//! A [`Policy`] maps an observation to an action distribution and can
//! differentiate distribution-level losses with respect to the observation.

use std::sync::Arc;

use crate::diffnet::{ActionDistribution, DiffNet, Head, Loss};
use crate::error::{Error, Result};
use crate::space::Action;

pub trait Policy: Send + Sync {
    fn obs_dim(&self) -> usize;

    fn distribution(&self, obs: &[f64]) -> Result<ActionDistribution>;

    /// Loss value and its gradient with respect to `obs`. Only
    /// distribution-level losses ([`Loss::NegLogProb`], [`Loss::KlToFixed`])
    /// are meaningful here.
    fn loss_input_gradient(&self, obs: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)>;

    fn loss_value(&self, obs: &[f64], loss: &Loss) -> Result<f64> {
        Ok(self.loss_input_gradient(obs, loss)?.0)
    }

    fn greedy(&self, obs: &[f64]) -> Result<Action> {
        Ok(self.distribution(obs)?.greedy())
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn distribution(&self, obs: &[f64]) -> Result<ActionDistribution> {
        (**self).distribution(obs)
    }
    fn loss_input_gradient(&self, obs: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)> {
        (**self).loss_input_gradient(obs, loss)
    }
    fn loss_value(&self, obs: &[f64], loss: &Loss) -> Result<f64> {
        (**self).loss_value(obs, loss)
    }
    fn greedy(&self, obs: &[f64]) -> Result<Action> {
        (**self).greedy(obs)
    }
}

/// A network with a categorical or gaussian head used directly as a policy.
#[derive(Debug, Clone)]
pub struct NetPolicy {
    pub net: DiffNet,
}

impl NetPolicy {
    pub fn new(net: DiffNet) -> Result<Self> {
        if net.head() == Head::Linear {
            return Err(Error::KindMismatch(
                "a policy network needs a categorical or gaussian head".into(),
            ));
        }
        Ok(Self { net })
    }
}

impl Policy for NetPolicy {
    fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }
    fn distribution(&self, obs: &[f64]) -> Result<ActionDistribution> {
        self.net.distribution(obs)
    }
    fn loss_input_gradient(&self, obs: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)> {
        self.net.input_gradient(obs, loss)
    }
    fn loss_value(&self, obs: &[f64], loss: &Loss) -> Result<f64> {
        self.net.loss(obs, loss)
    }
}

/// Categorical policy softmax(Q(s) − λ·δ(s)) induced by a Q network and an
/// optional C-ACoE network. Its greedy action is argmax of the same scores.
#[derive(Debug, Clone)]
pub struct ScorePolicy {
    pub q: DiffNet,
    pub delta: Option<DiffNet>,
    pub lambda: f64,
}

impl ScorePolicy {
    pub fn new(q: DiffNet, delta: Option<DiffNet>, lambda: f64) -> Result<Self> {
        if let Some(d) = &delta {
            if d.output_dim() != q.output_dim() || d.input_dim() != q.input_dim() {
                return Err(Error::dim("delta network shape", q.output_dim(), d.output_dim()));
            }
        }
        Ok(Self { q, delta, lambda })
    }

    pub fn scores(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.q.forward(obs)?;
        if let (Some(d), true) = (&self.delta, self.lambda != 0.0) {
            for (si, di) in s.iter_mut().zip(d.forward(obs)?) {
                *si -= self.lambda * di;
            }
        }
        Ok(s)
    }
}

impl Policy for ScorePolicy {
    fn obs_dim(&self) -> usize {
        self.q.input_dim()
    }

    fn distribution(&self, obs: &[f64]) -> Result<ActionDistribution> {
        Ok(ActionDistribution::Categorical(crate::diffnet::softmax(
            &self.scores(obs)?,
        )))
    }

    fn loss_input_gradient(&self, obs: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)> {
        let tape_q = self.q.forward_tape(obs)?;
        let mut logits = tape_q.output.clone();
        let delta = match (&self.delta, self.lambda != 0.0) {
            (Some(d), true) => {
                let tape_d = d.forward_tape(obs)?;
                for (l, v) in logits.iter_mut().zip(&tape_d.output) {
                    *l -= self.lambda * v;
                }
                Some((d, tape_d))
            }
            _ => None,
        };
        let (value, d_logits, _) = loss.evaluate_head(Head::CategoricalLogits, &[], &logits)?;
        let (_, mut grad) = self.q.backward(&tape_q, &d_logits, None, false);
        if let Some((d, tape_d)) = delta {
            let scaled: Vec<f64> = d_logits.iter().map(|g| -self.lambda * g).collect();
            let (_, gd) = d.backward(&tape_d, &scaled, None, false);
            for (g, h) in grad.iter_mut().zip(gd) {
                *g += h;
            }
        }
        Ok((value, grad))
    }

    fn greedy(&self, obs: &[f64]) -> Result<Action> {
        Ok(Action::Discrete(crate::diffnet::argmax(&self.scores(obs)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Activation;
    use crate::rng;

    #[test]
    fn score_policy_gradient_matches_finite_differences() {
        let mut r = rng::from_seed(2);
        let q = DiffNet::random(&[2, 6, 3], Activation::Tanh, Head::Linear, 1.0, &mut r).unwrap();
        let d = DiffNet::random(&[2, 6, 3], Activation::Tanh, Head::Linear, 1.0, &mut r).unwrap();
        let p = ScorePolicy::new(q, Some(d), 0.7).unwrap();
        let x = [0.3, -0.2];
        let loss = Loss::NegLogProb {
            action: Action::Discrete(2),
        };
        let (_, g) = p.loss_input_gradient(&x, &loss).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut a = x;
            let mut b = x;
            a[i] += h;
            b[i] -= h;
            let fd = (p.loss_value(&a, &loss).unwrap() - p.loss_value(&b, &loss).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
    }
}
