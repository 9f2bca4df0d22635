use serde::{Deserialize, Serialize};

use super::dist::{kl_divergence, softmax, ActionDistribution, CATEGORICAL_LOG_FLOOR};
use super::{distribution_from, DiffNet, Head};
use crate::error::{Error, Result};
use crate::space::Action;

/// Scalar losses on a network output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Σ_i (y_i − t_i)².
    SquaredError { target: Vec<f64> },
    /// (y_index − t)², used for per-action Q and δ regression.
    SquaredErrorAt { index: usize, target: f64 },
    /// Σ_i w_i y_i.
    Weighted { weights: Vec<f64> },
    /// −log π(action | x).
    NegLogProb { action: Action },
    /// −min(ρA, clip(ρ, 1−c, 1+c)A) with ρ = π(action|x) / exp(old_log_prob).
    PpoClip {
        action: Action,
        old_log_prob: f64,
        advantage: f64,
        clip: f64,
    },
    /// KL(target ‖ π(·|x)).
    KlToFixed { target: ActionDistribution },
}

/// d log π(a) / d(output), d log π(a) / d(log_std)
fn log_prob_grad(
    head: Head,
    log_std: &[f64],
    output: &[f64],
    action: &Action,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    match (head, action) {
        (Head::CategoricalLogits, Action::Discrete(a)) => {
            if *a >= output.len() {
                return Err(Error::Contract(format!("action {a} out of range")));
            }
            let p = softmax(output);
            let logp = p[*a].max(CATEGORICAL_LOG_FLOOR).ln();
            let mut g: Vec<f64> = p.iter().map(|v| -v).collect();
            g[*a] += 1.0;
            Ok((logp, g, None))
        }
        (Head::DiagonalGaussian, Action::Continuous(x)) => {
            if x.len() != output.len() {
                return Err(Error::dim("gaussian action", output.len(), x.len()));
            }
            let dist = distribution_from(head, log_std, output)?;
            let logp = dist.log_prob(action)?;
            let mut g_mean = Vec::with_capacity(x.len());
            let mut g_ls = Vec::with_capacity(x.len());
            for i in 0..x.len() {
                let s = log_std[i].exp();
                let z = (x[i] - output[i]) / s;
                g_mean.push(z / s);
                g_ls.push(z * z - 1.0);
            }
            Ok((logp, g_mean, Some(g_ls)))
        }
        _ => Err(Error::KindMismatch(format!(
            "action {action:?} incompatible with head {head:?}"
        ))),
    }
}

impl Loss {
    /// Returns (value, dL/d output, dL/d log_std).
    pub(crate) fn evaluate(
        &self,
        net: &DiffNet,
        output: &[f64],
    ) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
        self.evaluate_head(net.head(), net.log_std(), output)
    }

    /// Same as [`Loss::evaluate`] for an output produced by any model whose
    /// head is described by `head` and `log_std`.
    pub fn evaluate_head(
        &self,
        head: Head,
        log_std: &[f64],
        output: &[f64],
    ) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
        match self {
            Loss::SquaredError { target } => {
                if target.len() != output.len() {
                    return Err(Error::dim("squared error target", output.len(), target.len()));
                }
                let value = output.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum();
                let grad = output.iter().zip(target).map(|(y, t)| 2.0 * (y - t)).collect();
                Ok((value, grad, None))
            }
            Loss::SquaredErrorAt { index, target } => {
                let y = *output
                    .get(*index)
                    .ok_or_else(|| Error::Contract(format!("output index {index} out of range")))?;
                let mut grad = vec![0.0; output.len()];
                grad[*index] = 2.0 * (y - target);
                Ok(((y - target) * (y - target), grad, None))
            }
            Loss::Weighted { weights } => {
                if weights.len() != output.len() {
                    return Err(Error::dim("loss weights", output.len(), weights.len()));
                }
                let value = output.iter().zip(weights).map(|(y, w)| y * w).sum();
                Ok((value, weights.clone(), None))
            }
            Loss::NegLogProb { action } => {
                let (logp, g, gs) = log_prob_grad(head, log_std, output, action)?;
                let neg = |v: Vec<f64>| v.into_iter().map(|x| -x).collect::<Vec<_>>();
                Ok((-logp, neg(g), gs.map(neg)))
            }
            Loss::PpoClip {
                action,
                old_log_prob,
                advantage,
                clip,
            } => {
                let (logp, g, gs) = log_prob_grad(head, log_std, output, action)?;
                let ratio = (logp - old_log_prob).exp();
                let unclipped = ratio * advantage;
                let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
                if unclipped <= clipped {
                    // d(−ρA)/dθ = −ρA · d log π
                    let scale = -unclipped;
                    let sc = |v: Vec<f64>| v.into_iter().map(|x| x * scale).collect::<Vec<_>>();
                    Ok((-unclipped, sc(g), gs.map(sc)))
                } else {
                    let zeros = vec![0.0; output.len()];
                    let zs = gs.map(|v| vec![0.0; v.len()]);
                    Ok((-clipped, zeros, zs))
                }
            }
            Loss::KlToFixed { target } => {
                let current = distribution_from(head, log_std, output)?;
                let value = kl_divergence(target, &current)?;
                match (target, &current) {
                    (ActionDistribution::Categorical(p), ActionDistribution::Categorical(q)) => {
                        let grad = q.iter().zip(p).map(|(qi, pi)| qi - pi).collect();
                        Ok((value, grad, None))
                    }
                    (
                        ActionDistribution::Gaussian { mean: mp, std: sp },
                        ActionDistribution::Gaussian { mean: mq, std: sq },
                    ) => {
                        let mut gm = Vec::with_capacity(mp.len());
                        let mut gs = Vec::with_capacity(mp.len());
                        for i in 0..mp.len() {
                            let d = mq[i] - mp[i];
                            let s2 = sq[i] * sq[i];
                            gm.push(d / s2);
                            gs.push(1.0 - (sp[i] * sp[i] + d * d) / s2);
                        }
                        Ok((value, gm, Some(gs)))
                    }
                    _ => unreachable!("kl_divergence rejected mismatched kinds"),
                }
            }
        }
    }
}
