use rand::Rng as _;

use super::spec::Surrogate;
use crate::diffnet::Loss;
use crate::error::{ensure_finite, Error, Result};
use crate::policy::Policy;
use crate::rng::Rng;
use crate::space::Bounds;

pub fn attack_identity(s: &[f64]) -> Vec<f64> {
    s.to_vec()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_budget(eps: f64, steps: usize, alpha: f64) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Contract(format!("attack eps {eps} must be >= 0")));
    }
    if steps == 0 {
        return Err(Error::Contract("attack needs at least one step".into()));
    }
    if eps > 0.0 && (!(alpha > 0.0) || !alpha.is_finite()) {
        return Err(Error::Contract(format!("attack step size {alpha} must be > 0")));
    }
    Ok(())
}

/// The loss an untargeted attack ascends, anchored at the clean observation.
pub fn surrogate_loss(policy: &dyn Policy, s: &[f64], surrogate: Surrogate) -> Result<Loss> {
    Ok(match surrogate {
        Surrogate::NegLogProb => Loss::NegLogProb {
            action: policy.greedy(s)?,
        },
        Surrogate::Kl => Loss::KlToFixed {
            target: policy.distribution(s)?,
        },
    })
}

fn gradient_at(policy: &dyn Policy, x: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)> {
    let (value, grad) = policy.loss_input_gradient(x, loss)?;
    ensure_finite(&grad, || "attack gradient".into())?;
    if !value.is_finite() {
        return Err(Error::NonFinite("attack loss".into()));
    }
    Ok((value, grad))
}

/// Projected sign-gradient ascent on `loss`. Returns the iterate among
/// x_1..x_k with the highest loss (earliest on ties).
#[allow(clippy::too_many_arguments)]
pub fn projected_ascent(
    policy: &dyn Policy,
    s: &[f64],
    bounds: &Bounds,
    eps: f64,
    steps: usize,
    alpha: f64,
    loss: &Loss,
    start: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    check_budget(eps, steps, alpha)?;
    if s.len() != bounds.dim() {
        return Err(Error::dim("attacked observation", bounds.dim(), s.len()));
    }
    if eps == 0.0 {
        return Ok(s.to_vec());
    }
    let mut x = s.to_vec();
    if let Some(rng) = start {
        for xi in x.iter_mut() {
            *xi += rng.gen_range(-eps..=eps);
        }
        bounds.project_ball(&mut x, s, eps);
    }
    let (_, mut grad) = gradient_at(policy, &x, loss)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 0..steps {
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi += alpha * sign(*g);
        }
        bounds.project_ball(&mut x, s, eps);
        let value = if step + 1 < steps {
            let (v, g) = gradient_at(policy, &x, loss)?;
            grad = g;
            v
        } else {
            let v = policy.loss_value(&x, loss)?;
            if !v.is_finite() {
                return Err(Error::NonFinite("attack loss".into()));
            }
            v
        };
        if best.as_ref().map_or(true, |(b, _)| value > *b) {
            best = Some((value, x.clone()));
        }
    }
    Ok(best.map(|(_, x)| x).unwrap_or_else(|| s.to_vec()))
}

/// clip(s + ε·sign(∇ −log π(a*|s))).
pub fn attack_fgsm(policy: &dyn Policy, s: &[f64], bounds: &Bounds, eps: f64) -> Result<Vec<f64>> {
    if eps == 0.0 {
        return Ok(s.to_vec());
    }
    let loss = surrogate_loss(policy, s, Surrogate::NegLogProb)?;
    projected_ascent(policy, s, bounds, eps, 1, eps, &loss, None)
}

/// k-step projected ascent on −log π(a*|s). Falls back to `s` when no
/// iterate raises the loss.
#[allow(clippy::too_many_arguments)]
pub fn attack_pgd(
    policy: &dyn Policy,
    s: &[f64],
    bounds: &Bounds,
    eps: f64,
    steps: usize,
    alpha: f64,
    random_start: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    check_budget(eps, steps, alpha)?;
    if eps == 0.0 {
        return Ok(s.to_vec());
    }
    let loss = surrogate_loss(policy, s, Surrogate::NegLogProb)?;
    let x = projected_ascent(policy, s, bounds, eps, steps, alpha, &loss, random_start)?;
    if policy.loss_value(&x, &loss)? < policy.loss_value(s, &loss)? {
        Ok(s.to_vec())
    } else {
        Ok(x)
    }
}

/// Projected ascent on KL(π(·|s) ‖ π(·|x)). The KL gradient vanishes at
/// x = s, so the ascent starts from a uniform point in the ball drawn from
/// `rng`.
pub fn attack_mad(
    policy: &dyn Policy,
    s: &[f64],
    bounds: &Bounds,
    eps: f64,
    steps: usize,
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_budget(eps, steps, alpha)?;
    if eps == 0.0 {
        return Ok(s.to_vec());
    }
    let loss = surrogate_loss(policy, s, Surrogate::Kl)?;
    projected_ascent(policy, s, bounds, eps, steps, alpha, &loss, Some(rng))
}
