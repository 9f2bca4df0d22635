use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::pomdp::{ExactBelief, FinitePomdp};
use crate::error::{Error, Result};

pub const VALUE_RESIDUAL: f64 = 1e-12;
pub const DEFAULT_TREE_CAP: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpValue {
    pub values: Vec<f64>,
    /// K = max_s V(s)
    pub k: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// A finite-horizon value together with the truncation slack that bounds
/// its distance to the infinite-horizon value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub value: f64,
    pub slack: f64,
}

fn bellman(p: &FinitePomdp, v: &[f64], s: usize) -> f64 {
    let mut out = 0.0;
    for (a, pa) in p.policy[s].iter().enumerate() {
        if *pa == 0.0 {
            continue;
        }
        let next: f64 = p.transition[s][a].iter().zip(v).map(|(t, x)| t * x).sum();
        out += pa * (p.reward[s][a] + p.gamma * next);
    }
    out
}

/// V under the defender policy with the identity adversary, by value
/// iteration until the Bellman residual drops below 1e-12.
pub fn mdp_value(p: &FinitePomdp) -> MdpValue {
    let n = p.n_states();
    let mut v = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let next: Vec<f64> = (0..n).map(|s| bellman(p, &v, s)).collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if residual < VALUE_RESIDUAL || iterations > 1_000_000 {
            let residual = (0..n).map(|s| (bellman(p, &v, s) - v[s]).abs()).fold(0.0, f64::max);
            let k = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return MdpValue {
                values: v,
                k,
                residual,
                iterations,
            };
        }
    }
}

/// V from the linear system (I − γ T_π) V = R_π.
pub fn mdp_value_linear(p: &FinitePomdp) -> Result<Vec<f64>> {
    let n = p.n_states();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        for a in 0..p.n_actions() {
            let pa = p.policy[s][a];
            r[s] += pa * p.reward[s][a];
            for s2 in 0..n {
                m[(s, s2)] -= p.gamma * pa * p.transition[s][a][s2];
            }
        }
    }
    m.lu()
        .solve(&r)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Contract("singular policy-evaluation system".into()))
}

/// T(·|b, a) = Σ_s b(s) T(·|s, a)
pub fn predict(p: &FinitePomdp, b: &ExactBelief, a: usize) -> Vec<f64> {
    let n = p.n_states();
    let mut out = vec![0.0; n];
    for (s, bs) in b.probs().iter().enumerate() {
        if *bs == 0.0 {
            continue;
        }
        for (o, t) in out.iter_mut().zip(&p.transition[s][a]) {
            *o += bs * t;
        }
    }
    out
}

/// P_o(·|b, a) = Σ_{s′} ν(·|s′) T(s′|b, a)
pub fn observation_marginal(p: &FinitePomdp, b: &ExactBelief, a: usize) -> Vec<f64> {
    push_through_adversary(p, &predict(p, b, a))
}

/// Σ_{s′} ν(·|s′) q(s′)
pub fn push_through_adversary(p: &FinitePomdp, q: &[f64]) -> Vec<f64> {
    let n = p.n_states();
    let mut out = vec![0.0; n];
    for (s2, w) in q.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (o, nu) in out.iter_mut().zip(&p.adversary[s2]) {
            *o += w * nu;
        }
    }
    out
}

/// Bayesian update b′ = SE(b, o, a).
pub fn se_update(p: &FinitePomdp, b: &ExactBelief, o: usize, a: usize) -> Result<ExactBelief> {
    if b.len() != p.n_states() {
        return Err(Error::dim("belief", p.n_states(), b.len()));
    }
    let pred = predict(p, b, a);
    let mut post: Vec<f64> = pred.iter().zip(&p.adversary).map(|(t, nu)| t * nu[o]).collect();
    let z: f64 = post.iter().sum();
    if !(z > 0.0) {
        return Err(Error::ImpossibleObservation { observation: o });
    }
    for v in post.iter_mut() {
        *v /= z;
    }
    Ok(ExactBelief(post))
}

/// Per-(true state, current observation) tables J and D with
/// U(o, b) = Σ_s b(s) J[s][o] and δ(o, b) = Σ_s b(s) D[s][o]. Because the
/// policy reads only the current observation and b is the exact posterior,
/// U and δ are linear in b and the observation-tree expansion collapses to
/// a recursion on the product chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualTables {
    pub j: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl CounterfactualTables {
    pub fn belief_value(&self, o: usize, b: &ExactBelief) -> f64 {
        b.probs().iter().zip(&self.j).map(|(p, row)| p * row[o]).sum()
    }

    pub fn delta(&self, o: usize, b: &ExactBelief) -> f64 {
        b.probs().iter().zip(&self.d).map(|(p, row)| p * row[o]).sum()
    }
}

/// Horizon at which γ^H/(1−γ) drops below `slack`.
pub fn horizon_for_slack(gamma: f64, slack: f64) -> usize {
    if gamma == 0.0 {
        return 1;
    }
    let h = ((slack * (1.0 - gamma)).ln() / gamma.ln()).ceil();
    (h.max(1.0)) as usize
}

/// U-truncation slack for rewards in [0, 1].
pub fn value_slack(gamma: f64, horizon: usize) -> f64 {
    gamma.powi(horizon as i32) / (1.0 - gamma)
}

/// Exact H-step tables.
pub fn counterfactual_tables(p: &FinitePomdp, horizon: usize) -> CounterfactualTables {
    let n = p.n_states();
    let m = p.n_actions();
    let mut j = vec![vec![0.0; n]; n];
    let mut d = vec![vec![0.0; n]; n];
    for _ in 0..horizon {
        // G(s′) = Σ_o′ ν(o′|s′) J(s′, o′)
        let gj: Vec<f64> = (0..n).map(|s2| p.adversary[s2].iter().zip(&j[s2]).map(|(a, b)| a * b).sum()).collect();
        let gd: Vec<f64> = (0..n).map(|s2| p.adversary[s2].iter().zip(&d[s2]).map(|(a, b)| a * b).sum()).collect();
        let mut hj = vec![vec![0.0; m]; n];
        let mut hd = vec![vec![0.0; m]; n];
        for s in 0..n {
            for a in 0..m {
                let t = &p.transition[s][a];
                let ej: f64 = t.iter().zip(&gj).map(|(x, y)| x * y).sum();
                let ed: f64 = t.iter().zip(&gd).map(|(x, y)| x * y).sum();
                hj[s][a] = p.reward[s][a] + p.gamma * ej;
                hd[s][a] = -p.reward[s][a] + p.gamma * ed;
            }
        }
        for s in 0..n {
            for o in 0..n {
                let (mut vj, mut vd) = (0.0, 0.0);
                for a in 0..m {
                    let pa = p.policy[o][a];
                    if pa == 0.0 {
                        continue;
                    }
                    vj += pa * hj[s][a];
                    vd += pa * (p.reward[o][a] + hd[s][a]);
                }
                j[s][o] = vj;
                d[s][o] = vd;
            }
        }
    }
    CounterfactualTables { j, d, horizon }
}

fn check_pair(p: &FinitePomdp, o: usize, b: &ExactBelief) -> Result<()> {
    if o >= p.n_states() {
        return Err(Error::Contract(format!("observation {o} out of range")));
    }
    if b.len() != p.n_states() {
        return Err(Error::dim("belief", p.n_states(), b.len()));
    }
    super::pomdp::check_row(b.probs(), "belief")
}

/// U(o, b) truncated at `horizon`, with slack γ^H/(1−γ).
pub fn belief_value(p: &FinitePomdp, o: usize, b: &ExactBelief, horizon: usize) -> Result<Bounded> {
    check_pair(p, o, b)?;
    let t = counterfactual_tables(p, horizon);
    Ok(Bounded {
        value: t.belief_value(o, b),
        slack: value_slack(p.gamma, horizon),
    })
}

/// δ(o, b) truncated at `horizon`, with slack 2γ^H/(1−γ).
pub fn delta_exact(p: &FinitePomdp, o: usize, b: &ExactBelief, horizon: usize) -> Result<Bounded> {
    check_pair(p, o, b)?;
    let t = counterfactual_tables(p, horizon);
    Ok(Bounded {
        value: t.delta(o, b),
        slack: 2.0 * value_slack(p.gamma, horizon),
    })
}

/// U and δ by explicit expansion of the observation tree:
/// nodes are (o, b) pairs, children are (a, o′) with nonzero probability.
pub fn tree_values(p: &FinitePomdp, o: usize, b: &ExactBelief, horizon: usize, cap: usize) -> Result<(Bounded, Bounded)> {
    check_pair(p, o, b)?;
    let mut nodes = 0usize;
    let (u, d) = expand(p, o, b, horizon, cap, &mut nodes)?;
    let slack = value_slack(p.gamma, horizon);
    Ok((
        Bounded { value: u, slack },
        Bounded {
            value: d,
            slack: 2.0 * slack,
        },
    ))
}

fn expand(p: &FinitePomdp, o: usize, b: &ExactBelief, depth: usize, cap: usize, nodes: &mut usize) -> Result<(f64, f64)> {
    *nodes += 1;
    if *nodes > cap {
        return Err(Error::TreeTooLarge { cap });
    }
    if depth == 0 {
        return Ok((0.0, 0.0));
    }
    let (mut u, mut d) = (0.0, 0.0);
    for (a, pa) in p.policy[o].iter().enumerate() {
        if *pa == 0.0 {
            continue;
        }
        let rb = p.belief_reward(b, a);
        let (mut fu, mut fd) = (0.0, 0.0);
        if p.gamma > 0.0 && depth > 1 {
            let marg = observation_marginal(p, b, a);
            for (o2, q) in marg.iter().enumerate() {
                if *q <= 0.0 {
                    continue;
                }
                let b2 = se_update(p, b, o2, a)?;
                let (cu, cd) = expand(p, o2, &b2, depth - 1, cap, nodes)?;
                fu += q * cu;
                fd += q * cd;
            }
        }
        u += pa * (rb + p.gamma * fu);
        d += pa * (p.reward[o][a] - rb + p.gamma * fd);
    }
    Ok((u, d))
}

/// (o, b) pairs reachable within `depth` steps from the given roots,
/// deduplicated and capped at `max_pairs`, in breadth-first order.
pub fn reachable_pairs(
    p: &FinitePomdp,
    roots: Vec<(usize, ExactBelief)>,
    depth: usize,
    max_pairs: usize,
) -> Result<Vec<(usize, ExactBelief)>> {
    let key = |o: usize, b: &ExactBelief| -> (usize, Vec<i64>) {
        (o, b.probs().iter().map(|v| (v * 1e12).round() as i64).collect())
    };
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut frontier = Vec::new();
    for (o, b) in roots {
        if seen.insert(key(o, &b)) {
            out.push((o, b.clone()));
            frontier.push((o, b));
        }
    }
    for _ in 0..depth {
        let mut next = Vec::new();
        for (o, b) in &frontier {
            for (a, pa) in p.policy[*o].iter().enumerate() {
                if *pa == 0.0 {
                    continue;
                }
                let marg = observation_marginal(p, b, a);
                for (o2, q) in marg.iter().enumerate() {
                    if *q <= 0.0 {
                        continue;
                    }
                    let b2 = se_update(p, b, o2, a)?;
                    if out.len() >= max_pairs {
                        return Ok(out);
                    }
                    if seen.insert(key(o2, &b2)) {
                        out.push((o2, b2.clone()));
                        next.push((o2, b2));
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(out)
}

/// Roots used by the theorem suites: every observation o with the
/// posterior under a uniform prior over states.
pub fn uniform_prior_roots(p: &FinitePomdp) -> Vec<(usize, ExactBelief)> {
    (0..p.n_states())
        .filter_map(|o| p.observation_posterior(o).ok().map(|b| (o, b)))
        .collect()
}
