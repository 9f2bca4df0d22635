use serde::{Deserialize, Serialize};

use super::distance::{tv_distance, w1_distance_1d};
use super::exact::{
    counterfactual_tables, horizon_for_slack, mdp_value, observation_marginal, push_through_adversary,
    reachable_pairs, uniform_prior_roots, value_slack, CounterfactualTables,
};
use super::pomdp::{ExactBelief, FinitePomdp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Steps of belief updates explored from each root.
    pub depth: usize,
    pub max_pairs: usize,
    /// Target truncation slack for U.
    pub slack_target: f64,
    /// Allowance for floating-point error on top of the truncation slack.
    pub tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            max_pairs: 5000,
            slack_target: 1e-6,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub observation: usize,
    pub belief: Vec<f64>,
    pub v: f64,
    pub u: f64,
    pub delta: f64,
    pub lhs: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceCheck {
    pub index: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub horizon: usize,
    /// Combined truncation slack of U and δ plus the numeric tolerance.
    pub slack: f64,
    pub k: f64,
    /// Ξ bound valid at every reachable pair (max over the supports any
    /// posterior at an observation can have).
    pub xi: f64,
    /// Largest TV actually met on the enumerated pairs.
    pub xi_reach: f64,
    /// Lipschitz constant, ξ and ε (1-D instances only).
    pub lipschitz: Option<f64>,
    pub xi_w1: Option<f64>,
    pub eps: Option<f64>,
    pub bound: f64,
    /// The other theorem's bound on the same instance, when both apply.
    pub other_bound: Option<f64>,
    pub pairs: usize,
    pub max_lhs: f64,
    pub min_margin: f64,
    pub violations: Vec<Counterexample>,
}

impl InstanceCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub theorem: String,
    pub instances: Vec<InstanceCheck>,
    pub pairs: usize,
    pub violations: usize,
    pub min_margin: f64,
    /// Instances where this bound is strictly below the other theorem's.
    pub tighter: Vec<usize>,
}

impl TheoremReport {
    fn from_checks(theorem: &str, instances: Vec<InstanceCheck>) -> Self {
        let tighter = instances
            .iter()
            .filter(|c| c.other_bound.is_some_and(|o| c.bound < o))
            .map(|c| c.index)
            .collect();
        Self {
            theorem: theorem.into(),
            pairs: instances.iter().map(|c| c.pairs).sum(),
            violations: instances.iter().map(|c| c.violations.len()).sum(),
            min_margin: instances.iter().map(|c| c.min_margin).fold(f64::INFINITY, f64::min),
            tighter,
            instances,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Human-readable table.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {} instances, {} pairs, {} violations, min margin {:.3e}\n",
            self.theorem,
            self.instances.len(),
            self.pairs,
            self.violations,
            self.min_margin
        );
        s.push_str("  idx  |S| |A| gamma     K        Xi       bound     max_lhs    margin\n");
        for c in &self.instances {
            s.push_str(&format!(
                "  {:>3} {:>4} {:>3} {:>5.2} {:>8.4} {:>8.4} {:>10.4e} {:>10.4e} {:>10.4e}\n",
                c.index, c.n_states, c.n_actions, c.gamma, c.k, c.xi, c.bound, c.max_lhs, c.min_margin
            ));
        }
        s
    }
}

/// max over observations o, actions with π(a|o) > 0 and states s with
/// ν(o|s) > 0 of TV(T(·|o,a), P_o(·|δ_s,a)). By convexity of TV this
/// dominates TV(T(·|o,a), P_o(·|b,a)) for every posterior b at o.
pub fn xi_tv(p: &FinitePomdp) -> f64 {
    let n = p.n_states();
    let mut xi: f64 = 0.0;
    for o in 0..n {
        for a in 0..p.n_actions() {
            if p.policy[o][a] == 0.0 {
                continue;
            }
            for s in 0..n {
                if p.adversary[s][o] == 0.0 {
                    continue;
                }
                let q = push_through_adversary(p, &p.transition[s][a]);
                xi = xi.max(tv_distance(&p.transition[o][a], &q).expect("same length"));
            }
        }
    }
    xi
}

/// max_{s ≠ s′} |V(s) − V(s′)| / |x_s − x_s′|
pub fn lipschitz_constant(values: &[f64], positions: &[f64]) -> f64 {
    let mut l: f64 = 0.0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            l = l.max((values[i] - values[j]).abs() / (positions[j] - positions[i]).abs());
        }
    }
    l
}

/// max over |x_s − x_s′| ≤ ε and all actions of W1(T(·|s,a), T(·|s′,a)).
pub fn xi_w1(p: &FinitePomdp, positions: &[f64], eps: f64) -> Result<f64> {
    let n = p.n_states();
    let mut xi: f64 = 0.0;
    for s in 0..n {
        for s2 in 0..n {
            if (positions[s] - positions[s2]).abs() > eps + 1e-12 {
                continue;
            }
            for a in 0..p.n_actions() {
                xi = xi.max(w1_distance_1d(&p.transition[s][a], &p.transition[s2][a], positions)?);
            }
        }
    }
    Ok(xi)
}

struct Prepared {
    values: Vec<f64>,
    k: f64,
    horizon: usize,
    slack: f64,
    tables: CounterfactualTables,
    pairs: Vec<(usize, ExactBelief)>,
    xi_reach: f64,
}

fn prepare(p: &FinitePomdp, cfg: &SuiteConfig) -> Result<Prepared> {
    p.validate()?;
    let v = mdp_value(p);
    let horizon = horizon_for_slack(p.gamma, cfg.slack_target);
    let slack = 3.0 * value_slack(p.gamma, horizon) + cfg.tolerance;
    let tables = counterfactual_tables(p, horizon);
    let pairs = reachable_pairs(p, uniform_prior_roots(p), cfg.depth, cfg.max_pairs)?;
    let mut xi_reach: f64 = 0.0;
    for (o, b) in &pairs {
        for a in 0..p.n_actions() {
            if p.policy[*o][a] > 0.0 {
                xi_reach = xi_reach.max(tv_distance(&p.transition[*o][a], &observation_marginal(p, b, a))?);
            }
        }
    }
    Ok(Prepared {
        values: v.values,
        k: v.k,
        horizon,
        slack,
        tables,
        pairs,
        xi_reach,
    })
}

fn check_pairs(
    index: usize,
    p: &FinitePomdp,
    prep: &Prepared,
    xi: f64,
    bound: f64,
) -> InstanceCheck {
    let mut max_lhs: f64 = 0.0;
    let mut min_margin = f64::INFINITY;
    let mut violations = Vec::new();
    for (o, b) in &prep.pairs {
        let v = prep.values[*o];
        let u = prep.tables.belief_value(*o, b);
        let delta = prep.tables.delta(*o, b);
        let lhs = (v - u - delta).abs();
        max_lhs = max_lhs.max(lhs);
        min_margin = min_margin.min(bound - lhs);
        if lhs > bound {
            violations.push(Counterexample {
                observation: *o,
                belief: b.0.clone(),
                v,
                u,
                delta,
                lhs,
                bound,
            });
        }
    }
    InstanceCheck {
        index,
        n_states: p.n_states(),
        n_actions: p.n_actions(),
        gamma: p.gamma,
        horizon: prep.horizon,
        slack: prep.slack,
        k: prep.k,
        xi,
        xi_reach: prep.xi_reach,
        lipschitz: None,
        xi_w1: None,
        eps: None,
        bound,
        other_bound: None,
        pairs: prep.pairs.len(),
        max_lhs,
        min_margin,
        violations,
    }
}

fn theorem1_bound(gamma: f64, k: f64, xi: f64) -> f64 {
    gamma * k * xi / (1.0 - gamma)
}

pub fn check_theorem1(index: usize, p: &FinitePomdp, cfg: &SuiteConfig) -> Result<InstanceCheck> {
    let prep = prepare(p, cfg)?;
    let xi = xi_tv(p);
    let bound = theorem1_bound(p.gamma, prep.k, xi) + prep.slack;
    Ok(check_pairs(index, p, &prep, xi, bound))
}

/// |V(o) − U(o,b) − δ(o,b)| ≤ γKΞ/(1−γ) + slack on every enumerated pair.
pub fn verify_theorem1(instances: &[FinitePomdp], cfg: &SuiteConfig) -> Result<TheoremReport> {
    let checks = instances
        .iter()
        .enumerate()
        .map(|(i, p)| check_theorem1(i, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoremReport::from_checks("theorem1", checks))
}

pub fn check_theorem2(index: usize, p: &FinitePomdp, cfg: &SuiteConfig) -> Result<InstanceCheck> {
    let positions = p
        .positions
        .clone()
        .ok_or_else(|| Error::Contract("the Wasserstein bound needs a 1-D embedding".into()))?;
    let eps = p.neighborhood_radius().unwrap_or(0.0);
    let prep = prepare(p, cfg)?;
    let l = lipschitz_constant(&prep.values, &positions);
    let xi = xi_w1(p, &positions, eps)?;
    let bound = p.gamma * l * (xi + eps) / (1.0 - p.gamma) + prep.slack;
    let tv = xi_tv(p);
    let mut check = check_pairs(index, p, &prep, tv, bound);
    check.lipschitz = Some(l);
    check.xi_w1 = Some(xi);
    check.eps = Some(eps);
    check.other_bound = Some(theorem1_bound(p.gamma, prep.k, tv) + prep.slack);
    Ok(check)
}

/// |V − U − δ| ≤ γL(ξ+ε)/(1−γ) + slack on 1-D embedded instances.
pub fn verify_theorem2(instances: &[FinitePomdp], cfg: &SuiteConfig) -> Result<TheoremReport> {
    let checks = instances
        .iter()
        .enumerate()
        .map(|(i, p)| check_theorem2(i, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(TheoremReport::from_checks("theorem2", checks))
}

/// Adversaries on a grid: in state s the adversary reports s with
/// probability 1 − t_s and spreads t_s evenly over the other neighbors,
/// t_s ∈ {0, 1/steps, …, 1}.
pub fn adversary_grid(p: &FinitePomdp, steps: usize) -> Vec<FinitePomdp> {
    let n = p.n_states();
    let levels = steps + 1;
    let total = levels.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut q = p.clone();
        let mut c = code;
        for s in 0..n {
            let t = (c % levels) as f64 / steps as f64;
            c /= levels;
            let others: Vec<usize> = p.neighborhoods[s].iter().copied().filter(|o| *o != s).collect();
            let mut row = vec![0.0; n];
            if others.is_empty() {
                row[s] = 1.0;
            } else {
                row[s] = 1.0 - t;
                for o in &others {
                    row[*o] = t / others.len() as f64;
                }
            }
            q.adversary[s] = row;
            if !q.neighborhoods[s].contains(&s) {
                q.neighborhoods[s].push(s);
            }
        }
        out.push(q);
    }
    out
}

/// Grid search over adversaries for the one that pushes |V − U − δ|
/// closest to the total-variation bound. Returns the report over the whole grid
/// and the index of the tightest adversary.
pub fn stress_theorem1(p: &FinitePomdp, steps: usize, cfg: &SuiteConfig) -> Result<(TheoremReport, usize)> {
    let grid = adversary_grid(p, steps);
    let report = verify_theorem1(&grid, cfg)?;
    let worst = report
        .instances
        .iter()
        .max_by(|a, b| a.max_lhs.total_cmp(&b.max_lhs))
        .map_or(0, |c| c.index);
    Ok((report, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::pomdp::{random_instance, random_line_instance, shift_chain_instance};
    use crate::rng;

    #[test]
    fn identity_adversary_has_zero_xi() {
        let mut r = rng::from_seed(1);
        let p = random_instance(&mut r, 5, 2, 0.9).unwrap().with_identity_adversary();
        let c = check_theorem1(0, &p, &SuiteConfig::default()).unwrap();
        assert_eq!(c.xi, 0.0);
        assert!(c.max_lhs <= c.slack);
        assert!(c.passed());
    }

    #[test]
    fn small_random_suite_passes() {
        let mut r = rng::from_seed(2);
        let ps: Vec<_> = (0..5).map(|_| random_instance(&mut r, 4, 2, 0.9).unwrap()).collect();
        let rep = verify_theorem1(&ps, &SuiteConfig::default()).unwrap();
        assert!(rep.passed(), "{}", rep.summary());
        assert!(rep.instances.iter().all(|c| c.xi_reach <= c.xi + 1e-12));
    }

    #[test]
    fn theorem2_on_line_and_shift_chain() {
        let mut r = rng::from_seed(3);
        let p = random_line_instance(&mut r, 6, 2, 0.9, 0.1).unwrap();
        assert!(check_theorem2(0, &p, &SuiteConfig::default()).unwrap().passed());
        let c = check_theorem2(1, &shift_chain_instance(12, 0.1, 0.9).unwrap(), &SuiteConfig::default()).unwrap();
        assert!(c.passed());
        assert!(c.bound < c.other_bound.unwrap());
    }

    #[test]
    fn theorem2_identity_zero_eps() {
        let mut r = rng::from_seed(4);
        let mut p = random_line_instance(&mut r, 5, 2, 0.5, 0.2).unwrap().with_identity_adversary();
        p.neighborhoods = (0..5).map(|s| vec![s]).collect();
        let c = check_theorem2(0, &p, &SuiteConfig::default()).unwrap();
        assert_eq!(c.eps, Some(0.0));
        assert!(c.max_lhs <= c.slack);
    }

    #[test]
    fn adversary_grid_enumerates_all_levels() {
        let mut r = rng::from_seed(4);
        let p = random_instance(&mut r, 3, 2, 0.5).unwrap();
        let g = adversary_grid(&p, 2);
        assert_eq!(g.len(), 27);
        for q in &g {
            q.validate().unwrap();
        }
    }
}
