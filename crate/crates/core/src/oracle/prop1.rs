use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::exact::push_through_adversary;
use super::pomdp::{check_row, normalize_row, FinitePomdp};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DELTA_STAR_RESIDUAL: f64 = 1e-8;

/// Observation-indexed model of the surrogate δ recursion: immediate error
/// c[o][a] and kernel P[o][a][o′].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationProxy {
    pub cost: Vec<Vec<f64>>,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
}

impl ObservationProxy {
    pub fn n_obs(&self) -> usize {
        self.cost.len()
    }

    pub fn n_actions(&self) -> usize {
        self.cost.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Contract(format!("gamma {} must lie in [0, 1)", self.gamma)));
        }
        let (n, m) = (self.n_obs(), self.n_actions());
        if n == 0 || m == 0 || self.kernel.len() != n {
            return Err(Error::Contract("proxy needs at least one observation and action".into()));
        }
        for o in 0..n {
            if self.cost[o].len() != m || self.kernel[o].len() != m {
                return Err(Error::Contract(format!("proxy row {o} has the wrong action count")));
            }
            for a in 0..m {
                if self.kernel[o][a].len() != n {
                    return Err(Error::dim("proxy kernel", n, self.kernel[o][a].len()));
                }
                check_row(&self.kernel[o][a], &format!("P[{o}][{a}]"))?;
            }
        }
        Ok(())
    }

    /// Built from a finite POMDP with belief b(s|o) ∝ ν(o|s):
    /// c(o,a) = R(o,a) − Σ_s b(s|o) R(s,a) and
    /// P(o′|o,a) = Σ_s b(s|o) Σ_s′ T(s′|s,a) ν(o′|s′).
    pub fn from_pomdp(p: &FinitePomdp) -> Result<Self> {
        p.validate()?;
        let n = p.n_states();
        let m = p.n_actions();
        let mut cost = vec![vec![0.0; m]; n];
        let mut kernel = vec![vec![vec![0.0; n]; m]; n];
        for o in 0..n {
            let b = match p.observation_posterior(o) {
                Ok(b) => b,
                Err(_) => super::pomdp::ExactBelief::point(n, o),
            };
            for a in 0..m {
                cost[o][a] = p.reward[o][a] - p.belief_reward(&b, a);
                let k = push_through_adversary(p, &super::exact::predict(p, &b, a));
                kernel[o][a] = k;
            }
        }
        let out = Self {
            cost,
            kernel,
            gamma: p.gamma,
        };
        out.validate()?;
        Ok(out)
    }

    fn q(&self, v: &[f64], o: usize, a: usize) -> f64 {
        let next: f64 = self.kernel[o][a].iter().zip(v).map(|(p, x)| p * x).sum();
        self.cost[o][a] + self.gamma * next
    }

    /// Largest |min_a {c + γ P v} − v|.
    pub fn bellman_residual(&self, v: &[f64]) -> f64 {
        (0..self.n_obs())
            .map(|o| {
                let best = (0..self.n_actions()).map(|a| self.q(v, o, a)).fold(f64::INFINITY, f64::min);
                (best - v[o]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Random proxy: costs uniform on [−1, 1], Dirichlet(1) kernel rows.
pub fn random_proxy(rng: &mut Rng, n_obs: usize, n_actions: usize, gamma: f64) -> ObservationProxy {
    let row = |rng: &mut Rng| {
        let mut r: Vec<f64> = (0..n_obs).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        normalize_row(&mut r);
        r
    };
    ObservationProxy {
        cost: (0..n_obs)
            .map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect(),
        kernel: (0..n_obs).map(|_| (0..n_actions).map(|_| row(rng)).collect()).collect(),
        gamma,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStar {
    pub values: Vec<f64>,
    /// Greedy minimizing action per observation.
    pub policy: Vec<usize>,
    pub residual: f64,
    pub iterations: usize,
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// δ*(o) = min_a {c(o,a) + γ Σ P(o′|o,a) δ*(o′)} by value iteration.
pub fn delta_star(proxy: &ObservationProxy) -> Result<DeltaStar> {
    proxy.validate()?;
    let n = proxy.n_obs();
    let mut v = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let next: Vec<f64> = (0..n)
            .map(|o| (0..proxy.n_actions()).map(|a| proxy.q(&v, o, a)).fold(f64::INFINITY, f64::min))
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        iterations += 1;
        if change < 1e-14 || iterations >= 100_000 {
            break;
        }
    }
    let residual = proxy.bellman_residual(&v);
    if residual >= DELTA_STAR_RESIDUAL {
        return Err(Error::Contract(format!("value iteration stalled at residual {residual}")));
    }
    let policy = (0..n)
        .map(|o| {
            let qs: Vec<f64> = (0..proxy.n_actions()).map(|a| proxy.q(&v, o, a)).collect();
            argmin(&qs)
        })
        .collect();
    Ok(DeltaStar {
        values: v,
        policy,
        residual,
        iterations,
    })
}

/// δ of a stationary deterministic policy from (I − γP_μ)δ = c_μ.
pub fn evaluate_proxy_policy(proxy: &ObservationProxy, policy: &[usize]) -> Result<Vec<f64>> {
    let n = proxy.n_obs();
    if policy.len() != n {
        return Err(Error::dim("proxy policy", n, policy.len()));
    }
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut c = DVector::<f64>::zeros(n);
    for o in 0..n {
        let a = policy[o];
        c[o] = proxy.cost[o][a];
        for o2 in 0..n {
            m[(o, o2)] -= proxy.gamma * proxy.kernel[o][a][o2];
        }
    }
    m.lu()
        .solve(&c)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Contract("singular proxy evaluation system".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    /// Elementwise minimum over all stationary deterministic policies.
    pub values: Vec<f64>,
    pub policies: usize,
}

/// Exhaustive minimum over the |A|^|O| stationary deterministic policies.
pub fn delta_star_enumerate(proxy: &ObservationProxy) -> Result<Enumeration> {
    proxy.validate()?;
    let (n, m) = (proxy.n_obs(), proxy.n_actions());
    let total = m
        .checked_pow(n as u32)
        .filter(|t| *t <= 1 << 20)
        .ok_or_else(|| Error::Contract("too many policies to enumerate".into()))?;
    let mut best = vec![f64::INFINITY; n];
    let mut policy = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for p in policy.iter_mut() {
            *p = c % m;
            c /= m;
        }
        let v = evaluate_proxy_policy(proxy, &policy)?;
        for (b, x) in best.iter_mut().zip(v) {
            *b = b.min(x);
        }
    }
    Ok(Enumeration {
        values: best,
        policies: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Check {
    pub index: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub residual: f64,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Compares value iteration with enumeration on each proxy.
pub fn verify_delta_star(proxies: &[ObservationProxy], tol: f64) -> Result<Vec<Prop1Check>> {
    proxies
        .iter()
        .enumerate()
        .map(|(index, proxy)| {
            let vi = delta_star(proxy)?;
            let en = delta_star_enumerate(proxy)?;
            let max_abs_diff = vi.values.iter().zip(&en.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok(Prop1Check {
                index,
                n_obs: proxy.n_obs(),
                n_actions: proxy.n_actions(),
                gamma: proxy.gamma,
                residual: vi.residual,
                max_abs_diff,
                passed: max_abs_diff <= tol && vi.residual < DELTA_STAR_RESIDUAL,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::pomdp::random_instance;
    use crate::rng;

    #[test]
    fn zero_cost_gives_zero() {
        let mut r = rng::from_seed(1);
        let mut p = random_proxy(&mut r, 3, 2, 0.9);
        p.cost = vec![vec![0.0; 2]; 3];
        assert!(delta_star(&p).unwrap().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gamma_zero_is_min_cost() {
        let mut r = rng::from_seed(2);
        let p = random_proxy(&mut r, 4, 3, 0.0);
        let d = delta_star(&p).unwrap();
        for o in 0..4 {
            assert_eq!(d.values[o], p.cost[o].iter().copied().fold(f64::INFINITY, f64::min));
        }
    }

    #[test]
    fn value_iteration_matches_enumeration_and_dominates() {
        let mut r = rng::from_seed(3);
        let p = ObservationProxy::from_pomdp(&random_instance(&mut r, 4, 3, 0.9).unwrap()).unwrap();
        let d = delta_star(&p).unwrap();
        let e = delta_star_enumerate(&p).unwrap();
        assert_eq!(e.policies, 81);
        for (a, b) in d.values.iter().zip(&e.values) {
            assert!((a - b).abs() < 1e-8);
        }
        let pol = evaluate_proxy_policy(&p, &d.policy).unwrap();
        for (a, b) in d.values.iter().zip(&pol) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_adversary_proxy_has_zero_cost() {
        let mut r = rng::from_seed(4);
        let p = random_instance(&mut r, 4, 2, 0.9).unwrap().with_identity_adversary();
        let proxy = ObservationProxy::from_pomdp(&p).unwrap();
        assert!(proxy.cost.iter().flatten().all(|c| *c == 0.0));
    }
}
