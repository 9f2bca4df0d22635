use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension box bounds on observations and states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl Bounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::dim("bounds", low.len(), high.len()));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l <= h)) {
            return Err(Error::Contract("bounds require low <= high".into()));
        }
        Ok(Self { low, high })
    }

    pub fn uniform(dim: usize, low: f64, high: f64) -> Self {
        Self {
            low: vec![low; dim],
            high: vec![high; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.low.iter().zip(&self.high)) {
            *v = v.clamp(*l, *h);
        }
    }

    /// Project `x` onto the intersection of the bounds and the L∞ ball of
    /// radius `eps` around `center`.
    pub fn project_ball(&self, x: &mut [f64], center: &[f64], eps: f64) {
        for i in 0..x.len() {
            let lo = (center[i] - eps).max(self.low[i]);
            let hi = (center[i] + eps).min(self.high[i]);
            // center may itself sit outside the bounds; fall back to the bound box
            x[i] = if lo <= hi {
                x[i].clamp(lo, hi)
            } else {
                x[i].clamp(self.low[i], self.high[i])
            };
        }
    }
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(usize),
}

impl ActionSpace {
    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(i)) => i < n,
            (ActionSpace::Continuous(d), Action::Continuous(v)) => {
                v.len() == *d && v.iter().all(|x| x.is_finite())
            }
            _ => false,
        }
    }

    pub fn n_discrete(&self) -> Option<usize> {
        match self {
            ActionSpace::Discrete(n) => Some(*n),
            ActionSpace::Continuous(_) => None,
        }
    }
}
