use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agents::mean_std;
use crate::error::{Error, Result};
use crate::rng;

/// Analytic score z(s) and reward R(s) on C = [−ε, ε]^dim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticPair {
    /// z ≡ 1, R = 0.5 + 4s.
    Constant,
    /// z = 1 + 10s, R = 0.5 + 4s.
    Linear1d,
    /// z = 100‖s‖², R = 0.5 + 2(s₁ + s₂).
    Radial2d,
    /// z = 1 + sin(10πs₁)cos(10πs₂), R = 0.5 + 0.4 sin(5π(s₁ − s₂)).
    Wave2d,
}

pub const LEMMA_EPS: f64 = 0.1;

impl AnalyticPair {
    pub const SUITE: [AnalyticPair; 3] = [AnalyticPair::Linear1d, AnalyticPair::Radial2d, AnalyticPair::Wave2d];

    pub fn dim(self) -> usize {
        match self {
            AnalyticPair::Constant | AnalyticPair::Linear1d => 1,
            AnalyticPair::Radial2d | AnalyticPair::Wave2d => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AnalyticPair::Constant => "constant",
            AnalyticPair::Linear1d => "linear-1d",
            AnalyticPair::Radial2d => "radial-2d",
            AnalyticPair::Wave2d => "wave-2d",
        }
    }

    pub fn z(self, s: &[f64]) -> f64 {
        match self {
            AnalyticPair::Constant => 1.0,
            AnalyticPair::Linear1d => 1.0 + 10.0 * s[0],
            AnalyticPair::Radial2d => 100.0 * (s[0] * s[0] + s[1] * s[1]),
            AnalyticPair::Wave2d => 1.0 + (10.0 * PI * s[0]).sin() * (10.0 * PI * s[1]).cos(),
        }
    }

    pub fn reward(self, s: &[f64]) -> f64 {
        match self {
            AnalyticPair::Constant | AnalyticPair::Linear1d => 0.5 + 4.0 * s[0],
            AnalyticPair::Radial2d => 0.5 + 2.0 * (s[0] + s[1]),
            AnalyticPair::Wave2d => 0.5 + 0.4 * (5.0 * PI * (s[0] - s[1])).sin(),
        }
    }

    /// Closed-form range of z on C.
    pub fn z_range(self) -> (f64, f64) {
        match self {
            AnalyticPair::Constant => (1.0, 1.0),
            AnalyticPair::Linear1d | AnalyticPair::Wave2d => (0.0, 2.0),
            AnalyticPair::Radial2d => (0.0, 2.0),
        }
    }
}

/// Midpoint-rule averages (1/vol C)∫e^z and ∫R e^z / ∫e^z.
pub fn quadrature(pair: AnalyticPair, points_per_dim: usize) -> (f64, f64) {
    let h = 2.0 * LEMMA_EPS / points_per_dim as f64;
    let mid = |i: usize| -LEMMA_EPS + (i as f64 + 0.5) * h;
    let (mut sw, mut swr, mut count) = (0.0, 0.0, 0usize);
    let mut visit = |s: &[f64]| {
        let w = pair.z(s).exp();
        sw += w;
        swr += w * pair.reward(s);
        count += 1;
    };
    match pair.dim() {
        1 => (0..points_per_dim).for_each(|i| visit(&[mid(i)])),
        _ => {
            for i in 0..points_per_dim {
                for j in 0..points_per_dim {
                    visit(&[mid(i), mid(j)]);
                }
            }
        }
    }
    (sw / count as f64, swr / sw)
}

/// Hoeffding relative half-width of (1/n)Σe^z around its mean at
/// confidence 1 − `delta`.
pub fn hoeffding_band(pair: AnalyticPair, mu: f64, n: usize, delta: f64) -> f64 {
    let (lo, hi) = pair.z_range();
    (hi.exp() - lo.exp()) * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt() / mu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub pair: AnalyticPair,
    pub dim: usize,
    pub n: usize,
    pub trials: usize,
    /// Quadrature of (1/vol C)∫e^z and of R.
    pub mu: f64,
    pub r: f64,
    pub mean_weight: f64,
    pub se_weight: f64,
    pub mean_r_hat: f64,
    pub sd_r_hat: f64,
    pub se_r_hat: f64,
    /// Multiplicative band half-width ε_n.
    pub band: f64,
    /// |mean R̂ − R| ≤ ε_n R
    pub within_band: bool,
    /// |mean (1/n)Σe^z − μ| ≤ 3 SE
    pub weight_within_3se: bool,
    /// |mean R̂ − R| ≤ 3 SE (ratio estimators carry an O(1/n) bias)
    pub r_within_3se: bool,
}

impl LemmaCheck {
    pub fn passed(&self) -> bool {
        self.within_band && self.weight_within_3se
    }
}

pub const LEMMA_DELTA: f64 = 0.05;

/// Draws `trials` neighborhoods of `n` uniform samples in C and compares
/// the sample weight mean and the ratio estimate R̂ with quadrature.
pub fn verify_sampling_lemma(pair: AnalyticPair, n: usize, trials: usize, seed: u64) -> Result<LemmaCheck> {
    if n == 0 || trials < 2 {
        return Err(Error::Config("the lemma check needs n >= 1 and at least two trials".into()));
    }
    let grid = if pair.dim() == 1 { 20_000 } else { 400 };
    let (mu, r) = quadrature(pair, grid);
    let mut rng = rng::stream(seed, &format!("lemma-{}-{n}", pair.name()));
    let mut weights = Vec::with_capacity(trials);
    let mut estimates = Vec::with_capacity(trials);
    let mut s = vec![0.0; pair.dim()];
    for _ in 0..trials {
        let (mut sw, mut swr) = (0.0, 0.0);
        for _ in 0..n {
            for x in s.iter_mut() {
                *x = rng.gen_range(-LEMMA_EPS..=LEMMA_EPS);
            }
            let w = pair.z(&s).exp();
            sw += w;
            swr += w * pair.reward(&s);
        }
        weights.push(sw / n as f64);
        estimates.push(swr / sw);
    }
    let t = (trials as f64).sqrt();
    let (mean_weight, sd_w) = mean_std(&weights);
    let (mean_r_hat, sd_r_hat) = mean_std(&estimates);
    let (se_weight, se_r_hat) = (sd_w / t, sd_r_hat / t);
    let band = hoeffding_band(pair, mu, n, LEMMA_DELTA);
    Ok(LemmaCheck {
        pair,
        dim: pair.dim(),
        n,
        trials,
        mu,
        r,
        mean_weight,
        se_weight,
        mean_r_hat,
        sd_r_hat,
        se_r_hat,
        band,
        within_band: (mean_r_hat - r).abs() <= band * r,
        weight_within_3se: (mean_weight - mu).abs() <= 3.0 * se_weight + 1e-12 * mu,
        r_within_3se: (mean_r_hat - r).abs() <= 3.0 * se_r_hat,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub checks: Vec<LemmaCheck>,
    /// For each pair, spread of R̂ and band both decrease along `ns`.
    pub spread_shrinks: bool,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.spread_shrinks && self.checks.iter().all(LemmaCheck::passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("  pair        n     R          mean R^    band     in band  w 3SE  R 3SE  sd R^\n");
        for c in &self.checks {
            s.push_str(&format!(
                "  {:<10} {:>5} {:>9.6} {:>9.6} {:>8.4} {:>7} {:>6} {:>6} {:>8.5}\n",
                c.pair.name(),
                c.n,
                c.r,
                c.mean_r_hat,
                c.band,
                c.within_band,
                c.weight_within_3se,
                c.r_within_3se,
                c.sd_r_hat
            ));
        }
        s.push_str(&format!("  spread shrinks with n: {}\n", self.spread_shrinks));
        s
    }
}

pub fn lemma_suite(pairs: &[AnalyticPair], ns: &[usize], trials: usize, seed: u64) -> Result<LemmaReport> {
    let mut checks = Vec::new();
    let mut spread_shrinks = true;
    for &pair in pairs {
        let row: Vec<LemmaCheck> = ns
            .iter()
            .map(|&n| verify_sampling_lemma(pair, n, trials, seed))
            .collect::<Result<_>>()?;
        for w in row.windows(2) {
            if !(w[1].sd_r_hat < w[0].sd_r_hat && w[1].band < w[0].band) {
                spread_shrinks = false;
            }
        }
        checks.extend(row);
    }
    Ok(LemmaReport { checks, spread_shrinks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_score_is_plain_mean() {
        let c = verify_sampling_lemma(AnalyticPair::Constant, 10, 200, 1).unwrap();
        assert!((c.mean_weight - 1f64.exp()).abs() < 1e-12);
        assert!(c.se_weight < 1e-12);
        assert!(c.weight_within_3se);
        assert!((c.mu - 1f64.exp()).abs() < 1e-12);
        assert!((c.r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadrature_closed_form_linear() {
        // (1/0.2)∫_{−0.1}^{0.1} e^{1+10s} ds = (e² − 1)/2
        let (mu, _) = quadrature(AnalyticPair::Linear1d, 20_000);
        assert!((mu - (2f64.exp() - 1.0) / 2.0).abs() < 1e-7);
    }

    #[test]
    fn band_shrinks_with_n() {
        let a = hoeffding_band(AnalyticPair::Wave2d, 3.0, 10, 0.05);
        let b = hoeffding_band(AnalyticPair::Wave2d, 3.0, 100, 0.05);
        assert!(b < a);
        assert!((a / b - 10f64.sqrt()).abs() < 1e-12);
    }
}
