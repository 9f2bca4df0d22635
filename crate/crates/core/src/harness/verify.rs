use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{
    lemma_suite, random_instance, random_line_instance, random_proxy, shift_chain_instance, stress_theorem1,
    verify_delta_star, verify_theorem1, verify_theorem2, AnalyticPair, FinitePomdp, LemmaReport,
    ObservationProxy, Prop1Check, SuiteConfig, TheoremReport,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Thm1,
    Thm2,
    Prop1,
    Lemma,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thm1" => Ok(Suite::Thm1),
            "thm2" => Ok(Suite::Thm2),
            "prop1" => Ok(Suite::Prop1),
            "lemma" => Ok(Suite::Lemma),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!("unknown suite `{other}` (thm1, thm2, prop1, lemma, all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub thm1_instances: usize,
    pub thm2_instances: usize,
    pub prop1_instances: usize,
    pub lemma_ns: Vec<usize>,
    pub lemma_trials: usize,
    /// Adversary grid resolution for the total-variation bound stress search.
    pub stress_steps: usize,
    /// Check a single saved instance instead of generating a suite.
    pub instance: Option<PathBuf>,
    pub suite: SuiteConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            thm1_instances: 100,
            thm2_instances: 50,
            prop1_instances: 30,
            lemma_ns: vec![10, 100, 1000],
            lemma_trials: 1000,
            stress_steps: 4,
            instance: None,
            suite: SuiteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub report: TheoremReport,
    /// Grid index of the adversary with the smallest margin.
    pub worst: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thm1: Option<TheoremReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thm1_stress: Option<StressReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thm2: Option<TheoremReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop1: Option<Vec<Prop1Check>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<LemmaReport>,
}

pub const PROP1_TOLERANCE: f64 = 1e-6;

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.thm1.as_ref().is_none_or(TheoremReport::passed)
            && self.thm1_stress.as_ref().is_none_or(|s| s.report.passed())
            && self.thm2.as_ref().is_none_or(TheoremReport::passed)
            && self.prop1.as_ref().is_none_or(|c| c.iter().all(|c| c.passed))
            && self.lemma.as_ref().is_none_or(LemmaReport::passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        if let Some(r) = &self.thm1 {
            s.push_str(&r.summary());
        }
        if let Some(r) = &self.thm1_stress {
            s.push_str(&format!(
                "thm1 stress: {} adversaries, {} violations, min margin {:.3e} (grid point {})\n",
                r.report.instances.len(),
                r.report.violations,
                r.report.min_margin,
                r.worst
            ));
        }
        if let Some(r) = &self.thm2 {
            s.push_str(&r.summary());
            s.push_str(&format!("  tighter than thm1 on instances {:?}\n", r.tighter));
        }
        if let Some(c) = &self.prop1 {
            let worst = c.iter().map(|c| c.max_abs_diff).fold(0.0, f64::max);
            let failed = c.iter().filter(|c| !c.passed).count();
            s.push_str(&format!(
                "prop1: {} proxies, {failed} failures, max |VI - enumeration| {worst:.3e}\n",
                c.len()
            ));
        }
        if let Some(r) = &self.lemma {
            s.push_str("lemma:\n");
            s.push_str(&r.summary());
        }
        s.push_str(if self.passed() { "PASS\n" } else { "FAIL\n" });
        s
    }
}

pub fn thm1_instances(seed: u64, count: usize) -> Result<Vec<FinitePomdp>> {
    let mut r = rng::stream(seed, "verify-thm1");
    (0..count)
        .map(|i| {
            let n = 2 + i % 5;
            let a = 1 + (i / 5) % 3;
            let gamma = if i % 2 == 0 { 0.5 } else { 0.9 };
            random_instance(&mut r, n, a, gamma)
        })
        .collect()
}

pub fn thm2_instances(seed: u64, count: usize) -> Result<Vec<FinitePomdp>> {
    let mut r = rng::stream(seed, "verify-thm2");
    let mut out = (0..count)
        .map(|i| {
            let n = 4 + i % 7;
            let a = 1 + (i / 7) % 2;
            let gamma = if i % 2 == 0 { 0.5 } else { 0.9 };
            random_line_instance(&mut r, n, a, gamma, 0.1)
        })
        .collect::<Result<Vec<_>>>()?;
    out.push(shift_chain_instance(12, 0.1, 0.9)?);
    Ok(out)
}

pub fn prop1_proxies(seed: u64, count: usize) -> Result<Vec<ObservationProxy>> {
    let mut r = rng::stream(seed, "verify-prop1");
    (0..count)
        .map(|i| {
            let n = 1 + i % 4;
            let a = 1 + (i / 4) % 3;
            let gamma = if i % 3 == 0 { 0.5 } else { 0.9 };
            if i % 2 == 0 {
                Ok(random_proxy(&mut r, n, a, gamma))
            } else {
                ObservationProxy::from_pomdp(&random_instance(&mut r, n.max(2), a, gamma)?)
            }
        })
        .collect()
}

/// Runs the selected verification suites.
pub fn run_verify(suite: Suite, opts: &VerifyOptions) -> Result<VerifyOutcome> {
    let mut out = VerifyOutcome {
        thm1: None,
        thm1_stress: None,
        thm2: None,
        prop1: None,
        lemma: None,
    };
    let want = |s: Suite| suite == s || suite == Suite::All;
    let saved = opts.instance.as_ref().map(FinitePomdp::load).transpose()?;
    if want(Suite::Thm1) {
        let instances = match &saved {
            Some(p) => vec![p.clone()],
            None => thm1_instances(opts.seed, opts.thm1_instances)?,
        };
        out.thm1 = Some(verify_theorem1(&instances, &opts.suite)?);
        if opts.stress_steps > 0 {
            let base = match &saved {
                Some(p) => p.clone(),
                None => random_instance(&mut rng::stream(opts.seed, "verify-stress"), 3, 2, 0.9)?,
            };
            let (report, worst) = stress_theorem1(&base, opts.stress_steps, &opts.suite)?;
            out.thm1_stress = Some(StressReport { report, worst });
        }
    }
    if want(Suite::Thm2) {
        let instances = match &saved {
            Some(p) => vec![p.clone()],
            None => thm2_instances(opts.seed, opts.thm2_instances)?,
        };
        out.thm2 = Some(verify_theorem2(&instances, &opts.suite)?);
    }
    if want(Suite::Prop1) {
        let proxies = match &saved {
            Some(p) => vec![ObservationProxy::from_pomdp(p)?],
            None => prop1_proxies(opts.seed, opts.prop1_instances)?,
        };
        out.prop1 = Some(verify_delta_star(&proxies, PROP1_TOLERANCE)?);
    }
    if want(Suite::Lemma) {
        out.lemma = Some(lemma_suite(&AnalyticPair::SUITE, &opts.lemma_ns, opts.lemma_trials, opts.seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let opts = VerifyOptions {
            thm1_instances: 6,
            thm2_instances: 3,
            prop1_instances: 6,
            lemma_ns: vec![10, 100],
            lemma_trials: 200,
            stress_steps: 2,
            ..Default::default()
        };
        let out = run_verify(Suite::All, &opts).unwrap();
        assert!(out.passed(), "{}", out.summary());
        let json = serde_json::to_string(&out).unwrap();
        let back: VerifyOutcome = serde_json::from_str(&json).unwrap();
        assert_eq!(back.passed(), out.passed());
    }

    #[test]
    fn suite_names() {
        assert_eq!("thm2".parse::<Suite>().unwrap(), Suite::Thm2);
        assert!("thm3".parse::<Suite>().is_err());
    }
}
