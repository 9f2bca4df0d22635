use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agents::{DqnConfig, PpoConfig};
use crate::attacks::AttackSpec;
use crate::belief::BeliefConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Ppo,
    DeltaPpo,
    Dqn,
    DeltaDqn,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::DeltaPpo => "delta-ppo",
            Algo::Dqn => "dqn",
            Algo::DeltaDqn => "delta-dqn",
        }
    }

    pub fn is_delta(self) -> bool {
        matches!(self, Algo::DeltaPpo | Algo::DeltaDqn)
    }

    pub fn is_ppo(self) -> bool {
        matches!(self, Algo::Ppo | Algo::DeltaPpo)
    }
}

/// An attack given either as a flag string (`pgd:eps=0.1,k=10`) or as an
/// object with the same keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttackEntry {
    Text(String),
    Spec(AttackSpec),
}

impl AttackEntry {
    pub fn resolve(&self) -> Result<AttackSpec> {
        match self {
            AttackEntry::Text(s) => AttackSpec::parse(s),
            AttackEntry::Spec(s) => {
                s.validate()?;
                Ok(s.clone())
            }
        }
    }
}

impl Default for AttackEntry {
    fn default() -> Self {
        AttackEntry::Text("identity".into())
    }
}

fn default_episodes() -> usize {
    50
}

fn default_attacks() -> Vec<AttackEntry> {
    vec![AttackEntry::default()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Evaluation seeds per trained agent.
    #[serde(default = "default_eval_seeds")]
    pub seeds: Vec<u64>,
}

fn default_eval_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: default_episodes(),
            seeds: default_eval_seeds(),
        }
    }
}

/// One experiment: sections env, algo, belief, attack_train, attacks_eval,
/// optim and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub env: EnvConfig,
    pub algo: Algo,
    /// λ for the δ variants (default 0.2); must be absent or 0 for vanilla.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Belief for the δ variants (default A3B); must be absent or `none`
    /// for vanilla.
    #[serde(default)]
    pub belief: Option<BeliefConfig>,
    #[serde(default)]
    pub attack_train: AttackEntry,
    #[serde(default = "default_attacks")]
    pub attacks_eval: Vec<AttackEntry>,
    /// Trainer hyperparameters (PPO or DQN field names).
    #[serde(default)]
    pub optim: Map<String, Value>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval: EvalSettings,
}

/// Trainer configuration resolved from a [`RunConfig`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrainerConfig {
    Ppo(PpoConfig),
    Dqn(DqnConfig),
}

impl TrainerConfig {
    pub fn lambda(&self) -> f64 {
        match self {
            TrainerConfig::Ppo(c) => c.lambda,
            TrainerConfig::Dqn(c) => c.lambda,
        }
    }
}

impl RunConfig {
    /// Parses a config document; parse errors carry line, column and the
    /// offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Vec<u8>)> {
        let bytes = crate::error::read_input(path.as_ref())?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
        Ok((Self::from_json(text)?, bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.algo.name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.attacks_eval.is_empty() {
            return Err(Error::Config("attacks_eval must list at least one attack".into()));
        }
        if !self.algo.is_delta() {
            if self.lambda.is_some_and(|l| l != 0.0) {
                return Err(Error::Config(format!("{} takes no lambda", self.algo.name())));
            }
            if self.belief.as_ref().is_some_and(|b| b.kind != crate::belief::BeliefKind::None) {
                return Err(Error::Config(format!("{} takes no belief", self.algo.name())));
            }
        }
        for e in &self.attacks_eval {
            e.resolve()?;
        }
        self.env.build()?;
        self.trainer()?;
        Ok(())
    }

    pub fn attacks(&self) -> Result<Vec<AttackSpec>> {
        self.attacks_eval.iter().map(AttackEntry::resolve).collect()
    }

    pub fn trainer(&self) -> Result<TrainerConfig> {
        let mut optim = self.optim.clone();
        for key in ["lambda", "belief", "attack_train"] {
            if optim.contains_key(key) {
                return Err(Error::Config(format!("`{key}` belongs at the top level, not in optim")));
            }
        }
        let (lambda, belief) = if self.algo.is_delta() {
            (self.lambda.unwrap_or(0.2), self.belief.clone().unwrap_or_default())
        } else {
            (0.0, BeliefConfig::none())
        };
        optim.insert("lambda".into(), serde_json::to_value(lambda)?);
        optim.insert("belief".into(), serde_json::to_value(&belief)?);
        optim.insert("attack_train".into(), serde_json::to_value(self.attack_train.resolve()?)?);
        let value = Value::Object(optim);
        let bad = |e: serde_json::Error| Error::Config(format!("invalid optim section: {e}"));
        let cfg = if self.algo.is_ppo() {
            let c: PpoConfig = serde_json::from_value(value).map_err(bad)?;
            c.validate()?;
            TrainerConfig::Ppo(c)
        } else {
            let c: DqnConfig = serde_json::from_value(value).map_err(bad)?;
            c.validate()?;
            TrainerConfig::Dqn(c)
        };
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NAV: &str = r#"{"kind":"nav","dim":2,"goal":[0,0],"step_size":0.1,"actions":"discrete"}"#;

    fn doc(extra: &str) -> String {
        format!(r#"{{"env":{NAV},{extra}"seeds":[0]}}"#)
    }

    #[test]
    fn missing_algo_names_the_field() {
        let err = RunConfig::from_json(&doc("")).unwrap_err().to_string();
        assert!(err.contains("missing field `algo`"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn delta_defaults_and_vanilla_reduction() {
        let c = RunConfig::from_json(&doc(r#""algo":"delta-ppo","#)).unwrap();
        match c.trainer().unwrap() {
            TrainerConfig::Ppo(p) => {
                assert_eq!(p.lambda, 0.2);
                assert_eq!(p.belief.kind, crate::belief::BeliefKind::A3b);
            }
            _ => panic!(),
        }
        let c = RunConfig::from_json(&doc(r#""algo":"ppo","#)).unwrap();
        match c.trainer().unwrap() {
            TrainerConfig::Ppo(p) => assert_eq!(p, PpoConfig::vanilla()),
            _ => panic!(),
        }
        assert!(RunConfig::from_json(&doc(r#""algo":"dqn","lambda":0.3,"#)).is_err());
    }

    #[test]
    fn attacks_accept_strings_and_objects() {
        let c = RunConfig::from_json(&doc(
            r#""algo":"dqn","attacks_eval":["identity","mad:eps=0.15",{"kind":"pgd","eps":0.1,"steps":10}],"#,
        ))
        .unwrap();
        let a = c.attacks().unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[2], AttackSpec::pgd(0.1, 10));
        assert!(RunConfig::from_json(&doc(r#""algo":"dqn","attacks_eval":["pgd:eps=-1"],"#)).is_err());
    }

    #[test]
    fn optim_fields_are_checked() {
        assert!(RunConfig::from_json(&doc(r#""algo":"ppo","optim":{"iterations":3},"#)).is_ok());
        let e = RunConfig::from_json(&doc(r#""algo":"ppo","optim":{"iterationz":3},"#)).unwrap_err();
        assert!(e.to_string().contains("iterationz"));
        assert!(RunConfig::from_json(&doc(r#""algo":"ppo","optim":{"lambda":0.1},"#)).is_err());
    }
}
