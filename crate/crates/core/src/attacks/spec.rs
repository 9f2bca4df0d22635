use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Identity,
    Fgsm,
    Pgd,
    Mad,
    Timed,
    CriticalPoint,
    Learned,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Identity => "identity",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Mad => "mad",
            AttackKind::Timed => "timed",
            AttackKind::CriticalPoint => "critical-point",
            AttackKind::Learned => "learned",
        }
    }

    pub fn is_myopic(self) -> bool {
        matches!(
            self,
            AttackKind::Identity | AttackKind::Fgsm | AttackKind::Pgd | AttackKind::Mad
        )
    }

    fn parse(text: &str) -> Option<Self> {
        Some(match text {
            "identity" | "none" => AttackKind::Identity,
            "fgsm" => AttackKind::Fgsm,
            "pgd" => AttackKind::Pgd,
            "mad" => AttackKind::Mad,
            "timed" => AttackKind::Timed,
            "critical-point" | "critical_point" | "cp" => AttackKind::CriticalPoint,
            "learned" => AttackKind::Learned,
            _ => return None,
        })
    }
}

/// Objective maximised by gradient attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Surrogate {
    /// −log π(a*|x) where a* is the greedy action at the clean observation.
    NegLogProb,
    /// KL(π(·|s) ‖ π(·|x)).
    Kl,
}

pub const DEFAULT_EPS: f64 = 0.1;
pub const DEFAULT_MAD_EPS: f64 = 0.15;
pub const DEFAULT_STEPS: usize = 10;

fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_threshold() -> f64 {
    0.5
}
fn default_budget() -> f64 {
    1.0
}
fn default_depth() -> usize {
    2
}
fn default_branches() -> usize {
    usize::MAX
}
fn default_base() -> AttackKind {
    AttackKind::Pgd
}
fn default_directions() -> usize {
    usize::MAX
}

/// Full description of an observation adversary.
///
/// Text form: `kind=pgd,eps=0.1,k=10`, `pgd:eps=0.1,k=10` or a bare kind
/// name. Recognised keys are `kind eps k alpha loss threshold budget depth
/// branches random_start base m path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttackSpec")]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub eps: f64,
    pub steps: usize,
    /// Step size; `None` means 2.5·ε/k.
    pub alpha: Option<f64>,
    /// `None` picks the kind's natural objective (KL for MAD).
    pub loss: Option<Surrogate>,
    /// Preference-gap threshold of the timed attack.
    pub threshold: f64,
    /// Fraction of the episode horizon the timed attack may perturb.
    pub budget: f64,
    /// Lookahead depth N of the critical-point attack.
    pub depth: usize,
    pub branches: usize,
    pub random_start: bool,
    /// Myopic attack used by the timed and critical-point attacks.
    pub base: AttackKind,
    /// Number of perturbation directions of the learned adversary.
    pub directions: usize,
    /// Checkpoint of a trained learned adversary.
    pub path: Option<String>,
}

#[derive(Deserialize)]
struct RawAttackSpec {
    kind: AttackKind,
    #[serde(default)]
    eps: Option<f64>,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    loss: Option<Surrogate>,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default = "default_budget")]
    budget: f64,
    #[serde(default = "default_depth")]
    depth: usize,
    #[serde(default = "default_branches")]
    branches: usize,
    #[serde(default)]
    random_start: bool,
    #[serde(default = "default_base")]
    base: AttackKind,
    #[serde(default = "default_directions")]
    directions: usize,
    #[serde(default)]
    path: Option<String>,
}


impl TryFrom<RawAttackSpec> for AttackSpec {
    type Error = Error;
    fn try_from(raw: RawAttackSpec) -> Result<Self> {
        let spec = AttackSpec {
            eps: raw.eps.unwrap_or(AttackSpec::new(raw.kind).eps),
            kind: raw.kind,
            steps: raw.steps,
            alpha: raw.alpha,
            loss: raw.loss,
            threshold: raw.threshold,
            budget: raw.budget,
            depth: raw.depth,
            branches: raw.branches,
            random_start: raw.random_start,
            base: raw.base,
            directions: raw.directions,
            path: raw.path,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl AttackSpec {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            eps: if kind == AttackKind::Mad {
                DEFAULT_MAD_EPS
            } else {
                DEFAULT_EPS
            },
            steps: DEFAULT_STEPS,
            alpha: None,
            loss: None,
            threshold: default_threshold(),
            budget: default_budget(),
            depth: default_depth(),
            branches: default_branches(),
            random_start: false,
            base: default_base(),
            directions: default_directions(),
            path: None,
        }
    }

    pub fn identity() -> Self {
        Self::new(AttackKind::Identity)
    }

    pub fn pgd(eps: f64, steps: usize) -> Self {
        Self {
            eps,
            steps,
            ..Self::new(AttackKind::Pgd)
        }
    }

    pub fn fgsm(eps: f64) -> Self {
        Self {
            eps,
            steps: 1,
            ..Self::new(AttackKind::Fgsm)
        }
    }

    pub fn mad(eps: f64, steps: usize) -> Self {
        Self {
            eps,
            steps,
            ..Self::new(AttackKind::Mad)
        }
    }

    /// Step size actually used.
    pub fn step_size(&self) -> f64 {
        self.alpha
            .unwrap_or(2.5 * self.eps / self.steps.max(1) as f64)
    }

    pub fn surrogate(&self) -> Surrogate {
        self.loss.unwrap_or(match self.kind {
            AttackKind::Mad => Surrogate::Kl,
            _ => Surrogate::NegLogProb,
        })
    }

    /// The myopic attack a timed or critical-point attack delegates to.
    pub fn base_spec(&self) -> AttackSpec {
        AttackSpec {
            kind: self.base,
            base: self.base,
            loss: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::AttackSpec {
                spec: self.to_string(),
                reason: reason.into(),
            })
        };
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return bad("eps must be a finite number >= 0");
        }
        if self.steps == 0 {
            return bad("k must be >= 1");
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return bad("alpha must be > 0");
            }
        }
        if !(0.0..=1.0).contains(&self.budget) {
            return bad("budget must be a fraction in [0, 1]");
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite");
        }
        if self.branches == 0 || self.directions == 0 {
            return bad("branches and m must be >= 1");
        }
        if !self.base.is_myopic() {
            return bad("base must be one of identity, fgsm, pgd, mad");
        }
        if self.kind == AttackKind::Learned && self.path.is_none() {
            return bad("learned attacks need path=<checkpoint>");
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |reason: String| Error::AttackSpec {
            spec: text.to_string(),
            reason,
        };
        let text_trim = text.trim();
        let (head, rest) = match text_trim.split_once(':') {
            Some((h, r)) if !h.contains('=') => (Some(h.trim()), r),
            _ => (None, text_trim),
        };
        let mut pairs = Vec::new();
        let mut kind = head.map(str::to_string);
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some((k, v)) => {
                    let (k, v) = (k.trim(), v.trim());
                    if k == "kind" {
                        kind = Some(v.to_string());
                    } else {
                        pairs.push((k.to_string(), v.to_string()));
                    }
                }
                None if kind.is_none() => kind = Some(part.to_string()),
                None => return Err(err(format!("expected key=value, got `{part}`"))),
            }
        }
        let kind_text = kind.ok_or_else(|| err("missing attack kind".into()))?;
        let kind = AttackKind::parse(&kind_text)
            .ok_or_else(|| err(format!("unknown attack kind `{kind_text}`")))?;
        let mut spec = AttackSpec::new(kind);
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| err(format!("`{v}` is not a number")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| err(format!("`{v}` is not a non-negative integer")))
        };
        for (k, v) in pairs {
            match k.as_str() {
                "eps" | "epsilon" => spec.eps = num(&v)?,
                "k" | "steps" => spec.steps = int(&v)?,
                "alpha" => spec.alpha = Some(num(&v)?),
                "loss" => {
                    spec.loss = Some(match v.as_str() {
                        "nll" | "neg-log-prob" => Surrogate::NegLogProb,
                        "kl" => Surrogate::Kl,
                        _ => return Err(err(format!("unknown loss `{v}`"))),
                    })
                }
                "threshold" => spec.threshold = num(&v)?,
                "budget" => spec.budget = num(&v)?,
                "depth" | "n" => spec.depth = int(&v)?,
                "branches" => spec.branches = int(&v)?,
                "random_start" | "random-start" => {
                    spec.random_start = match v.as_str() {
                        "true" | "1" | "on" => true,
                        "false" | "0" | "off" => false,
                        _ => return Err(err(format!("`{v}` is not a boolean"))),
                    }
                }
                "base" => {
                    spec.base = AttackKind::parse(&v)
                        .ok_or_else(|| err(format!("unknown base attack `{v}`")))?
                }
                "m" | "directions" => spec.directions = int(&v)?,
                "path" => spec.path = Some(v),
                _ => return Err(err(format!("unknown key `{k}`"))),
            }
        }
        spec.validate().map_err(|e| match e {
            Error::AttackSpec { reason, .. } => err(reason),
            other => other,
        })?;
        Ok(spec)
    }

    /// Short label for tables, e.g. `pgd:eps=0.1,k=10`.
    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Identity => "identity".into(),
            AttackKind::Fgsm => format!("fgsm:eps={}", self.eps),
            AttackKind::Pgd | AttackKind::Mad => {
                format!("{}:eps={},k={}", self.kind.name(), self.eps, self.steps)
            }
            AttackKind::Timed => format!(
                "timed:eps={},base={},threshold={},budget={}",
                self.eps,
                self.base.name(),
                self.threshold,
                self.budget
            ),
            AttackKind::CriticalPoint => {
                format!("critical-point:eps={},depth={}", self.eps, self.depth)
            }
            AttackKind::Learned => format!("learned:eps={}", self.eps),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={},eps={},k={}", self.kind.name(), self.eps, self.steps)?;
        if let Some(a) = self.alpha {
            write!(f, ",alpha={a}")?;
        }
        if let Some(l) = self.loss {
            let l = match l {
                Surrogate::NegLogProb => "nll",
                Surrogate::Kl => "kl",
            };
            write!(f, ",loss={l}")?;
        }
        match self.kind {
            AttackKind::Timed => write!(
                f,
                ",threshold={},budget={},base={}",
                self.threshold,
                self.budget,
                self.base.name()
            )?,
            AttackKind::CriticalPoint => {
                write!(f, ",depth={},base={}", self.depth, self.base.name())?;
                if self.branches != usize::MAX {
                    write!(f, ",branches={}", self.branches)?;
                }
            }
            AttackKind::Learned => {
                if self.directions != usize::MAX {
                    write!(f, ",m={}", self.directions)?;
                }
                if let Some(p) = &self.path {
                    write!(f, ",path={p}")?;
                }
            }
            _ => {}
        }
        if self.random_start {
            write!(f, ",random_start=true")?;
        }
        Ok(())
    }
}

impl FromStr for AttackSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AttackSpec::parse(s)
    }
}
