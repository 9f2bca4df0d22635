use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Algo, RunConfig, TrainerConfig};
use super::manifest::{sha256_hex, write_atomic, write_json_atomic, EvalInputs, RunKind, RunManifest};
use crate::agents::{
    evaluate, mean_std, AgentBundle, DqnCheckpoint, DqnIterationStats, DqnTrainer, PpoCheckpoint,
    PpoIterationStats, PpoTrainer,
};
use crate::attacks::{Adversary, AttackSpec};
use crate::belief::{build_belief, immediate_counterfactual_error, BeliefConfig, BeliefParticles};
use crate::diffnet::kl_divergence;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng;
use crate::space::{linf, Action, ActionSpace};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ACOE_OUT";

/// `flag`, else `$ACOE_OUT`, else `./runs`.
pub fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone)]
pub struct HarnessOptions {
    pub out_root: PathBuf,
    /// Continue from per-seed checkpoints in an existing run directory.
    pub resume: bool,
    pub quiet: bool,
    /// Iterations between checkpoints (0 disables them).
    pub checkpoint_every: usize,
}

impl HarnessOptions {
    pub fn new(out_root: impl Into<PathBuf>) -> Self {
        Self {
            out_root: out_root.into(),
            resume: false,
            quiet: true,
            checkpoint_every: 1,
        }
    }

    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// A trained agent as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFile {
    pub label: String,
    pub algo: Algo,
    pub seed: u64,
    pub env: EnvConfig,
    pub lambda: f64,
    pub belief: BeliefConfig,
    pub agent: AgentBundle,
}

impl BundleFile {
    pub fn load(path: &Path) -> Result<Self> {
        let b: Self = serde_json::from_slice(&crate::error::read_input(path)?)
            .map_err(|e| Error::Config(format!("{} is not a bundle: {e}", path.display())))?;
        b.check_env(&b.env)?;
        Ok(b)
    }

    pub fn policy(&self) -> Result<Arc<dyn Policy>> {
        self.agent.policy()
    }

    /// Fails unless the agent's input and output sizes fit `env`.
    pub fn check_env(&self, env: &EnvConfig) -> Result<()> {
        let e = env.build()?;
        let actions = match e.action_space() {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        };
        if e.obs_dim() != self.agent.obs_dim() || actions != self.agent.action_count() {
            return Err(Error::Config(format!(
                "bundle `{}` expects {} inputs and {} actions, environment `{}` has {} and {}",
                self.label,
                self.agent.obs_dim(),
                self.agent.action_count(),
                e.name(),
                e.obs_dim(),
                actions
            )));
        }
        Ok(())
    }
}

/// One row of a training metrics CSV. DQN rows report the Q loss as
/// `main_loss` and leave `value_loss` and `mean_delta_to_go` at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub iteration: usize,
    pub steps: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_delta_r: f64,
    pub mean_delta_to_go: f64,
    pub main_loss: f64,
    pub value_loss: f64,
    pub delta_loss: f64,
    pub explore: f64,
}

impl MetricsRow {
    fn from_ppo(seed: u64, s: &PpoIterationStats) -> Self {
        Self {
            seed,
            iteration: s.iteration,
            steps: s.steps,
            episodes: s.episodes,
            mean_return: s.mean_return,
            mean_delta_r: s.mean_delta_r,
            mean_delta_to_go: s.mean_delta_to_go,
            main_loss: s.policy_loss,
            value_loss: s.value_loss,
            delta_loss: s.delta_loss,
            explore: 0.0,
        }
    }

    fn from_dqn(seed: u64, s: &DqnIterationStats) -> Self {
        Self {
            seed,
            iteration: s.iteration,
            steps: s.steps,
            episodes: s.episodes,
            mean_return: s.mean_return,
            mean_delta_r: s.mean_delta_r,
            mean_delta_to_go: 0.0,
            main_loss: s.q_loss,
            value_loss: 0.0,
            delta_loss: s.delta_loss,
            explore: s.explore,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let cells = [
            self.mean_return,
            self.mean_delta_r,
            self.mean_delta_to_go,
            self.main_loss,
            self.value_loss,
            self.delta_loss,
            self.explore,
        ];
        crate::error::ensure_finite(&cells, || format!("metrics row {} of seed {}", self.iteration, self.seed))
    }
}

fn append_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub bundles: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub manifest: PathBuf,
}

pub fn run_dir_name(cfg: &RunConfig, bytes: &[u8]) -> String {
    format!("{}-{}", cfg.label(), &sha256_hex(bytes)[..8])
}

/// `train <config>`: one trainer per seed, sequentially.
pub fn train(config_path: &Path, opts: &HarnessOptions) -> Result<TrainOutcome> {
    let (cfg, bytes) = RunConfig::load(config_path)?;
    let dir = opts.out_root.join(run_dir_name(&cfg, &bytes));
    train_config(&cfg, &bytes, &dir, opts)
}

/// Re-runs the training recorded by a manifest into `opts.out_root`.
pub fn train_from_manifest(manifest_path: &Path, opts: &HarnessOptions) -> Result<TrainOutcome> {
    let m = RunManifest::load(manifest_path)?;
    if m.kind != RunKind::Train {
        return Err(Error::Config("manifest does not describe a training run".into()));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = m.verify_config(base)?;
    let cfg = RunConfig::from_json(std::str::from_utf8(&bytes).map_err(|e| Error::Config(e.to_string()))?)?;
    let dir = opts.out_root.join(run_dir_name(&cfg, &bytes));
    train_config(&cfg, &bytes, &dir, opts)
}

pub fn train_config(cfg: &RunConfig, bytes: &[u8], dir: &Path, opts: &HarnessOptions) -> Result<TrainOutcome> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("config.json"), bytes)?;
    let attacks: Vec<String> = cfg.attacks()?.iter().map(AttackSpec::label).collect();
    let mut manifest = RunManifest::start(RunKind::Train, "config.json".into(), bytes, cfg.seeds.clone(), attacks);
    let manifest_path = dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    match train_seeds(cfg, dir, opts) {
        Ok((bundles, summary)) => {
            let metrics = dir.join("metrics.csv");
            let mut rows = Vec::new();
            for seed in &cfg.seeds {
                rows.extend(read_metrics(&seed_dir(dir, *seed).join("metrics.csv"))?);
            }
            write_rows(&metrics, &rows)?;
            manifest.outputs = std::iter::once(PathBuf::from("metrics.csv"))
                .chain(bundles.iter().map(|b| b.strip_prefix(dir).unwrap_or(b).to_path_buf()))
                .collect();
            manifest.finish(summary);
            manifest.write(&manifest_path)?;
            Ok(TrainOutcome {
                run_dir: dir.to_path_buf(),
                bundles,
                metrics,
                manifest: manifest_path,
            })
        }
        Err(e) => {
            manifest.fail(&e);
            manifest.write(&manifest_path)?;
            Err(e)
        }
    }
}

fn seed_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}"))
}

fn train_seeds(cfg: &RunConfig, dir: &Path, opts: &HarnessOptions) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let trainer_cfg = cfg.trainer()?;
    let mut bundles = Vec::new();
    let mut summary = serde_json::Map::new();
    for &seed in &cfg.seeds {
        let sdir = seed_dir(dir, seed);
        std::fs::create_dir_all(&sdir)?;
        let bundle_path = sdir.join("bundle.json");
        let metrics_path = sdir.join("metrics.csv");
        if opts.resume && bundle_path.exists() {
            opts.log(format!("seed {seed}: already trained"));
        } else {
            let agent = train_one(cfg, &trainer_cfg, seed, &sdir, &metrics_path, opts)?;
            let file = BundleFile {
                label: cfg.label(),
                algo: cfg.algo,
                seed,
                env: cfg.env.clone(),
                lambda: trainer_cfg.lambda(),
                belief: match &trainer_cfg {
                    TrainerConfig::Ppo(c) => c.belief.clone(),
                    TrainerConfig::Dqn(c) => c.belief.clone(),
                },
                agent,
            };
            write_json_atomic(&bundle_path, &file)?;
        }
        let rows = read_metrics(&metrics_path)?;
        let last = rows.iter().rev().take(5).map(|r| r.mean_return).collect::<Vec<_>>();
        summary.insert(
            format!("seed-{seed}"),
            serde_json::json!({
                "iterations": rows.len(),
                "final_mean_return": mean_std(&last).0,
            }),
        );
        bundles.push(bundle_path);
    }
    Ok((bundles, serde_json::Value::Object(summary)))
}

fn keep_rows_through(path: &Path, iteration: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let rows: Vec<MetricsRow> = read_metrics(path)?.into_iter().filter(|r| r.iteration <= iteration).collect();
    write_rows(path, &rows)
}

fn train_one(
    cfg: &RunConfig,
    trainer_cfg: &TrainerConfig,
    seed: u64,
    sdir: &Path,
    metrics_path: &Path,
    opts: &HarnessOptions,
) -> Result<AgentBundle> {
    let ckpt_path = sdir.join("checkpoint.json");
    let resume_from = opts.resume && ckpt_path.exists();
    if !resume_from && metrics_path.exists() {
        std::fs::remove_file(metrics_path)?;
    }
    let env_cfg = cfg.env.clone();
    let factory = move |_: usize| env_cfg.build();
    match trainer_cfg {
        TrainerConfig::Ppo(pc) => {
            let mut t = if resume_from {
                let c: PpoCheckpoint = serde_json::from_str(&std::fs::read_to_string(&ckpt_path)?)?;
                keep_rows_through(metrics_path, c.iteration)?;
                opts.log(format!("seed {seed}: resuming at iteration {}", c.iteration));
                PpoTrainer::resume(c, &factory)?
            } else {
                PpoTrainer::new(pc.clone(), &factory, seed)?
            };
            while !t.is_finished() {
                let stats = t.iterate()?;
                let row = MetricsRow::from_ppo(seed, &stats);
                row.check_finite()?;
                append_rows(metrics_path, &[row])?;
                opts.log(format!("seed {seed} iter {} return {:.3}", stats.iteration, stats.mean_return));
                if opts.checkpoint_every > 0 && t.iteration() % opts.checkpoint_every == 0 {
                    write_json_atomic(&ckpt_path, &t.checkpoint())?;
                }
            }
            Ok(t.bundle())
        }
        TrainerConfig::Dqn(dc) => {
            let mut t = if resume_from {
                let c: DqnCheckpoint = serde_json::from_str(&std::fs::read_to_string(&ckpt_path)?)?;
                keep_rows_through(metrics_path, c.iteration)?;
                opts.log(format!("seed {seed}: resuming at step {}", c.step));
                DqnTrainer::resume(c, cfg.env.build()?)?
            } else {
                DqnTrainer::new(dc.clone(), cfg.env.build()?, seed)?
            };
            let mut k = 0usize;
            while !t.is_finished() {
                let stats = t.iterate()?;
                let row = MetricsRow::from_dqn(seed, &stats);
                row.check_finite()?;
                append_rows(metrics_path, &[row])?;
                opts.log(format!("seed {seed} step {} return {:.3}", t.step_count(), stats.mean_return));
                k += 1;
                if opts.checkpoint_every > 0 && k % opts.checkpoint_every == 0 {
                    write_json_atomic(&ckpt_path, &t.checkpoint())?;
                }
            }
            Ok(t.bundle())
        }
    }
}

/// One evaluation table row: an agent (one bundle, or all bundles sharing
/// a label when `seed` is absent) against one attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub agent: String,
    pub seed: Option<u64>,
    pub attack: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub agent: String,
    pub bundle_seed: u64,
    pub eval_seed: u64,
    pub attack: String,
    pub episode: usize,
    pub episode_seed: u64,
    pub total_return: f64,
    pub length: usize,
    pub attacked_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    /// Bundle files or training run directories.
    pub bundles: Vec<PathBuf>,
    pub attacks: Vec<AttackSpec>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Overrides the environment stored in the bundles.
    #[serde(default)]
    pub env: Option<EnvConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub dir: PathBuf,
    pub rows: Vec<EvalRow>,
    pub episodes: Vec<EpisodeRow>,
    pub manifest: PathBuf,
}

impl EvalOutcome {
    pub fn table(&self) -> String {
        let mut s = format!("{:<28} {:<28} {:>8} {:>18}\n", "agent", "attack", "episodes", "return");
        for r in &self.rows {
            let agent = match r.seed {
                Some(seed) => format!("{}/seed-{seed}", r.agent),
                None => r.agent.clone(),
            };
            s.push_str(&format!(
                "{:<28} {:<28} {:>8} {:>9.3} ± {:<7.3}\n",
                agent, r.attack, r.episodes, r.mean_return, r.std_return
            ));
        }
        s
    }
}

/// Expands run directories into their bundle files.
pub fn resolve_bundles(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path().join("bundle.json")))
                .filter(|b| b.exists())
                .collect();
            if found.is_empty() {
                return Err(Error::Config(format!("{} holds no bundles", p.display())));
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Evaluates every bundle against every attack on every eval seed.
pub fn evaluate_bundles(req: &EvalRequest) -> Result<(Vec<EvalRow>, Vec<EpisodeRow>)> {
    if req.attacks.is_empty() || req.seeds.is_empty() || req.bundles.is_empty() {
        return Err(Error::Config("eval needs at least one bundle, attack and seed".into()));
    }
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    let mut pooled: Vec<(String, String, Vec<f64>)> = Vec::new();
    for path in resolve_bundles(&req.bundles)? {
        let b = BundleFile::load(&path)?;
        let env_cfg = req.env.clone().unwrap_or_else(|| b.env.clone());
        b.check_env(&env_cfg)?;
        let policy = b.policy()?;
        let mut env = env_cfg.build()?;
        for spec in &req.attacks {
            let mut returns = Vec::new();
            for &eval_seed in &req.seeds {
                let mut adv = Adversary::new(spec.clone())?;
                let rep = evaluate(policy.as_ref(), env.as_mut(), &mut adv, req.episodes, rng::derive_seed(eval_seed, "eval"))?;
                for r in rep.records {
                    returns.push(r.total_return);
                    episodes.push(EpisodeRow {
                        agent: b.label.clone(),
                        bundle_seed: b.seed,
                        eval_seed,
                        attack: spec.label(),
                        episode: r.episode,
                        episode_seed: r.episode_seed,
                        total_return: r.total_return,
                        length: r.length,
                        attacked_steps: r.attacked_steps,
                    });
                }
            }
            let (m, s) = mean_std(&returns);
            crate::error::ensure_finite(&[m, s], || "evaluation return".into())?;
            rows.push(EvalRow {
                agent: b.label.clone(),
                seed: Some(b.seed),
                attack: spec.label(),
                episodes: returns.len(),
                mean_return: m,
                std_return: s,
            });
            match pooled.iter_mut().find(|(a, k, _)| *a == b.label && *k == spec.label()) {
                Some(p) => p.2.extend(returns),
                None => pooled.push((b.label.clone(), spec.label(), returns)),
            }
        }
    }
    let bundles_per_label = |label: &str| rows.iter().filter(|r| r.agent == label).map(|r| r.seed).collect::<std::collections::BTreeSet<_>>().len();
    let mut pooled_rows = Vec::new();
    for (agent, attack, returns) in pooled {
        if bundles_per_label(&agent) > 1 {
            let (m, s) = mean_std(&returns);
            pooled_rows.push(EvalRow {
                agent,
                seed: None,
                attack,
                episodes: returns.len(),
                mean_return: m,
                std_return: s,
            });
        }
    }
    rows.extend(pooled_rows);
    Ok((rows, episodes))
}

/// `eval`: writes eval.csv, episodes.csv, eval.json and a manifest into
/// an output directory named after the request.
pub fn eval(req: &EvalRequest, opts: &HarnessOptions) -> Result<EvalOutcome> {
    let bytes = serde_json::to_vec_pretty(req)?;
    let dir = opts.out_root.join(format!("eval-{}", &sha256_hex(&bytes)[..8]));
    eval_into(req, &bytes, &dir)
}

pub fn eval_from_manifest(manifest_path: &Path, opts: &HarnessOptions) -> Result<EvalOutcome> {
    let m = RunManifest::load(manifest_path)?;
    if m.kind != RunKind::Eval {
        return Err(Error::Config("manifest does not describe an evaluation".into()));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = m.verify_config(base)?;
    let req: EvalRequest = serde_json::from_slice(&bytes)?;
    eval(&req, opts)
}

fn eval_into(req: &EvalRequest, bytes: &[u8], dir: &Path) -> Result<EvalOutcome> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("request.json"), bytes)?;
    let attacks = req.attacks.iter().map(AttackSpec::label).collect();
    let mut manifest = RunManifest::start(RunKind::Eval, "request.json".into(), bytes, req.seeds.clone(), attacks);
    manifest.eval = Some(EvalInputs {
        bundles: req.bundles.clone(),
        episodes: req.episodes,
    });
    let manifest_path = dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    match evaluate_bundles(req) {
        Ok((rows, episodes)) => {
            write_rows(&dir.join("eval.csv"), &rows)?;
            write_rows(&dir.join("episodes.csv"), &episodes)?;
            write_json_atomic(&dir.join("eval.json"), &rows)?;
            manifest.outputs = vec!["eval.csv".into(), "episodes.csv".into(), "eval.json".into()];
            manifest.finish(serde_json::to_value(&rows)?);
            manifest.write(&manifest_path)?;
            Ok(EvalOutcome {
                dir: dir.to_path_buf(),
                rows,
                episodes,
                manifest: manifest_path,
            })
        }
        Err(e) => {
            manifest.fail(&e);
            manifest.write(&manifest_path)?;
            Err(e)
        }
    }
}

/// Per-step diagnostics emitted by the `attack` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStep {
    pub episode: usize,
    pub t: usize,
    pub state: Vec<f64>,
    pub observation: Vec<f64>,
    pub linf: f64,
    pub clean_action: Action,
    pub action: Action,
    /// KL(π(s) ‖ π(o)).
    pub kl: f64,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<BeliefParticles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub action_change_rate: f64,
    pub mean_kl: f64,
    pub max_linf: f64,
}

/// Runs a frozen bundle under one attack, recording every perturbation.
/// With a belief config, each step also records the belief built at the
/// perturbed observation and the resulting δ_R.
pub fn attack_diagnostics(
    bundle: &BundleFile,
    spec: &AttackSpec,
    episodes: usize,
    seed: u64,
    belief: Option<&BeliefConfig>,
) -> Result<(AttackSummary, Vec<AttackStep>)> {
    let policy = bundle.policy()?;
    let mut env = bundle.env.build()?;
    let bounds = env.bounds().clone();
    let mut adv = Adversary::new(spec.clone())?;
    let mut brng = rng::stream(seed, "debug-belief");
    let mut steps = Vec::new();
    let mut returns = Vec::new();
    for episode in 0..episodes {
        let es = crate::agents::eval_episode_seed(seed, episode);
        let mut obs = env.reset(es);
        adv.begin_episode(env.horizon(), es);
        let mut total = 0.0;
        for t in 0.. {
            let o = adv.perturb(policy.as_ref(), env.as_mut(), &obs)?;
            let clean = policy.distribution(&obs)?;
            let pert = policy.distribution(&o)?;
            let action = policy.greedy(&o)?;
            let (belief_particles, delta_r) = match belief {
                Some(cfg) => match build_belief(cfg, policy.as_ref(), &o, &bounds, &mut brng, None)? {
                    Some(b) => {
                        let d = immediate_counterfactual_error(env.as_ref(), &o, &action, &b)?;
                        (Some(b), Some(d))
                    }
                    None => (None, None),
                },
                None => (None, None),
            };
            let out = env.step(&action)?;
            total += out.reward;
            steps.push(AttackStep {
                episode,
                t,
                linf: linf(&obs, &o),
                state: obs.clone(),
                observation: o,
                clean_action: clean.greedy(),
                action,
                kl: kl_divergence(&clean, &pert)?,
                reward: out.reward,
                belief: belief_particles,
                delta_r,
            });
            if out.done() {
                break;
            }
            obs = out.obs;
        }
        returns.push(total);
    }
    let (mean_return, std_return) = mean_std(&returns);
    let n = steps.len().max(1) as f64;
    let summary = AttackSummary {
        attack: spec.label(),
        episodes,
        mean_return,
        std_return,
        action_change_rate: steps.iter().filter(|s| s.action != s.clean_action).count() as f64 / n,
        mean_kl: steps.iter().map(|s| s.kl).sum::<f64>() / n,
        max_linf: steps.iter().map(|s| s.linf).fold(0.0, f64::max),
    };
    Ok((summary, steps))
}

/// Writes attack diagnostics as JSON lines.
pub fn write_attack_steps(path: &Path, steps: &[AttackStep]) -> Result<()> {
    let mut buf = Vec::new();
    for s in steps {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Lambda,
    N,
    Eps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl GridAxis {
    /// Parses `lambda=0.1,0.2,0.3`, `n=10,20` or `eps=0.05,0.1`.
    pub fn parse(text: &str) -> Result<Self> {
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis `{text}` is not key=v1,v2,...")))?;
        let param = match k.trim() {
            "lambda" => SweepParam::Lambda,
            "n" => SweepParam::N,
            "eps" => SweepParam::Eps,
            other => return Err(Error::Config(format!("unknown sweep parameter `{other}` (lambda, n, eps)"))),
        };
        let values = v
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad grid value `{x}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() || values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("grid axis `{text}` needs finite values")));
        }
        Ok(Self { param, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub lambda: f64,
    pub n: usize,
    pub eps: f64,
    pub attack: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub csv: PathBuf,
}

/// Applies one grid point to a config.
pub fn sweep_cell_config(base: &RunConfig, point: &[(SweepParam, f64)]) -> Result<RunConfig> {
    let mut cfg = base.clone();
    for &(param, v) in point {
        match param {
            SweepParam::Lambda => {
                if !cfg.algo.is_delta() {
                    return Err(Error::Config("a lambda sweep needs delta-ppo or delta-dqn".into()));
                }
                cfg.lambda = Some(v);
            }
            SweepParam::N | SweepParam::Eps => {
                if !cfg.algo.is_delta() {
                    return Err(Error::Config("belief sweeps need delta-ppo or delta-dqn".into()));
                }
                let mut b = cfg.belief.clone().unwrap_or_default();
                if param == SweepParam::N {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::Config(format!("n must be a positive integer, got {v}")));
                    }
                    b.n = v as usize;
                } else {
                    b.eps = v;
                }
                cfg.belief = Some(b);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid_points(axes: &[GridAxis]) -> Result<Vec<Vec<(SweepParam, f64)>>> {
    if axes.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut points: Vec<Vec<(SweepParam, f64)>> = vec![Vec::new()];
    for axis in axes {
        if axes.iter().filter(|a| a.param == axis.param).count() > 1 {
            return Err(Error::Config("each sweep parameter may appear once".into()));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.param, *v));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// `sweep`: a training run and an evaluation for every grid point.
pub fn sweep(config_path: &Path, axes: &[GridAxis], opts: &HarnessOptions) -> Result<SweepOutcome> {
    let (base, bytes) = RunConfig::load(config_path)?;
    let points = grid_points(axes)?;
    let dir = opts.out_root.join(format!("sweep-{}-{}", base.label(), &sha256_hex(&bytes)[..8]));
    std::fs::create_dir_all(&dir)?;
    write_atomic(&dir.join("config.json"), &bytes)?;
    write_json_atomic(&dir.join("grid.json"), &axes)?;
    let mut manifest = RunManifest::start(
        RunKind::Sweep,
        "config.json".into(),
        &bytes,
        base.seeds.clone(),
        base.attacks()?.iter().map(AttackSpec::label).collect(),
    );
    let manifest_path = dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    let result = (|| -> Result<Vec<SweepRow>> {
        let mut rows = Vec::new();
        for (i, point) in points.iter().enumerate() {
            let cfg = sweep_cell_config(&base, point)?;
            let cell_bytes = cfg.to_json()?.into_bytes();
            let cell_dir = dir.join(format!("cell-{i}"));
            opts.log(format!("sweep cell {i}: {point:?}"));
            let trained = train_config(&cfg, &cell_bytes, &cell_dir.join("train"), opts)?;
            let req = EvalRequest {
                bundles: trained.bundles.clone(),
                attacks: cfg.attacks()?,
                episodes: cfg.eval.episodes,
                seeds: cfg.eval.seeds.clone(),
                env: None,
            };
            let req_bytes = serde_json::to_vec_pretty(&req)?;
            let out = eval_into(&req, &req_bytes, &cell_dir.join("eval"))?;
            let trainer = cfg.trainer()?;
            let belief = match &trainer {
                TrainerConfig::Ppo(c) => c.belief.clone(),
                TrainerConfig::Dqn(c) => c.belief.clone(),
            };
            let single = trained.bundles.len() == 1;
            for r in out.rows.iter().filter(|r| r.seed.is_none() || single) {
                rows.push(SweepRow {
                    cell: i,
                    lambda: trainer.lambda(),
                    n: belief.n,
                    eps: belief.eps,
                    attack: r.attack.clone(),
                    episodes: r.episodes,
                    mean_return: r.mean_return,
                    std_return: r.std_return,
                });
            }
        }
        Ok(rows)
    })();
    match result {
        Ok(rows) => {
            let csv = dir.join("sweep.csv");
            write_rows(&csv, &rows)?;
            manifest.outputs = vec!["sweep.csv".into()];
            manifest.finish(serde_json::to_value(&rows)?);
            manifest.write(&manifest_path)?;
            Ok(SweepOutcome { dir, rows, csv })
        }
        Err(e) => {
            manifest.fail(&e);
            manifest.write(&manifest_path)?;
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_product() {
        let a = GridAxis::parse("lambda=0.1,0.2,0.3").unwrap();
        assert_eq!(a.values, vec![0.1, 0.2, 0.3]);
        let b = GridAxis::parse("n=10,20").unwrap();
        assert_eq!(grid_points(&[a, b]).unwrap().len(), 6);
        assert!(grid_points(&[]).is_err());
        assert!(GridAxis::parse("beta=1").is_err());
        assert!(GridAxis::parse("lambda").is_err());
    }

    #[test]
    fn output_root_prefers_the_flag() {
        assert_eq!(output_root(Some("x".into())), PathBuf::from("x"));
    }
}
