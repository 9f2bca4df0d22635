use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acoe_core::agents::PpoConfig;
use acoe_core::attacks::{train_learned_adversary, AttackKind, AttackSpec};
use acoe_core::belief::{BeliefConfig, BeliefKind};
use acoe_core::envs::EnvConfig;
use acoe_core::harness::{
    self, attack_diagnostics, exit, output_root, run_verify, sha256_hex, write_attack_steps, write_json_atomic,
    BundleFile, EvalRequest, GridAxis, HarnessOptions, Suite, VerifyOptions, OUT_ENV,
};
use acoe_core::{Error, Result};

/// Adversarial counterfactual error lab: robust PPO/DQN training,
/// observation attacks and exact bound verification.
#[derive(Parser)]
#[command(name = "acoe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Output root directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

impl Common {
    fn options(&self) -> HarnessOptions {
        let mut o = HarnessOptions::new(output_root(Some(self.out.clone())));
        o.quiet = !self.verbose;
        o
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train agents from a JSON run config.
    ///
    /// Writes <out>/<name>-<hash>/ with config.json, manifest.json,
    /// metrics.csv and seed-<s>/{metrics.csv,checkpoint.json,bundle.json}.
    Train {
        /// Run config (sections env, algo, lambda, belief, attack_train,
        /// attacks_eval, optim, seeds, eval).
        config: Option<PathBuf>,
        /// Continue from the checkpoints of an interrupted run.
        #[arg(long)]
        resume: bool,
        /// Retrain from a manifest after checking its config hash.
        #[arg(long, conflicts_with = "config")]
        from_manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate bundles (or run directories) under a set of attacks.
    ///
    /// Writes eval.csv (mean ± std per agent and attack), episodes.csv,
    /// eval.json and manifest.json under <out>/eval-<hash>/.
    Eval {
        bundles: Vec<PathBuf>,
        /// Attack spec, e.g. `identity`, `mad:eps=0.15`,
        /// `kind=pgd,eps=0.1,k=10`. Repeatable.
        #[arg(long = "attack", default_value = "identity")]
        attacks: Vec<String>,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Evaluation seeds, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Evaluate in a different environment (JSON file); must match
        /// the bundle's input and action sizes.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Rerun the evaluation recorded by a manifest.
        #[arg(long, conflicts_with = "bundles")]
        from_manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Attack a frozen bundle and dump per-step perturbation diagnostics
    /// as JSON lines.
    Attack {
        bundle: PathBuf,
        #[arg(long = "attack", default_value = "kind=pgd,eps=0.1,k=10")]
        attack: String,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also record the belief particles, scores, weights and δ_R at
        /// every step.
        #[arg(long)]
        debug_belief: bool,
        /// Particles for --debug-belief when the bundle has no belief.
        #[arg(long, default_value_t = 20)]
        belief_n: usize,
        /// Train a learned adversary with this many perturbation
        /// directions against the bundle first and attack with it.
        #[arg(long)]
        learn_directions: Option<usize>,
        /// PPO iterations for --learn-directions.
        #[arg(long, default_value_t = 30)]
        learn_iterations: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Check the counterfactual-error bounds, the value-iteration
    /// equivalence and the sampling estimator on generated instances.
    ///
    /// Exits with 2 if any check fails.
    Verify {
        /// thm1, thm2, prop1, lemma or all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Instances per theorem suite.
        #[arg(long)]
        instances: Option<usize>,
        /// Sample sizes for the lemma suite, comma separated.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check one saved instance (JSON) instead of a generated set.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Where to write the JSON report (default <out>/verify-<suite>.json).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate one run per point of a parameter grid.
    ///
    /// Writes sweep.csv with one row per grid point and attack.
    Sweep {
        config: PathBuf,
        /// Grid axis `lambda=0.1,0.2,0.3`, `n=10,20` or `eps=0.05,0.1`.
        /// Repeat for a cartesian product.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train {
            config,
            resume,
            from_manifest,
            common,
        } => {
            let mut opts = common.options();
            opts.resume = resume;
            let out = match (config, from_manifest) {
                (_, Some(m)) => harness::train_from_manifest(&m, &opts)?,
                (Some(c), None) => harness::train(&c, &opts)?,
                (None, None) => return Err(Error::Config("train needs a config or --from-manifest".into())),
            };
            println!("{}", out.run_dir.display());
            for b in &out.bundles {
                println!("  {}", b.display());
            }
        }
        Command::Eval {
            bundles,
            attacks,
            episodes,
            seeds,
            env,
            from_manifest,
            common,
        } => {
            let opts = common.options();
            let out = match from_manifest {
                Some(m) => harness::eval_from_manifest(&m, &opts)?,
                None => {
                    let env = env
                        .map(|p| -> Result<EnvConfig> { Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?) })
                        .transpose()?;
                    let req = EvalRequest {
                        bundles,
                        attacks: attacks.iter().map(|a| AttackSpec::parse(a)).collect::<Result<_>>()?,
                        episodes,
                        seeds,
                        env,
                    };
                    harness::eval(&req, &opts)?
                }
            };
            print!("{}", out.table());
            println!("{}", out.dir.display());
        }
        Command::Attack {
            bundle,
            attack,
            episodes,
            seed,
            debug_belief,
            belief_n,
            learn_directions,
            learn_iterations,
            common,
        } => {
            let opts = common.options();
            let b = BundleFile::load(&bundle)?;
            let mut spec = AttackSpec::parse(&attack)?;
            let key = format!("{}|{attack}|{episodes}|{seed}|{learn_directions:?}", bundle.display());
            let dir = opts.out_root.join(format!("attack-{}", &sha256_hex(key.as_bytes())[..8]));
            std::fs::create_dir_all(&dir)?;
            if let Some(m) = learn_directions {
                let ppo = PpoConfig {
                    iterations: learn_iterations,
                    ..PpoConfig::vanilla()
                };
                let adv = train_learned_adversary(b.policy()?, &b.env, spec.eps, m, &ppo, seed)?;
                let path = dir.join("adversary.json");
                adv.save(&path)?;
                spec = adv.spec(&path.to_string_lossy());
            }
            if spec.kind == AttackKind::Identity && learn_directions.is_none() {
                opts.log("identity attack: observations are passed through");
            }
            let belief = debug_belief.then(|| {
                if b.belief.kind != BeliefKind::None {
                    b.belief.clone()
                } else {
                    BeliefConfig {
                        eps: spec.eps,
                        n: belief_n,
                        ..BeliefConfig::default()
                    }
                }
            });
            if let Some(cfg) = &belief {
                cfg.validate()?;
            }
            let (summary, steps) = attack_diagnostics(&b, &spec, episodes, seed, belief.as_ref())?;
            write_attack_steps(&dir.join("steps.jsonl"), &steps)?;
            write_json_atomic(&dir.join("summary.json"), &summary)?;
            println!(
                "{}: return {:.3} ± {:.3}, action changed on {:.1}% of steps, mean KL {:.4}, max linf {:.4}",
                summary.attack,
                summary.mean_return,
                summary.std_return,
                100.0 * summary.action_change_rate,
                summary.mean_kl,
                summary.max_linf
            );
            println!("{}", dir.display());
        }
        Command::Verify {
            suite,
            instances,
            n,
            trials,
            seed,
            instance,
            report,
            common,
        } => {
            let s: Suite = suite.parse()?;
            let mut vo = VerifyOptions {
                seed,
                lemma_trials: trials,
                instance,
                ..VerifyOptions::default()
            };
            if let Some(k) = instances {
                vo.thm1_instances = k;
                vo.thm2_instances = k;
                vo.prop1_instances = k;
            }
            if let Some(ns) = n {
                vo.lemma_ns = ns;
            }
            let out = run_verify(s, &vo)?;
            let path = report.unwrap_or_else(|| common.options().out_root.join(format!("verify-{suite}.json")));
            write_json_atomic(&path, &out)?;
            print!("{}", out.summary());
            println!("{}", path.display());
            if !out.passed() {
                return Ok(exit::VIOLATION);
            }
        }
        Command::Sweep { config, grid, common } => {
            let axes = grid.iter().map(|g| GridAxis::parse(g)).collect::<Result<Vec<_>>>()?;
            let out = harness::sweep(&config, &axes, &common.options())?;
            println!(
                "{:>4} {:>7} {:>5} {:>6} {:<28} {:>18}",
                "cell", "lambda", "n", "eps", "attack", "return"
            );
            for r in &out.rows {
                println!(
                    "{:>4} {:>7} {:>5} {:>6} {:<28} {:>9.3} ± {:<7.3}",
                    r.cell, r.lambda, r.n, r.eps, r.attack, r.mean_return, r.std_return
                );
            }
            println!("{}", out.csv.display());
        }
    }
    Ok(exit::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
