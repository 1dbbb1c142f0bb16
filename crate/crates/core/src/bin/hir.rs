use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hir_core::harness::config::{ExperimentConfig, JudgeMode};
use hir_core::harness::experiment::{build_judge, generate_splits, run_experiment};
use hir_core::harness::records::{load_dataset, read_audit_log, save_dataset, AuditRecord};
use hir_core::harness::{evaluate, pass_at_k_curve};
use hir_core::theory::{check_equivalence, EQUIVALENCE_TOLERANCE};
use hir_core::{Algorithm, HirError, Policy64, Result};

#[derive(Parser)]
#[command(name = "hir", about = "Hindsight instruction replay lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and held-out instruction sets.
    GenerateData(Overrides),
    /// Train one algorithm.
    Train(Overrides),
    /// Evaluate saved parameters on a dataset.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Decode greedily instead of sampling.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Train every configured algorithm on identical data and seeds.
    Compare(Overrides),
    /// Check the dual-preference decomposition on random fixtures.
    CheckTheory {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the replay entries of an audit log.
    ReplayDump {
        audit: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Hir,
    RlIr,
    RlCr,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Hir => Algorithm::Hir,
            AlgoArg::RlIr => Algorithm::RlIr,
            AlgoArg::RlCr => Algorithm::RlCr,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum JudgeArg {
    Mock,
    Remote,
}

#[derive(Args)]
struct Overrides {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict the run to one algorithm.
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long)]
    steps: Option<usize>,
    /// Rollouts per instruction.
    #[arg(long)]
    m: Option<usize>,
    /// Replay entries per instruction.
    #[arg(long)]
    k: Option<usize>,
    /// Curriculum growth rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Initial integrity weight.
    #[arg(long)]
    lambda0: Option<f64>,
    /// Ratio clip range.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    kl_coef: Option<f64>,
    #[arg(long, value_enum)]
    judge: Option<JudgeArg>,
    /// Chat-completions URL for the remote judge.
    #[arg(long)]
    endpoint: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write rollout/replay audit logs.
    #[arg(long)]
    audit: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let t = &mut cfg.trainer;
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {$(
                if let Some(v) = self.$field.clone() { $target = v; }
            )*};
        }
        set!(steps => t.steps, m => t.m, k => t.k, eta => t.eta, lambda0 => t.lambda0,
             clip => t.clip, kl_coef => t.kl_coef, seed => cfg.seed, out => cfg.output.dir,
             endpoint => cfg.judge.remote.endpoint);
        if let Some(a) = self.algo {
            cfg.output.algorithms = vec![a.into()];
        }
        if let Some(j) = self.judge {
            cfg.judge.mode = match j {
                JudgeArg::Mock => JudgeMode::Mock,
                JudgeArg::Remote => JudgeMode::Remote,
            };
        }
        cfg.output.audit |= self.audit;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(o) => {
            let cfg = o.resolve()?;
            let (train, eval) = generate_splits(&cfg)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            save_dataset(&train, cfg.output.dir.join("train.jsonl"))?;
            save_dataset(&eval, cfg.output.dir.join("eval.jsonl"))?;
            println!(
                "wrote {} train and {} eval instructions to {} (uniform-policy success {:.4})",
                train.len(),
                eval.len(),
                cfg.output.dir.display(),
                train.random_success.unwrap_or(f64::NAN)
            );
        }
        Command::Train(o) => {
            if o.algo.is_none() {
                return Err(HirError::Config("train needs --algo".into()));
            }
            report(run_experiment(&o.resolve()?)?);
        }
        Command::Compare(o) => report(run_experiment(&o.resolve()?)?),
        Command::Evaluate {
            overrides,
            params,
            data,
            greedy,
            temperature,
        } => {
            let mut cfg = overrides.resolve()?;
            cfg.eval.greedy |= greedy;
            if let Some(t) = temperature {
                cfg.eval.temperature = t;
            }
            cfg.eval.validate()?;
            let policy = Policy64::load(params)?;
            let dataset = load_dataset(data)?;
            let judge = build_judge(&cfg)?;
            let max_len = cfg.trainer.max_response_len;
            let seed = cfg.seeds().eval;
            let r = evaluate(&policy, &dataset, judge.as_ref(), &cfg.eval, max_len, seed)?;
            let curve = pass_at_k_curve(
                &policy,
                &dataset,
                judge.as_ref(),
                cfg.eval.pass_n,
                &cfg.eval.pass_k,
                cfg.eval.temperature,
                max_len,
                seed,
            )?;
            println!("ILA {:.4}  CLA {:.4}", r.ila, r.cla);
            for (k, p) in curve {
                println!("pass@{k} {p:.4}");
            }
        }
        Command::CheckTheory { trials, seed } => {
            let reports = check_equivalence(trials, seed, EQUIVALENCE_TOLERANCE)?;
            let worst = reports.iter().map(|r| r.difference).fold(0.0, f64::max);
            println!("{trials} trials passed; max |LHS - RHS| = {worst:.3e}");
        }
        Command::ReplayDump {
            audit,
            config,
            limit,
        } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let vocab = cfg.task.preset.spec().vocab;
            let replays = read_audit_log(audit)?.into_iter().filter_map(|r| match r {
                AuditRecord::Replay(r) => Some(r),
                _ => None,
            });
            let mut out = std::io::stdout().lock();
            for r in replays.take(limit.unwrap_or(usize::MAX)) {
                // a closed pipe (e.g. `| head`) just ends the listing
                let written = writeln!(
                    out,
                    "step {} group {} rollout {} {:?} F_div={:.3} F_int={:.3} λ={:.3}\n  q': {}\n  y : {}\n  kept: {}",
                    r.step,
                    r.group,
                    r.rollout,
                    r.fill,
                    r.f_div,
                    r.f_int,
                    r.lambda,
                    vocab.spell_all(&r.instruction),
                    vocab.spell_all(&r.tokens),
                    r.kept.join(", ")
                );
                if written.is_err() {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn report((dir, summary): (PathBuf, hir_core::harness::Summary)) {
    println!("artifacts in {}", dir.display());
    println!(
        "initial: ILA {:.4} CLA {:.4}",
        summary.initial_eval_ila, summary.initial_eval_cla
    );
    for a in &summary.algorithms {
        println!(
            "{:>6}: ILA {:.4} CLA {:.4} skips {} threshold {}",
            a.algorithm.name(),
            a.final_eval_ila,
            a.final_eval_cla,
            a.degenerate_skips,
            serde_json::to_string(&a.steps_to_ila_threshold).unwrap_or_default()
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
