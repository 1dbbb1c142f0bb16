//! End-to-end runs: data generation, training of each algorithm, evaluation and artifacts.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{CachedJudge, Judge, MockJudge};
use crate::error::{HirError, Result};
use crate::harness::config::{ExperimentConfig, JudgeMode};
use crate::harness::eval::{evaluate, pass_at_k_curve, EvalReport};
use crate::harness::judge::RemoteJudge;
use crate::harness::records::{
    audit_records, save_dataset, write_metrics_csv, write_records, AuditRecord, MetricsRow,
};
use crate::instructions::{generate_dataset, InstructionDataset};
use crate::policy::Policy;
use crate::trainer::{Algorithm, Trainer};

/// Held-out ILA a run has to reach to count as "reached" in the summary.
pub const ILA_THRESHOLD: f64 = 0.6;

/// Train and eval splits of one generated pool; no eval instruction also occurs in train.
pub fn generate_splits(
    config: &ExperimentConfig,
) -> Result<(InstructionDataset, InstructionDataset)> {
    let (n_train, n_eval) = (config.task.train_size, config.task.eval_size);
    let pool = generate_dataset(
        &config.task.preset.spec(),
        n_train + 2 * n_eval,
        config.seeds().dataset,
    )?;
    let train: Vec<_> = pool.instructions[..n_train].to_vec();
    let seen: HashSet<&[crate::Token]> = train.iter().map(|q| q.rendered()).collect();
    let mut eval = Vec::with_capacity(n_eval);
    for q in &pool.instructions[n_train..] {
        if eval.len() == n_eval {
            break;
        }
        if !seen.contains(q.rendered()) && !eval.iter().any(|e: &crate::Instruction| e == q) {
            eval.push(q.clone());
        }
    }
    if eval.len() < n_eval {
        return Err(HirError::InvalidSpec(format!(
            "only {} distinct held-out instructions available, {n_eval} requested",
            eval.len()
        )));
    }
    let split = |instructions| InstructionDataset {
        instructions,
        ..pool.clone()
    };
    Ok((split(train), split(eval)))
}

pub fn build_judge(config: &ExperimentConfig) -> Result<Box<dyn Judge>> {
    let vocab = config.task.preset.spec().vocab;
    Ok(match config.judge.mode {
        JudgeMode::Mock => Box::new(MockJudge::new(vocab)),
        JudgeMode::Remote => Box::new(CachedJudge::new(RemoteJudge::new(
            config.judge.remote.clone(),
            vocab,
        )?)),
    })
}

pub fn initial_policy(config: &ExperimentConfig) -> Policy<f64> {
    let arch = config
        .policy
        .size
        .architecture(config.task.preset.spec().vocab.size());
    Policy::init(arch, &mut ChaCha8Rng::seed_from_u64(config.seeds().init))
}

/// Everything a run needs besides the algorithm.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: InstructionDataset,
    pub eval: InstructionDataset,
    pub judge: Box<dyn Judge>,
    pub init: Policy<f64>,
}

impl Experiment {
    /// Validates the configuration before any data is generated or training starts.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let judge = build_judge(&config)?;
        let (train, eval) = generate_splits(&config)?;
        let init = initial_policy(&config);
        Ok(Self {
            config,
            train,
            eval,
            judge,
            init,
        })
    }

    fn max_len(&self) -> usize {
        self.config.trainer.max_response_len
    }

    pub fn evaluate(&self, policy: &Policy<f64>) -> Result<EvalReport> {
        evaluate(
            policy,
            &self.eval,
            self.judge.as_ref(),
            &self.config.eval,
            self.max_len(),
            self.config.seeds().eval,
        )
    }

    pub fn pass_curve(&self, policy: &Policy<f64>) -> Result<Vec<(usize, f64)>> {
        let e = &self.config.eval;
        pass_at_k_curve(
            policy,
            &self.eval,
            self.judge.as_ref(),
            e.pass_n,
            &e.pass_k,
            e.temperature,
            self.max_len(),
            self.config.seeds().eval ^ 0x9a55,
        )
    }

    /// Trains one algorithm from the shared initial policy.
    pub fn run(&self, algorithm: Algorithm) -> Result<AlgorithmRun> {
        let cfg = self.config.trainer_for(algorithm);
        let steps = cfg.steps;
        let every = self.config.eval.every;
        let mut trainer = Trainer::new(&self.train, cfg, self.judge.as_ref(), self.init.clone())?;
        let mut rows = Vec::with_capacity(steps);
        let mut audit = Vec::new();
        let mut reached = None;
        let mut final_eval = None;
        for s in 0..steps {
            let out = trainer.step()?;
            if self.config.output.audit {
                audit.extend(audit_records(s, &out.groups, &out.replays));
            }
            let last = s + 1 == steps;
            let mut row = MetricsRow {
                train: out.metrics,
                eval_ila: None,
                eval_cla: None,
                pass_at_k: Vec::new(),
            };
            if last || (every > 0 && (s + 1) % every == 0) {
                let report = self.evaluate(trainer.policy())?;
                check_report(&report)?;
                if reached.is_none() && report.ila >= ILA_THRESHOLD {
                    reached = Some(s + 1);
                }
                row.eval_ila = Some(report.ila);
                row.eval_cla = Some(report.cla);
                if last {
                    final_eval = Some(report);
                }
            }
            rows.push(row);
        }
        let policy = trainer.policy().clone();
        let final_eval = match final_eval {
            Some(r) => r,
            None => self.evaluate(&policy)?,
        };
        let pass_at_k = self.pass_curve(&policy)?;
        check_pass_curve(&pass_at_k)?;
        if let Some(row) = rows.last_mut() {
            row.pass_at_k = pass_at_k.clone();
        }
        Ok(AlgorithmRun {
            algorithm,
            degenerate_skips: trainer.degenerate_skips(),
            rows,
            policy,
            final_eval,
            pass_at_k,
            steps_to_threshold: reached,
            audit,
        })
    }
}

pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub rows: Vec<MetricsRow>,
    pub policy: Policy<f64>,
    pub final_eval: EvalReport,
    pub pass_at_k: Vec<(usize, f64)>,
    pub degenerate_skips: usize,
    pub steps_to_threshold: Option<usize>,
    pub audit: Vec<AuditRecord>,
}

fn check_report(r: &EvalReport) -> Result<()> {
    let ok = r.ila.is_finite()
        && r.cla.is_finite()
        && r.ila <= r.cla + 1e-12
        && r.per_instruction.iter().all(|e| e.ila <= e.cla + 1e-12);
    if ok {
        Ok(())
    } else {
        Err(HirError::Invariant(format!(
            "evaluation violates ILA ≤ CLA (ILA {}, CLA {})",
            r.ila, r.cla
        )))
    }
}

fn check_pass_curve(curve: &[(usize, f64)]) -> Result<()> {
    let mut sorted = curve.to_vec();
    sorted.sort_by_key(|p| p.0);
    if sorted.windows(2).any(|w| w[1].1 < w[0].1 - 1e-12) || curve.iter().any(|p| !p.1.is_finite())
    {
        return Err(HirError::Invariant(
            "pass@k is not nondecreasing in k".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Step(usize),
    Never(String),
}

impl From<Option<usize>> for Threshold {
    fn from(s: Option<usize>) -> Self {
        match s {
            Some(s) => Threshold::Step(s),
            None => Threshold::Never("not reached".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub final_eval_ila: f64,
    pub final_eval_cla: f64,
    pub steps_to_ila_threshold: Threshold,
    pub degenerate_skips: usize,
    pub pass_at_k: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub ila_threshold: f64,
    pub initial_eval_ila: f64,
    pub initial_eval_cla: f64,
    pub initial_pass_at_k: Vec<(usize, f64)>,
    pub algorithms: Vec<AlgorithmSummary>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Runs every configured algorithm on the same data and seed and writes, under the output
/// directory: the resolved config, both dataset splits, one metrics CSV, parameter file and
/// (optionally) audit log per algorithm, and `summary.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(PathBuf, Summary)> {
    let exp = Experiment::prepare(config.clone())?;
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config.to_toml()?)?;
    save_dataset(&exp.train, dir.join("train.jsonl"))?;
    save_dataset(&exp.eval, dir.join("eval.jsonl"))?;
    exp.init.save(dir.join("params-initial.bin"))?;

    let initial = exp.evaluate(&exp.init)?;
    check_report(&initial)?;
    let initial_pass = exp.pass_curve(&exp.init)?;

    let runs = config
        .output
        .algorithms
        .par_iter()
        .map(|&a| exp.run(a))
        .collect::<Result<Vec<_>>>()?;

    let mut algorithms = Vec::new();
    for run in &runs {
        let name = run.algorithm.name();
        write_metrics_csv(
            &run.rows,
            &config.eval.pass_k,
            create(&dir, &format!("metrics-{name}.csv"))?,
        )?;
        run.policy.save(dir.join(format!("params-{name}.bin")))?;
        if config.output.audit {
            let mut w = create(&dir, &format!("audit-{name}.jsonl"))?;
            write_records(&run.audit, &mut w)?;
            w.flush()?;
        }
        algorithms.push(AlgorithmSummary {
            algorithm: run.algorithm,
            final_eval_ila: run.final_eval.ila,
            final_eval_cla: run.final_eval.cla,
            steps_to_ila_threshold: run.steps_to_threshold.into(),
            degenerate_skips: run.degenerate_skips,
            pass_at_k: run.pass_at_k.clone(),
        });
    }
    let summary = Summary {
        seed: config.seed,
        ila_threshold: ILA_THRESHOLD,
        initial_eval_ila: initial.ila,
        initial_eval_cla: initial.cla,
        initial_pass_at_k: initial_pass,
        algorithms,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok((dir, summary))
}
