//! Line-delimited JSON records for datasets and audit logs, CSV for metrics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, ConstraintKind, ConstraintSet, Token};
use crate::error::{HirError, Result};
use crate::instructions::{Instruction, InstructionDataset, TaskSpec};
use crate::replay::{FillKind, ReplayTuple, SamplingGroup};
use crate::scalar::Scalar;
use crate::trainer::{Algorithm, TrainMetrics};

pub const RECORD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub seed: u64,
    pub count: usize,
    pub random_success: Option<f64>,
    pub spec: TaskSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub index: usize,
    pub stem: Vec<Token>,
    pub constraints: Vec<ConstraintRecord>,
    pub rendered: Vec<Token>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub id: String,
    #[serde(flatten)]
    pub kind: ConstraintKind,
}

fn constraint_records(set: &ConstraintSet) -> Vec<ConstraintRecord> {
    set.iter()
        .map(|c| ConstraintRecord {
            id: c.id().to_string(),
            kind: c.kind().clone(),
        })
        .collect()
}

fn write_line(w: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_dataset(dataset: &InstructionDataset, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    write_line(
        &mut w,
        &DatasetHeader {
            version: RECORD_VERSION,
            seed: dataset.seed,
            count: dataset.len(),
            random_success: dataset.random_success,
            spec: dataset.spec.clone(),
        },
    )?;
    for (index, q) in dataset.instructions.iter().enumerate() {
        write_line(
            &mut w,
            &InstructionRecord {
                index,
                stem: q.stem().to_vec(),
                constraints: constraint_records(q.constraints()),
                rendered: q.rendered().to_vec(),
            },
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset back, re-validating every constraint and the stored rendering.
pub fn read_dataset(r: impl std::io::Read) -> Result<InstructionDataset> {
    let mut lines = BufReader::new(r).lines();
    let header: DatasetHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(HirError::Record("empty dataset file".into())),
    };
    if header.version != RECORD_VERSION {
        return Err(HirError::Record(format!(
            "unsupported dataset version {}",
            header.version
        )));
    }
    let vocab = header.spec.vocab;
    let mut instructions = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstructionRecord = serde_json::from_str(&line)?;
        let set = ConstraintSet::new(
            rec.constraints
                .into_iter()
                .map(|c| Constraint::new(c.kind, &vocab))
                .collect::<Result<_>>()?,
        )?;
        let q = Instruction::new(rec.stem, set, &vocab)?;
        if q.rendered() != rec.rendered.as_slice() {
            return Err(HirError::Record(format!(
                "instruction {} rendering mismatch",
                rec.index
            )));
        }
        instructions.push(q);
    }
    if instructions.len() != header.count {
        return Err(HirError::Record(format!(
            "header announces {} instructions, found {}",
            header.count,
            instructions.len()
        )));
    }
    Ok(InstructionDataset {
        spec: header.spec,
        seed: header.seed,
        instructions,
        random_success: header.random_success,
    })
}

pub fn save_dataset(dataset: &InstructionDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, File::create(path)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<InstructionDataset> {
    read_dataset(File::open(path)?)
}

/// One line of the rollout/replay audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum AuditRecord {
    Rollout {
        step: usize,
        group: usize,
        index: usize,
        instruction: Vec<Token>,
        tokens: Vec<Token>,
        mask: Vec<bool>,
    },
    Replay(ReplayRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub step: usize,
    pub group: usize,
    pub rollout: usize,
    pub fill: FillKind,
    /// Rendered `q'`.
    pub instruction: Vec<Token>,
    /// Ids of the kept constraints `C'`.
    pub kept: Vec<String>,
    pub tokens: Vec<Token>,
    pub old_logprobs: Vec<f64>,
    pub f_div: f64,
    pub f_int: f64,
    pub lambda: f64,
    pub reward: f64,
}

impl ReplayRecord {
    pub fn from_tuple<T: Scalar>(step: usize, t: &ReplayTuple<T>) -> Self {
        Self {
            step,
            group: t.group,
            rollout: t.rollout,
            fill: t.fill,
            instruction: t.instruction.rendered().to_vec(),
            kept: t.satisfied().ids(),
            tokens: t.tokens.clone(),
            old_logprobs: t.old_logprobs.iter().map(|x| x.as_f64()).collect(),
            f_div: t.f_div.as_f64(),
            f_int: t.f_int,
            lambda: t.lambda.as_f64(),
            reward: t.reward(),
        }
    }
}

pub fn audit_records<T: Scalar>(
    step: usize,
    groups: &[SamplingGroup<T>],
    replays: &[ReplayTuple<T>],
) -> Vec<AuditRecord> {
    let mut out = Vec::new();
    for g in groups {
        for (index, r) in g.rollouts.iter().enumerate() {
            out.push(AuditRecord::Rollout {
                step,
                group: g.id,
                index,
                instruction: g.instruction.rendered().to_vec(),
                tokens: r.rollout.tokens.clone(),
                mask: r.mask.clone(),
            });
        }
    }
    out.extend(
        replays
            .iter()
            .map(|t| AuditRecord::Replay(ReplayRecord::from_tuple(step, t))),
    );
    out
}

pub fn write_records<R: Serialize>(records: &[R], w: &mut impl Write) -> Result<()> {
    for r in records {
        write_line(w, r)?;
    }
    Ok(())
}

pub fn read_audit_log(path: impl AsRef<Path>) -> Result<Vec<AuditRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// One CSV row: training diagnostics plus optional held-out metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub train: TrainMetrics,
    pub eval_ila: Option<f64>,
    pub eval_cla: Option<f64>,
    /// `(k, pass@k)` pairs, filled on the final row.
    pub pass_at_k: Vec<(usize, f64)>,
}

const TRAIN_COLUMNS: [&str; 18] = [
    "step",
    "algorithm",
    "skipped",
    "mean_reward",
    "mean_ila",
    "mean_cla",
    "mean_fdiv_selected",
    "lambda",
    "clip_frac_initial",
    "clip_frac_replayed",
    "mean_response_len",
    "kl",
    "objective",
    "replays",
    "supplementary_draws",
    "supplementary_fills",
    "ratio_clamps",
    "degenerate_total",
];

pub fn metrics_header(pass_k: &[usize]) -> Vec<String> {
    let mut h: Vec<String> = TRAIN_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.push("eval_ila".into());
    h.push("eval_cla".into());
    h.extend(pass_k.iter().map(|k| format!("pass@{k}")));
    h
}

// Fixed-precision formatting keeps CSVs byte-stable and diffable.
fn num(x: f64) -> String {
    format!("{x:.9}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_metrics_csv(rows: &[MetricsRow], pass_k: &[usize], w: impl Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(metrics_header(pass_k))?;
    for row in rows {
        let t = &row.train;
        if ![
            t.mean_reward,
            t.mean_ila,
            t.mean_cla,
            t.lambda,
            t.kl,
            t.objective,
            t.mean_fdiv_selected,
        ]
        .iter()
        .all(|x| x.is_finite())
        {
            return Err(HirError::Invariant(format!(
                "non-finite metrics at step {}",
                t.step
            )));
        }
        let mut rec = vec![
            t.step.to_string(),
            t.algorithm.to_string(),
            t.skipped.to_string(),
            num(t.mean_reward),
            num(t.mean_ila),
            num(t.mean_cla),
            num(t.mean_fdiv_selected),
            num(t.lambda),
            num(t.clip_frac_initial),
            num(t.clip_frac_replayed),
            num(t.mean_response_len),
            num(t.kl),
            num(t.objective),
            t.replays.to_string(),
            t.supplementary_draws.to_string(),
            t.supplementary_fills.to_string(),
            t.ratio_clamps.to_string(),
            t.degenerate_total.to_string(),
            opt(row.eval_ila),
            opt(row.eval_cla),
        ];
        for &k in pass_k {
            rec.push(opt(row
                .pass_at_k
                .iter()
                .find(|(kk, _)| *kk == k)
                .map(|p| p.1)));
        }
        csv.write_record(rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads back the `(step, algorithm, eval_ila)` columns of a metrics CSV.
pub fn read_eval_series(path: impl AsRef<Path>) -> Result<Vec<(usize, Algorithm, Option<f64>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HirError::Record(format!("missing column {name}")))
    };
    let (step, algo, ila) = (col("step")?, col("algorithm")?, col("eval_ila")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse_err = |what: &str| HirError::Record(format!("bad {what} in metrics CSV"));
        out.push((
            rec[step].parse().map_err(|_| parse_err("step"))?,
            rec[algo].parse()?,
            if rec[ila].is_empty() {
                None
            } else {
                Some(rec[ila].parse().map_err(|_| parse_err("eval_ila"))?)
            },
        ));
    }
    Ok(out)
}
