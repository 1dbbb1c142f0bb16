//! Experiment plumbing: configuration, evaluation, record formats, the remote judge client and
//! the comparison runner.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod judge;
pub mod records;

pub use config::{ExperimentConfig, Preset};
pub use eval::{
    evaluate, pass_at_k, pass_at_k_counts, pass_at_k_curve, pass_at_k_exact, EvalConfig, EvalReport,
};
pub use experiment::{run_experiment, Experiment, Summary};
pub use judge::{judge_prompt, parse_verdict, RemoteJudge, RemoteJudgeConfig};
