//! Hindsight instruction replay on a synthetic token-level instruction-following task.
//!
//! Instructions are a stem plus a set of atomic constraints over response tokens. A tiny
//! autoregressive policy with exact gradients is trained with a clipped policy-gradient
//! objective; failed rollouts are relabelled with the constraints they did satisfy and replayed
//! as successes.

pub mod constraints;
pub mod error;
pub mod harness;
pub mod instructions;
pub mod policy;
pub mod replay;
pub mod scalar;
pub mod theory;
pub mod trainer;

pub use constraints::{
    Constraint, ConstraintKind, ConstraintSet, Judge, JudgeVerdict, MockJudge, Token, Vocab, EOS,
    SEP,
};
pub use error::{HirError, Result};
pub use instructions::{generate_dataset, Instruction, InstructionDataset, TaskSpec};
pub use policy::{Architecture, Policy, Rollout};
pub use replay::{CurriculumState, FillKind, ReplayTuple, SamplingGroup, ScoredRollout};
pub use scalar::Scalar;
pub use trainer::{AdvantagePooling, Algorithm, TrainMetrics, Trainer, TrainerConfig};

pub type Policy64 = Policy<f64>;
pub type Policy32 = Policy<f32>;
pub type Rollout64 = Rollout<f64>;
pub type ReplayTuple64 = ReplayTuple<f64>;
pub type Trainer64<'a> = Trainer<'a, f64>;
