//! Session-based next-item recommendation.
//!
//! A single-layer GRU is trained over session-parallel mini-batches. Each
//! example scores its target against the other targets of the batch plus a
//! set of additional negatives shared by the whole batch and drawn
//! proportionally to `support^alpha`. Training can use cross-entropy, the
//! pairwise TOP1/BPR losses, or their ranking-max counterparts
//! (TOP1-max, BPR-max with score regularization).

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod knn;
pub mod losses;
pub mod model;
pub mod num;
pub mod persist;
pub mod sampler;
pub mod synth;
pub mod trainer;

pub use data::{Batch, EventLog, ItemIndex, LoadOptions, MiniBatchState, Schema, SessionCorpus};
pub use error::{Error, Result};
pub use eval::{evaluate, gradient_vs_rank, popularity_set, EvalReport, GradRankConfig, GradRankRow};
pub use knn::SimilarityTable;
pub use losses::{LossName, LossResult, LossSpec, ScoreSlate, XeStabilizer};
pub use model::{EmbeddingMode, GruGrads, GruParams, ModelConfig, OutputActivation, StepRecord};
pub use num::Real;
pub use sampler::{CollisionPolicy, SampleCache, SampleDistribution, SlateLayout};
pub use trainer::{train, OptimizerConfig, OptimizerKind, OptimizerState, TrainConfig, TrainLog};
