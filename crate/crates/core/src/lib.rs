//! Streaming recommender combining a low-rank co-occurrence model, parameter-free
//! sequential attention and an item transition matrix, all updated per event.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod error;
pub mod events;
pub mod factor;
pub mod linalg;
pub mod model;
pub mod scoring;
pub mod spectral;
pub mod transition;
pub mod verify;

pub use config::{ModelConfig, Similarity, TRefMode};
pub use error::{Error, Result};
pub use events::{time_decay, DecayedInteractionStore, InteractionEvent};
pub use factor::{apply_event, batch_factorize, delta_decompose, FactorState};
pub use scoring::{fuse, EmbeddingView, InterestVectors, ScoreVector};
pub use spectral::{CheckStatus, EquivalenceReport, FrequencyWeights, TrajectoryLog};
pub use transition::{interval_weight, TransitionStore};
pub use checkpoint::Checkpoint;
pub use dataset::{Dataset, Format, IdMap, LoadOptions};
pub use model::{Channels, Observation, Recommender};
pub use eval::{chronological_split, rank_of, run_stream_eval, EvalProtocol, Experiment, GridSpec, MetricReport, Task, Variant};
pub use verify::{run_suites, VerifyOptions, VerifyReport};
