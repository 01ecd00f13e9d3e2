//! Probing toolkit for object-position and object-size bias in contrastive
//! vision-language embeddings.
//!
//! The crate reads embedding stores produced by any encoder, generates
//! caption and scene manifests, runs retrieval and linear probes, evaluates
//! image-text matching scenarios, computes dataset statistics, and simulates
//! the contrastive objective. Deterministic mock encoders stand in for real
//! models so every analysis runs offline.

pub mod error;
pub mod forge;
pub mod kernels;
pub mod linear_probe;
pub mod matching;
pub mod mock;
pub mod parallel;
pub mod probe;
pub mod scalar;
pub mod sim;
pub mod stats;
pub mod store;
pub mod svg;

pub use error::{Error, Result};
pub use linear_probe::{eval_probe, grad_check, train_probe, LinearProbe, TrainConfig, TrainOutcome};
pub use matching::{evaluate_matching, evaluate_with_mitigation, MatchResult, MatchTrial};
pub use mock::{MockEncoder, MockEncoderConfig};
pub use probe::{run_probe, GroupKey, ProbeReport, ProbeTask, QueryGroups};
pub use scalar::Scalar;
pub use store::{load_store, save_store, EmbeddingStore, Modality, StoreFormat};

pub type LinearProbe32 = LinearProbe<f32>;
pub type LinearProbe64 = LinearProbe<f64>;
pub type TrainOutcome32 = TrainOutcome<f32>;
pub type TrainOutcome64 = TrainOutcome<f64>;
