//! Dataset ingestion, experiment orchestration, metrics, synthetic-corpus
//! generation, the tensor file format, and the model wrappers behind the
//! command-line interface.

pub mod config;
pub mod experiment;
pub mod manifest;
pub mod report;
pub mod scene_models;
pub mod synth;
pub mod tensor;

pub use config::ExperimentConfig;
pub use experiment::{build_feature_store, run_experiment, SystemKind};
pub use manifest::{ingest_dataset, DatasetManifest};
pub use report::{evaluate, EvaluationReport, Prediction};
pub use synth::{synth_corpus, SynthConfig};
pub use tensor::{TensorData, TensorFile};
