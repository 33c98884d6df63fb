//! Datasets, evaluation, exploration sweeps, model files and reports.

pub mod config;
pub mod cv;
pub mod dataset;
pub mod flow;
pub mod metrics;
pub mod model_file;
pub mod pareto;
pub mod pool;
pub mod report;
pub mod synth;

pub use config::{FlowConfig, SpecSelection};
pub use cv::{folds, Fold, SEARCH_SESSION};
pub use dataset::{Dataset, Sample};
pub use flow::{cross_validate, explore, explore_on, load_data, run_search, Exploration};
pub use metrics::bas;
pub use model_file::{load_model, save_model, Artifact, Model, Provenance, Stage};
pub use pareto::{pareto_extract, Axis, ParetoPoint};
pub use report::write_reports;
pub use synth::{synth_generate, SynthConfig};
