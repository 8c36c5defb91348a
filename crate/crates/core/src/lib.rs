//! Property prediction for crystalline materials from text descriptions.
//!
//! The pipeline runs: [`corpus`] ingestion and splits, [`textprep`]
//! normalisation, [`tokenizer`] encoding, an encoder-only [`model`] with a
//! single-output head, and the [`trainer`] loop evaluated by [`metrics`].

pub mod corpus;
pub mod labelscale;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod synth;
pub mod textprep;
pub mod tokenizer;
pub mod trainer;
pub mod util;

pub use corpus::{CrystalRecord, DatasetSplit, Task};
pub use labelscale::{LabelScaler, ScaleMethod};
pub use metrics::MetricsReport;
pub use model::{EncoderConfig, Model};
pub use parallel::Execution;
pub use tokenizer::TokenizerBundle;
