//! Denoising for automatically augmented text-classification data.
//!
//! The pipeline: train an organic teacher on the original (cleaner) dataset,
//! amplify the data with token-level edits, then train a student on the
//! mixture with soft teacher targets on the augmented pool plus a dropout
//! consistency penalty, so the augmented hard labels never enter the
//! objective. Baselines (loss-based filtering, loss-softmax re-weighting,
//! consistency training) share the same classifier, data model, and
//! evaluation machinery for controlled comparisons, and a synthetic corpus
//! generator with known Bayes accuracy supports label-noise studies.

pub mod augment;
pub mod classifier;
pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use augment::{EdaConfig, Lexicon, NoiseConfig};
pub use classifier::{Architecture, Classifier, DropoutMask, Gradients};
pub use data::{Dataset, Example, FileFormat};
pub use error::{ErrorKind, OddaError, Result};
pub use features::FeatureVector;
pub use losses::{BaselineConfig, BaselineMode, OdConfig, SrConfig};
pub use report::RunReport;
pub use rng::SeededRng;
pub use synth::SynthSpec;
pub use trainer::{Method, TrainConfig};
