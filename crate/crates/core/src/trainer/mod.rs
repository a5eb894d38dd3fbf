//! Training: featurization, the perceptron feature map, balanced sampling,
//! schedules, the three strategies, logging and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod features;
pub mod log;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod schedule;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FILE};
pub use data::{load_dataset, PreparedData, Samples};
pub use features::{InputEncoding, QuantileNormalizer};
pub use log::{EpochRecord, ExperimentLog, Phase, LOG_FILE};
pub use model::{FeatureMap, LinearHead};
pub use sampler::BalancedSampler;
pub use schedule::{cosine_lr, TemperatureSchedule};
pub use train::{evaluate, train, Evaluation, Strategy, TrainConfig, TrainOutput};
