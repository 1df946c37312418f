//! Over-sampled sigmoid networks on decimated MNIST.
//!
//! Images are unpacked into 784-sample vectors, normalized to zero mean,
//! decimated by 16 to 49 samples and interpolated back up by a factor `k`.
//! A `[49k, 49k, 10]` sigmoid/softmax network is trained per factor with
//! plain SGD; at each checkpoint the test error and the mean crest factor of
//! every layer's weight-row spectra are recorded.
//!
//! - [`mnist_io`]: IDX parsing, dataset assembly, seeded subsets
//! - [`resample`]: normalization, decimation, interpolation
//! - [`network`]: model, backprop, SGD, checkpointed training, container format
//! - [`spectral`]: transfer functions and crest factor
//! - [`stats`]: Pearson correlation, t-test p-value, curve diagnostics
//! - [`experiment`]: configuration, suite runner, CSV and summary reports

pub mod error;
pub mod experiment;
pub mod mnist_io;
pub mod network;
pub mod resample;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use experiment::{parse_config, run_suite, run_suite_on, ExperimentConfig, ExperimentReport};
pub use mnist_io::{LabelSet, LabeledDataset, RawImageSet};
pub use network::{init_model, CheckpointRecord, MlpModel, TrainConfig};
pub use resample::{InterpolationKernel, ResampleSpec, Resampler};
pub use stats::{CorrelationResult, Pairing, SeriesDiagnostics};
