//! EEG band-power and syntactic-complexity features, native learners and a
//! stacked ensemble for predicting listener comprehension.

pub mod matrix;
pub mod scalar;
pub mod signal;
pub mod spectral;
pub mod nlp;
pub mod dataset;
pub mod standardize;
pub mod balance;
pub mod learners;
pub mod ensemble;
pub mod synth;
pub mod pipeline;
pub mod bench;

pub use scalar::Real;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Matrix = matrix::Matrix<f64>;
pub type Recording = signal::EegRecording<f64>;
pub type Segment = signal::EegSegment<f64>;
pub type Psd = spectral::PsdEstimate<f64>;
pub type BandPowers = spectral::BandPowerFeatures<f64>;
pub type Resampled = balance::Resampled<f64>;
pub type Model = learners::Model<f64>;
pub type Forest = learners::Forest<f64>;
pub type GbtModel = learners::GbtModel<f64>;
pub type LogisticModel = learners::LogisticModel<f64>;
pub type SvmModel = learners::SvmModel<f64>;
pub type Stack = ensemble::TrainedStack<f64>;
pub type Standardizer = standardize::Standardizer<f64>;
