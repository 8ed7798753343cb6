//! The hybrid inference network: memory-augmented TCN encoder, reconstructor,
//! CRF forecaster and event predictor trained under one joint loss.

pub mod baseline;
pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod net;
pub mod train;

pub use baseline::SummaryBaseline;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{HiNetConfig, TrainOptions, Variant};
pub use infer::{alarm_from_path, forecast_alarms, stream_predictions, Latent};
pub use net::{joint_loss, masked_predictor_loss, Batch, HiNet, LossVars};
pub use train::{train, validation_losses, EpochRecord, TrainHooks, TrainReport};
