//! From-scratch 1D-CNN regressor with Adam training, checkpointing and
//! series prediction.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod predict;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{Architecture, CnnModel, Gradients, Head, N_OUTPUTS, PARAM_NAMES};
pub use predict::{predict_block, predict_series, Prediction};
pub use train::{train, EpochRecord, History, TrainConfig};
