//! Dual graph attention over the industry and correlation graphs, and the Wx baseline.

mod baseline;
mod fusion;
mod layer;
mod model;
mod train;

pub use baseline::{baseline_propagate, wx_mean_ic, wx_predict};
pub use fusion::{fusion_backward, fusion_forward, FusionGrads};
pub use layer::{gat_backward, gat_forward, Aggregation, GatCache, GatGrads, GatWeights};
pub use model::{DualGat, DualGatCache, DualGatConfig, INPUT_DIM, MODEL_NAME};
pub use train::{
    dualgat_loss_and_gradients, dualgat_mean_ic, scale_signals, signal_rms, train_dualgat, DaySet,
    DualGatOutcome, DualGatTrainConfig,
};
