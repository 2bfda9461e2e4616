//! Multi-scale LSTM pre-training with an information-coefficient objective.

mod ic;
mod lstm;
mod model;
mod train;

pub use ic::{ic_with_gradient, information_coefficient, DEGENERATE_STD};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmGrads, LstmWeights};
pub use model::{extract_scale, MsLstm, MsLstmCache, MsLstmConfig, MODEL_NAME};
pub use train::{
    day_sample, ic_loss_and_gradients, mean_ic, predict_days, read_estimates, train_pretrain,
    write_estimates, write_training_log, DaySample, EpochLog, EstimateRow, StopReason, TrainConfig,
    TrainOutcome,
};
