//! Siamese tracking model: configuration, parameters, crops, forward
//! pass, loss, training, and the tracking loop.

mod config;
mod crop;
mod forward;
mod loss;
mod params;
mod track;
mod train;

pub use config::{GateMode, ModelConfig, TrainConfig, PATCH};
pub use crop::CropWindow;
pub use forward::{
    backbone_forward_t, forward_pair, predict_t, siamese_fuse_t, tokenize_branch, AlphaPolicy,
    Branch, BranchFrames, ModelVars, PairForward,
};
pub use loss::{mean_loss, pair_loss, positive_cell, LossReport, LossVars, LossWeights};
pub use params::{hsi_bands, import_external_weights, init_params};
pub use track::{
    decode_cell_box, hanning, init_tracker, predict_frame, select_cell, track_sequence,
    track_step, BoxPrediction, TrackerState,
};
pub use train::{
    fit, make_sample, train_step, FitOptions, FitReport, Sgd, TrainSample, SEARCH_SCALE,
    TEMPLATE_SCALE,
};
