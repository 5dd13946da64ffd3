//! Decomposed world models: one latent kernel per action group, averaged
//! into a shared latent and decoded to next state and reward.

mod config;
mod dynamics;
mod model;
mod train;

pub use config::{D2PModelConfig, KernelKind, KernelLayout};
pub use dynamics::{one_step_mse, rollout, Dynamics, OracleModel, Rollout};
pub use model::{
    d2p_forward_nonrec, d2p_forward_rec, kernel_ensemble_forward, monolithic_forward, split_action,
    KernelOutput, ModelSpec, Prediction, StepNodes, WorldModel,
};
pub use train::{
    train_model, Batch, Learner, SequenceBatch, TrainConfig, TrainedModel, Trainer,
};
