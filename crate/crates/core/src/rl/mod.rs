//! Multilayer perceptrons, Implicit Q-Learning and checkpoints.

pub mod checkpoint;
pub mod iql;
pub mod mlp;

pub use checkpoint::{Checkpoint, IqlPolicy, CKPT_MAGIC};
pub use iql::{
    expectile_loss, greedy_action, iql_losses, Batch, EpochLoss, IqlAdam, IqlGrads, IqlLosses,
    IqlNets, Optimizer, RewardScale, TrainConfig, TrainState, AUTO_RETURN_SPAN,
};
pub use mlp::{log_softmax, softmax, AdamState, Layer, Mlp, MlpGrads};
