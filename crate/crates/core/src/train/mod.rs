pub mod config;
pub mod log;
pub mod loss;
pub mod objective;
pub mod trainer;

pub use config::{TrainConfig, TrainMode};
pub use log::{LogRecord, TrainLog};
pub use loss::{binary_loss, binary_loss_logit, pixel_loss, pixel_loss_from_logits};
pub use objective::{critic_objective, minimax_value, segmentor_objective, CriticPass, SegmentorPass};
pub use trainer::{pretrain, train_scan, RunOutcome, Trainer};
