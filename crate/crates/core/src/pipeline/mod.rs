//! Configuration, dataset split, training, evaluation, checkpoints and the
//! command-line interface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{build_samples, is_held_out, Split};
pub use eval::{evaluate, AgentResult, EvalOptions, Evaluation};
pub use train::{dataset_loss, init_checkpoint, train};
