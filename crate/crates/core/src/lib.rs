//! Path-faithfulness reinforcement learning on a toy reasoning task.
//!
//! The crate holds the task generator, the policy models (an exact table
//! oracle and a small trainable network), the reward functions, gold chain
//! synthesis, and the group-relative policy optimisation trainer.

pub mod error;
pub mod goldcot;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod task;
pub mod vocab;

pub use error::{P2sError, Result};
