//! Training tracks: PPO policy optimisation, supervised dynamics-model
//! regression, mass-shift retention and the ablation harness.

pub mod ablation;
pub mod config;
pub mod gae;
pub mod metrics;
pub mod policy;
pub mod ppo;
pub mod regress;
pub mod retention;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::envs::EnvError;
use crate::nets::NetError;

pub use config::{Precision, RegressConfig, TrainConfig};
pub use gae::{gae, TrajectoryBatch};
pub use ppo::{evaluate, ppo_train, random_baseline, TrainOptions, TrainOutcome};
pub use regress::{regress_dynamics, RegressOutcome};
pub use retention::{bootstrap_ci, eval_retention, RetentionReport};
pub use ablation::{ablation_suite, AblationRow};



#[derive(Debug, Error)]
pub enum LearnError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss became non-finite at iteration {iteration}")]
    NaNLoss { iteration: usize },
    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<AutodiffError> for LearnError {
    fn from(e: AutodiffError) -> Self {
        LearnError::Net(e.into())
    }
}
