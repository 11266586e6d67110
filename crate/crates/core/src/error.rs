use thiserror::Error;

use crate::attention::AttentionError;
use crate::automaton::AutomatonError;
use crate::envs::EnvError;
use crate::neural::NeuralError;
use crate::pipeline::ConfigError;
use crate::policy::PolicyError;
use crate::pruner::PruneError;
use crate::qbn::QbnError;
use crate::reducer::ReduceError;

/// Crate-wide error. Each module has its own error type; this wraps them so
/// that pipeline stages can be chained with `?`.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Qbn(#[from] QbnError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
