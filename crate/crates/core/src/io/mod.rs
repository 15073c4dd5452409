//! File formats and command orchestration: CSV datasets, edge lists,
//! coordinate files, JSON run configs, and the `fit`, `loo`, `simulate` and
//! `basis` commands with their output files.

mod commands;
mod config;
mod dataset;

pub use commands::{cmd_basis, cmd_fit, cmd_loo, cmd_simulate, format_summary, uses_moran};
pub use config::{Overrides, RunConfig, SimulationSpec};
pub use dataset::{
    expected_counts, load_dataset, read_coordinates, read_edge_list, write_dataset, DatasetSpec,
};

use thiserror::Error;

use crate::el::ElError;
use crate::harness::HarnessError;
use crate::mcmc::McmcError;
use crate::models::ModelError;
use crate::spatial::SpatialError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Validation(String),
}

/// Failure of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CommandError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Kept whole so a diverged chain can still be written out.
    #[error(transparent)]
    Mcmc(McmcError),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Data(_) => 3,
            CommandError::Numerical(_) => 4,
            CommandError::Mcmc(e) => mcmc_class(e).exit_code(),
        }
    }
}

impl From<IoError> for CommandError {
    fn from(e: IoError) -> Self {
        CommandError::Data(e.to_string())
    }
}

fn spatial_class(e: SpatialError) -> CommandError {
    let msg = e.to_string();
    match e {
        SpatialError::NoIntercept | SpatialError::NonPositiveParams => CommandError::Config(msg),
        SpatialError::PdCheckFailed { .. } | SpatialError::EmptyBasis => {
            CommandError::Numerical(msg)
        }
        _ => CommandError::Data(msg),
    }
}

fn el_class(e: ElError) -> CommandError {
    CommandError::Numerical(e.to_string())
}

fn model_class(e: ModelError) -> CommandError {
    let msg = e.to_string();
    match e {
        ModelError::ImproperPrior(_) | ModelError::StateDimension { .. } => {
            CommandError::Config(msg)
        }
        ModelError::MissingSamplingVariances
        | ModelError::MissingSpatialStructure(_)
        | ModelError::NegativeCount(_)
        | ModelError::HeldOutOutOfRange { .. } => CommandError::Data(msg),
        ModelError::Overflow => CommandError::Numerical(msg),
        ModelError::El(e) => el_class(e),
        ModelError::Spatial(e) => spatial_class(e),
    }
}

fn mcmc_class(e: &McmcError) -> CommandError {
    let msg = e.to_string();
    match e {
        McmcError::InvalidConfig(_) => CommandError::Config(msg),
        McmcError::Model(m) => match m {
            ModelError::ImproperPrior(_) | ModelError::StateDimension { .. } => {
                CommandError::Config(msg)
            }
            ModelError::MissingSamplingVariances
            | ModelError::MissingSpatialStructure(_)
            | ModelError::NegativeCount(_)
            | ModelError::HeldOutOutOfRange { .. } => CommandError::Data(msg),
            _ => CommandError::Numerical(msg),
        },
        _ => CommandError::Numerical(msg),
    }
}

impl From<SpatialError> for CommandError {
    fn from(e: SpatialError) -> Self {
        spatial_class(e)
    }
}

impl From<ModelError> for CommandError {
    fn from(e: ModelError) -> Self {
        model_class(e)
    }
}

impl From<McmcError> for CommandError {
    fn from(e: McmcError) -> Self {
        match e {
            McmcError::Model(m) => model_class(m),
            McmcError::ChainDiverged { .. } => CommandError::Mcmc(e),
            other => mcmc_class(&other),
        }
    }
}

impl From<HarnessError> for CommandError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidPlan(m) => CommandError::Config(m),
            HarnessError::Model(e) => model_class(e),
            HarnessError::Mcmc(e) => CommandError::from(e),
            HarnessError::Spatial(e) => spatial_class(e),
            other => CommandError::Numerical(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CommandError::Config(String::new()).exit_code(), 2);
        assert_eq!(
            CommandError::from(IoError::Validation(String::new())).exit_code(),
            3
        );
        assert_eq!(
            CommandError::from(SpatialError::DisconnectedGraph).exit_code(),
            3
        );
        assert_eq!(CommandError::from(SpatialError::NoIntercept).exit_code(), 2);
        assert_eq!(CommandError::from(ModelError::Overflow).exit_code(), 4);
        assert_eq!(CommandError::from(McmcError::EmptyChain).exit_code(), 4);
        assert_eq!(
            CommandError::from(HarnessError::InvalidPlan(String::new())).exit_code(),
            2
        );
    }
}
