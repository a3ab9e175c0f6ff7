//! Stage orchestration for the `ehr-rag` binary.

pub mod config;
pub mod pipeline;

use thiserror::Error;

use ehr_rag::ehr::EhrError;
use ehr_rag::gateway::GatewayError;
use ehr_rag::kg::KgError;
use ehr_rag::note_entities::NoteError;
use ehr_rag::summarizer::SummarizeError;
use ehr_rag::train::TrainError;

pub use config::{Overrides, PipelineConfig};
pub use pipeline::{Pipeline, RunOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl PipelineError {
    /// 1 for configuration and validation problems, 2 for runtime and
    /// gateway failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Data(_) => 1,
            PipelineError::Runtime(_) => 2,
        }
    }
}

impl From<EhrError> for PipelineError {
    fn from(e: EhrError) -> Self {
        match e {
            EhrError::Io { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::UnknownProfile(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Runtime(e.to_string()),
        }
    }
}

impl From<KgError> for PipelineError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::Gateway(g) => g.into(),
            KgError::Io { .. } | KgError::Eta(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<NoteError> for PipelineError {
    fn from(e: NoteError) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}

impl From<SummarizeError> for PipelineError {
    fn from(e: SummarizeError) -> Self {
        match e {
            SummarizeError::Kg(k) => k.into(),
            other => PipelineError::Runtime(other.to_string()),
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => PipelineError::Config(e.to_string()),
            TrainError::Metric { .. } | TrainError::EmptySplit(_) | TrainError::Data(_) => {
                PipelineError::Data(e.to_string())
            }
            _ => PipelineError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Runtime(e.to_string())
    }
}
