use attrib_core::attribution::AttribError;
use attrib_core::corpus::CorpusError;
use attrib_core::datasets::DatasetError;
use attrib_core::distractor::DistractError;
use attrib_core::llmgate::GateError;
use attrib_core::synthesis::SynthError;
use thiserror::Error;

/// CLI failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("stage failed: {0}")]
    Stage(String),
    #[error("endpoint failed: {0}")]
    Endpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Stage(_) => 2,
            CliError::Endpoint(_) => 3,
        }
    }

    pub fn stage(message: impl std::fmt::Display) -> Self {
        CliError::Stage(message.to_string())
    }

    pub fn from_gate(e: GateError) -> Self {
        match e {
            GateError::Transport { .. }
            | GateError::Endpoint { .. }
            | GateError::Malformed(_)
            | GateError::CacheMiss { .. }
            | GateError::NoBackend => CliError::Endpoint(e.to_string()),
            other => CliError::Stage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Stage(format!("io: {e}"))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::stage(e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::stage(e)
    }
}

impl From<GateError> for CliError {
    fn from(e: GateError) -> Self {
        CliError::from_gate(e)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Gateway(g) => CliError::from_gate(g),
            SynthError::Attribution(a) => a.into(),
            other => CliError::stage(other),
        }
    }
}

impl From<AttribError> for CliError {
    fn from(e: AttribError) -> Self {
        match e {
            AttribError::Gateway(g) => CliError::from_gate(g),
            AttribError::InvalidParameter(m) => CliError::Usage(m),
            other => CliError::stage(other),
        }
    }
}

impl From<DistractError> for CliError {
    fn from(e: DistractError) -> Self {
        match e {
            // Only raised when embedding calls fail.
            DistractError::MissingEmbeddings { .. } => CliError::Endpoint(e.to_string()),
            other => CliError::stage(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 1);
        assert_eq!(CliError::Stage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Endpoint(String::new()).exit_code(), 3);
    }

    #[test]
    fn gateway_failures_are_endpoint_failures() {
        let miss = CliError::from(SynthError::Gateway(GateError::CacheMiss { hash: "h".into() }));
        assert_eq!(miss.exit_code(), 3);
        let bad = CliError::from(GateError::InvalidRequest("x".into()));
        assert_eq!(bad.exit_code(), 2);
    }
}
