use std::fmt::Display;

use powernet::training::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags, config or input data.
    Input,
    Internal,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: Kind::Input,
            error: error.into(),
        }
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: Kind::Internal,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Input => 2,
            Kind::Internal => 1,
        }
    }
}

/// Divergence is a failure of the run; configuration and data problems are
/// the caller's.
impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::EmptySplit(_) => Failure::input(e),
            _ => Failure::internal(e),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait ResultExt<T> {
    fn input<C: Display + Send + Sync + 'static>(self, context: C) -> CliResult<T>;
    fn internal<C: Display + Send + Sync + 'static>(self, context: C) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn input<C: Display + Send + Sync + 'static>(self, context: C) -> CliResult<T> {
        self.map_err(|e| Failure::input(e.into().context(context)))
    }

    fn internal<C: Display + Send + Sync + 'static>(self, context: C) -> CliResult<T> {
        self.map_err(|e| Failure::internal(e.into().context(context)))
    }
}

macro_rules! bail_input {
    ($($arg:tt)*) => {
        return Err($crate::error::Failure::input(anyhow::anyhow!($($arg)*)))
    };
}
pub(crate) use bail_input;
