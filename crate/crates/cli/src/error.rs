use std::fmt::Display;
use std::process::ExitCode;

use wavepinn_core::diffnet::DiffnetError;
use wavepinn_core::pca_filter::PcaError;
use wavepinn_core::pinn_trainer::TrainError;
use wavepinn_core::wavegen::WaveError;

/// Failure classes and their process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    Usage = 2,
    Io = 3,
    Numeric = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Failure,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: Failure, msg: impl Display) -> Self {
        CliError {
            kind,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn usage(msg: impl Display) -> Self {
        Self::new(Failure::Usage, msg)
    }

    pub fn io(msg: impl Display) -> Self {
        Self::new(Failure::Io, msg)
    }

    pub fn numeric(msg: impl Display) -> Self {
        Self::new(Failure::Numeric, msg)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

fn wave_kind(e: &WaveError) -> Failure {
    match e {
        WaveError::CflViolation { .. } | WaveError::NonFinite { .. } => Failure::Numeric,
        WaveError::BadMagic
        | WaveError::VersionMismatch(_)
        | WaveError::Truncated(_)
        | WaveError::Header(_)
        | WaveError::Shape(_)
        | WaveError::Io(_) => Failure::Io,
        WaveError::InvalidGrid(_)
        | WaveError::InvalidSpeed(_)
        | WaveError::InvalidCrack(_)
        | WaveError::InvalidSource(_)
        | WaveError::NonFiniteInput(_) => Failure::Usage,
    }
}

fn diffnet_kind(e: &DiffnetError) -> Failure {
    match e {
        DiffnetError::Format(_) | DiffnetError::Io(_) => Failure::Io,
        _ => Failure::Usage,
    }
}

impl From<WaveError> for CliError {
    fn from(e: WaveError) -> Self {
        CliError {
            kind: wave_kind(&e),
            error: e.into(),
        }
    }
}

impl From<DiffnetError> for CliError {
    fn from(e: DiffnetError) -> Self {
        CliError {
            kind: diffnet_kind(&e),
            error: e.into(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let kind = match &e {
            TrainError::Config(_) | TrainError::EmptySelection(_) => Failure::Usage,
            TrainError::Diverged { .. } => Failure::Numeric,
            TrainError::Network(n) => diffnet_kind(n),
            TrainError::Wave(w) => wave_kind(w),
            TrainError::Io(_) => Failure::Io,
        };
        CliError { kind, error: e.into() }
    }
}

impl From<PcaError> for CliError {
    fn from(e: PcaError) -> Self {
        let kind = match &e {
            PcaError::NonFinite | PcaError::ZeroVariance => Failure::Numeric,
            PcaError::TooFewSamples(_) | PcaError::InvalidThreshold(_) | PcaError::InvalidComponents { .. } => {
                Failure::Usage
            }
            PcaError::Shape { .. } => Failure::Io,
            PcaError::Wave(w) => wave_kind(w),
        };
        CliError { kind, error: e.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            kind: Failure::Io,
            error: e.into(),
        }
    }
}

/// Attaches a description (usually a path) to an error without changing its class.
pub trait ResultExt<T> {
    fn at(self, what: impl Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> ResultExt<T> for Result<T, E> {
    fn at(self, what: impl Display) -> CliResult<T> {
        self.map_err(|e| {
            let e = e.into();
            CliError {
                kind: e.kind,
                error: e.error.context(what.to_string()),
            }
        })
    }
}
