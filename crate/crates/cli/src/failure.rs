use abd_core::dynamics::DynamicsError;
use abd_core::envs::EnvError;
use abd_core::learn::LearnError;
use abd_core::morphology::MorphologyError;
use abd_core::nets::NetError;

pub const DATA: u8 = 2;
pub const USAGE: u8 = 64;
pub const NUMERIC: u8 = 70;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(DATA, e.to_string())
    }
}

impl From<MorphologyError> for Failure {
    fn from(e: MorphologyError) -> Self {
        Failure::new(DATA, e.to_string())
    }
}

impl From<DynamicsError> for Failure {
    fn from(e: DynamicsError) -> Self {
        let code = match e {
            DynamicsError::UnknownLink(_) | DynamicsError::Dimension(_) => USAGE,
            _ => NUMERIC,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let code = match &e {
            EnvError::Dimension(_) | EnvError::Config(_) | EnvError::UnknownPreset(_) => USAGE,
            EnvError::Morphology(_) | EnvError::Io(_) => DATA,
            EnvError::Dynamics(_) | EnvError::NonFinite(_) => NUMERIC,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        let code = match &e {
            NetError::Autodiff(_) => NUMERIC,
            NetError::Config(_) => USAGE,
            NetError::TreeMismatch { .. } | NetError::Checkpoint(_) | NetError::Io(_) => DATA,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<LearnError> for Failure {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Env(e) => e.into(),
            LearnError::Net(e) => e.into(),
            LearnError::Config(_) => Failure::new(USAGE, e.to_string()),
            LearnError::NaNLoss { .. } => Failure::new(NUMERIC, e.to_string()),
            LearnError::EmptyDataset(_) | LearnError::Io(_) | LearnError::Csv(_) => Failure::new(DATA, e.to_string()),
        }
    }
}
