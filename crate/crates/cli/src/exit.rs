use std::process::ExitCode;

/// Command failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Invalid data or a metric that cannot be computed: exit 1.
    Invalid(anyhow::Error),
    /// Bad arguments or configuration: exit 2.
    Usage(anyhow::Error),
    /// File, network or backend failure: exit 3.
    Io(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Usage(e) | Failure::Io(e) => e,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

pub type Outcome = Result<(), Failure>;

pub trait OrFail<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn io(self) -> Result<T, Failure>;
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }
    fn io(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Io(e.into()))
    }
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}
