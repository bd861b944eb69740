use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(docqa::Error),
    #[error("{0}")]
    Endpoint(String),
}

impl CliError {
    /// 1 usage, 2 data validation, 3 endpoint failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Endpoint(_) => 3,
        }
    }
}

impl From<docqa::Error> for CliError {
    fn from(e: docqa::Error) -> Self {
        match e {
            docqa::Error::Config(m) => CliError::Usage(m),
            docqa::Error::UnknownDataset(name) => {
                CliError::Usage(format!("unknown dataset `{name}`"))
            }
            other => CliError::Data(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
