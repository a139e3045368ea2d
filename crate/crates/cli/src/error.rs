use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("unknown model `{0}`; run `list-models` for the catalog")]
    UnknownModel(String),
    #[error(transparent)]
    Core(#[from] sddekit::SddeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
