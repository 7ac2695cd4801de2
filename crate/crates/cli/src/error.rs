use thiserror::Error;

/// CLI failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("solver error: {0}")]
    Solver(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Solver(_) => 4,
        }
    }

    /// Short class name stored in result records.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Solver(_) => "solver",
        }
    }
}

impl From<glmdp::Error> for CliError {
    fn from(e: glmdp::Error) -> Self {
        use glmdp::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Config(msg),
            E::Solver { .. } => CliError::Solver(msg),
            E::CrossValidation(_) | E::Data(_) | E::Environment(_) | E::Evaluation(_) | E::Io(_) | E::Csv(_) => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(glmdp::Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(glmdp::Error::Data("x".into())).exit_code(), 3);
        let solver = glmdp::Error::Solver { step: 2, message: "x".into() };
        assert_eq!(CliError::from(solver).exit_code(), 4);
    }
}
