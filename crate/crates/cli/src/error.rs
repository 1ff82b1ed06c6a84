use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] aoii_core::Error),

    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl CliError {
    /// 2 for bad input, 3 for infeasible budgets, 4 for numerical failures,
    /// 1 for output I/O.
    pub fn exit_code(&self) -> i32 {
        use aoii_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Output { .. } => 1,
            CliError::Core(e) => match e {
                E::Infeasible(_) => 3,
                E::Singular { .. } | E::NonFinite(_) => 4,
                E::Dimension(_)
                | E::TooFewStates(_)
                | E::RowSum { .. }
                | E::NegativeRate { .. }
                | E::Reducible { .. }
                | E::InvalidParameter(_)
                | E::GridTooLarge { .. } => 2,
            },
        }
    }
}
