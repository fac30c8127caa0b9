use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("argument error: {0}")]
    Arg(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("policy iteration did not converge within {0} iterations")]
    NotConverged(usize),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Corrupt { path: PathBuf, msg: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn corrupt(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Corrupt {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Arg(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Io { .. } | CliError::Corrupt { .. } => 5,
        }
    }
}

impl From<dkgp::Error> for CliError {
    fn from(e: dkgp::Error) -> Self {
        match e {
            dkgp::Error::InvalidArgument(_) | dkgp::Error::DimensionMismatch { .. } => {
                CliError::Arg(e.to_string())
            }
            dkgp::Error::Factorization { .. } | dkgp::Error::Numerical(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Arg("x".into()).exit_code(), 2);
        assert_eq!(
            CliError::from(dkgp::Error::Factorization { jitter: 1.0 }).exit_code(),
            3
        );
        assert_eq!(
            CliError::from(dkgp::Error::InvalidArgument("x".into())).exit_code(),
            2
        );
        assert_eq!(CliError::NotConverged(3).exit_code(), 4);
        let e = CliError::io(Path::new("a/b"), std::io::ErrorKind::NotFound.into());
        assert_eq!(e.exit_code(), 5);
        assert!(e.to_string().starts_with("a/b"));
    }
}
