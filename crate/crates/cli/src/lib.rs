//! Scenario runner: loads TOML scenarios, runs the solver modes and renders
//! CSV tables. Nothing touches the filesystem until every run has succeeded.

pub mod runner;
pub mod scenario;

use std::path::Path;

use tclsim_core::Error;

pub use runner::{GateMetrics, Output, Table1};
pub use scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Config(msg),
            Error::InvalidDimension(_)
            | Error::NotHermitian(_)
            | Error::NotTraceless(_)
            | Error::InvalidParameter(_) => CliError::Config(e.to_string()),
            Error::Numerical(msg) => CliError::Numerical(msg),
            Error::StepUnderflow(_) | Error::Quadrature(_) | Error::Consistency(_) => CliError::Numerical(e.to_string()),
        }
    }
}

/// Writes every output through a staging file in `dir`; files are only moved
/// into place once all of them have been written.
pub fn commit(outputs: &[Output], dir: &Path) -> Result<(), CliError> {
    use std::io::Write;
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut staged = Vec::with_capacity(outputs.len());
    for o in outputs {
        let mut f = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        f.write_all(&o.contents).map_err(io)?;
        f.flush().map_err(io)?;
        staged.push((f, dir.join(&o.name)));
    }
    for (f, path) in staged {
        let file = f.persist(&path).map_err(|e| io(e.error))?;
        // staging files are created private; outputs get ordinary permissions
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            file.set_permissions(std::fs::Permissions::from_mode(0o644)).map_err(io)?;
        }
        #[cfg(not(unix))]
        drop(file);
    }
    Ok(())
}
