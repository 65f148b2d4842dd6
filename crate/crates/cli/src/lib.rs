//! Command-line driver: dictionary ingestion, CRM training, merging,
//! fine-tuning and consistency evaluation over files.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: crm_core::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core { source, .. } => match source {
                crm_core::Error::InvalidArgument(_) => 1,
                crm_core::Error::NonFinite(_) => 3,
                _ => 2,
            },
            CliError::Io { .. } => 2,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl std::fmt::Display) -> Result<T, CliError>;
}

impl<T> Context<T> for crm_core::Result<T> {
    fn context(self, what: impl std::fmt::Display) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core {
            context: what.to_string(),
            source,
        })
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Outputs of one command, written only after every one of them is ready.
#[derive(Debug, Default)]
pub(crate) struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    pub(crate) fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.0.push((path.into(), bytes.into()));
    }

    /// Writes each file through a temporary sibling and an atomic rename.
    /// On failure the files renamed so far are removed again.
    pub(crate) fn commit(self) -> Result<(), CliError> {
        let mut staged = Vec::with_capacity(self.0.len());
        for (path, bytes) in &self.0 {
            staged.push((path, stage(path, bytes)?));
        }
        let mut done: Vec<&PathBuf> = Vec::new();
        for (path, tmp) in staged {
            if let Err(e) = tmp.persist(path) {
                for p in done {
                    let _ = std::fs::remove_file(p);
                }
                return Err(CliError::Io {
                    path: path.clone(),
                    source: e.error,
                });
            }
            done.push(path);
        }
        Ok(())
    }
}

fn stage(path: &Path, bytes: &[u8]) -> Result<tempfile::NamedTempFile, CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    // Temporary files default to 0600; outputs should get the usual umask-derived mode.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o666));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    Ok(tmp)
}

/// `<path><suffix>`, e.g. `model.crmw` → `model.crmw.report.json`.
pub(crate) fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Debug, Parser)]
#[command(name = "crm", version, about = "Conceptual role model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mlm,
    Ft,
    Pi,
    Semcr,
    Semaug,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a tab-separated dictionary into a masked-LM corpus.
    DictBuild {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 64)]
        max_len: usize,
    },
    /// Train a checkpoint in one of the training modes.
    Train {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Report path; defaults to `<out>.report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Starting checkpoint, overriding `data.init`.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Sem-CR weight.
        #[arg(long)]
        lambda: Option<f64>,
        /// Sem-Aug substitution rate.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Average checkpoints and attach zero-initialized adapters.
    Merge {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Reads `[merge]` and `seed`; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Adapter rank; defaults to 8.
        #[arg(long)]
        rank: Option<usize>,
        /// Adapter scale numerator; defaults to 16.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fold adapters into plain weights.
    Fold {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score models or prediction files on a consistency suite.
    Eval {
        #[arg(long = "model", num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long = "predictions", num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Earlier reports whose runs form the comparison sample.
        #[arg(long = "baseline", num_args = 1..)]
        baselines: Vec<PathBuf>,
        /// Directory for per-model prediction files.
        #[arg(long)]
        predictions_out: Option<PathBuf>,
    },
    /// Write a synthetic world: dictionary, corpus, task data and suite.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// TOML overrides of the generator sizes.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
