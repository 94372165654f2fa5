//! Command-line front end: argument parsing, configuration, output files and
//! exit codes. Each subcommand lives in [`commands`].

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser};
use serde_json::json;

use anderloc_core::{Error as CoreError, ErrorClass};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "anderloc", version, about = "Localization and loss in disordered 1D media")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: commands::Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Directory for all output files.
    #[arg(long, short, global = true, env = "ANDERLOC_OUT", default_value = ".")]
    pub out: PathBuf,
    /// TOML configuration, or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism. Outputs do not
    /// depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: Option<u64>,
    /// Repeat for more log output on stderr.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e.class() {
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (code, class, message) = match self {
            CliError::Usage(m) => ("usage", "usage", m.clone()),
            CliError::Core(e) => (
                e.code(),
                match e.class() {
                    ErrorClass::Data => "data",
                    ErrorClass::Numerical => "numerical",
                },
                e.to_string(),
            ),
        };
        json!({ "error": { "code": code, "class": class, "message": message, "exit_code": self.exit_code() } })
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(CoreError::Json(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parse `args`, run the command and return the process exit code. Errors
/// are written to stderr as one line of JSON.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let err = usage(e.render().to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return EXIT_USAGE;
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.workers {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))?;
    pool.install(|| commands::dispatch(&cli.command, &cli.global))
}
