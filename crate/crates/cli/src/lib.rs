//! The `fairlake` command line.
//!
//! `--url` names the lake: a directory path or `file://` URL opens it in
//! process; an `http(s)://` URL talks to a running `fairlake serve` for the
//! commands the HTTP API covers. Exit status is 0 on success, 1 when a
//! workload or upload row fails (or the service refuses the request), and
//! 2 for usage and configuration errors.

mod local;
mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairlake_core::catalog::acl::Role;
use fairlake_core::lake::LakeError;

#[derive(Debug, Parser)]
#[command(name = "fairlake", version, about = "Catalog, store, datasets and provenance for a FAIR data lake")]
pub struct Cli {
    /// Lake directory, file:// URL, or http(s):// service URL.
    #[arg(long, env = "FAIRLAKE_URL", global = true)]
    pub url: Option<String>,
    /// Bearer token identifying the caller.
    #[arg(long, env = "FAIRLAKE_TOKEN", global = true, hide_env_values = true)]
    pub token: Option<String>,
    /// Dataset cache directory.
    #[arg(long, env = "FAIRLAKE_CACHE", global = true)]
    pub cache: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a lake with an ML schema and a curator token.
    InitCatalog {
        #[arg(long)]
        prefix: String,
        /// Public base URL used in store locations.
        #[arg(long)]
        base_url: Option<String>,
        /// Identity of the first curator.
        #[arg(long, default_value = "curator")]
        curator: String,
    },
    /// Issue a bearer token (curators only).
    #[command(subcommand)]
    Token(TokenCommand),
    #[command(subcommand)]
    Schema(SchemaCommand),
    #[command(subcommand)]
    Vocab(VocabCommand),
    /// Set a catalog-level annotation such as a license.
    Annotate { key: String, value: String },
    /// Upload files listed in a CSV manifest and create their asset records.
    Upload {
        #[arg(long)]
        manifest: PathBuf,
        /// Rows uploaded in parallel.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    #[command(subcommand)]
    Minid(MinidCommand),
    #[command(subcommand)]
    Bag(BagCommand),
    /// Run a command as a recorded execution.
    Run(RunArgs),
    /// Re-materialize the inputs of a recorded execution.
    Restore {
        execution: String,
        #[arg(long)]
        dest: PathBuf,
    },
    /// Assess the catalog, or one dataset, against the FAIR metrics.
    FairCheck {
        /// Dataset minid or RID; the whole catalog when absent.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Serve the lake over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: std::net::SocketAddr,
    },
}

#[derive(Debug, Subcommand)]
pub enum TokenCommand {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long, value_parser = parse_role)]
        role: Role,
    },
}

#[derive(Debug, Subcommand)]
pub enum SchemaCommand {
    /// Define the domain schema from a JSON file.
    Define { spec: PathBuf },
    /// Apply additive changes from a JSON array.
    Evolve { changes: PathBuf },
    /// Print the model document.
    Show,
}

#[derive(Debug, Subcommand)]
pub enum VocabCommand {
    Add {
        vocab: String,
        name: String,
        #[arg(long = "synonym")]
        synonyms: Vec<String>,
        #[arg(long, default_value = "")]
        description: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Create a dataset over the given members.
    Create {
        #[arg(long = "member")]
        members: Vec<String>,
        /// File with one member RID per line.
        #[arg(long)]
        members_file: Option<PathBuf>,
        /// Every record of the dataset link type visible to the caller.
        #[arg(long)]
        all: bool,
        #[arg(long = "type", required = true)]
        types: Vec<String>,
        #[arg(long, default_value = "")]
        description: String,
    },
    /// Split a dataset into child datasets.
    Partition {
        dataset: String,
        /// `name=fraction`, in order.
        #[arg(long = "split", required = true, value_parser = parse_split)]
        splits: Vec<(String, f64)>,
        #[arg(long)]
        stratify_by: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Materialize a dataset bag into the cache and print its path.
    Download { dataset: String },
}

#[derive(Debug, Subcommand)]
pub enum MinidCommand {
    Mint {
        #[arg(long)]
        sha256: String,
        #[arg(long = "location", required = true)]
        locations: Vec<String>,
        #[arg(long, default_value = "")]
        title: String,
    },
    Resolve { identifier: String },
}

#[derive(Debug, Subcommand)]
pub enum BagCommand {
    /// Check a bag directory; `--complete` skips payload digests.
    Validate {
        dir: PathBuf,
        #[arg(long)]
        complete: bool,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Working directory; a fresh one is created when absent.
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    #[arg(last = true, required = true)]
    pub command: Vec<String>,
}

fn parse_role(s: &str) -> Result<Role, String> {
    match s {
        "reader" => Ok(Role::Reader),
        "writer" => Ok(Role::Writer),
        "curator" => Ok(Role::Curator),
        _ => Err("role must be reader, writer or curator".into()),
    }
}

fn parse_split(s: &str) -> Result<(String, f64), String> {
    let (name, frac) = s.split_once('=').ok_or("expected name=fraction")?;
    let frac: f64 = frac.parse().map_err(|_| format!("{frac:?} is not a number"))?;
    if name.is_empty() {
        return Err("partition name is empty".into());
    }
    Ok((name.to_string(), frac))
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; exit 2.
    Usage(String),
    /// The operation ran and failed; exit 1.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Failed(_) => ExitCode::from(1),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<LakeError> for CliError {
    fn from(e: LakeError) -> Self {
        let message = e.to_string();
        match e {
            LakeError::NotALake(_)
            | LakeError::AlreadyExists(_)
            | LakeError::Busy(_)
            | LakeError::WorkdirNotEmpty(_)
            | LakeError::Auth(_)
            | LakeError::ConfigInvalid(_)
            | LakeError::InvalidPartitionSpec(_)
            | LakeError::UnknownDatasetType(_) => CliError::Usage(message),
            _ => CliError::Failed(message),
        }
    }
}

impl From<fairlake_core::CatalogError> for CliError {
    fn from(e: fairlake_core::CatalogError) -> Self {
        LakeError::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

/// Where `--url` points.
pub enum Target {
    Local(PathBuf),
    Remote(String),
}

impl Target {
    pub fn parse(url: &str) -> Target {
        if url.starts_with("http://") || url.starts_with("https://") {
            Target::Remote(url.trim_end_matches('/').to_string())
        } else {
            Target::Local(PathBuf::from(url.strip_prefix("file://").unwrap_or(url)))
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Bag(BagCommand::Validate { dir, complete }) = &cli.command {
        return local::validate(&cli, dir, *complete);
    }
    let url = cli.url.as_deref().ok_or_else(|| CliError::Usage("no lake given (--url or FAIRLAKE_URL)".into()))?;
    match Target::parse(url) {
        Target::Local(root) => local::run(&cli, &root),
        Target::Remote(base) => remote::run(&cli, &base),
    }
}

pub fn main_with_args(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fairlake: {e}");
            e.exit_code()
        }
    }
}

/// Default cache directory when neither `--cache` nor `FAIRLAKE_CACHE` is set.
pub(crate) fn cache_root(cli: &Cli) -> PathBuf {
    cli.cache.clone().unwrap_or_else(|| match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("fairlake"),
        None => std::env::temp_dir().join("fairlake-cache"),
    })
}

pub(crate) fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}
