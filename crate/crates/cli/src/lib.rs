//! Experiment runner for `dkgp`: the toy regression study, mountain-car
//! training and rollouts, and manifest verification.
//!
//! The binary is a thin wrapper around [`run`]; every command writes its
//! artifacts plus a manifest into the output directory.

pub mod config;
pub mod container;
pub mod error;
pub mod manifest;
pub mod output;
pub mod rollout;
pub mod toy;
pub mod train;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use error::CliError;
use manifest::Manifest;
use output::ArtifactDir;

#[derive(Debug, Parser)]
#[command(
    name = "dkgp",
    version,
    about = "GP regression with neural-network dual kernels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Rbf,
    Ck,
    Ntk,
}

impl KernelArg {
    fn name(self) -> &'static str {
        match self {
            KernelArg::Rbf => "rbf",
            KernelArg::Ck => "ck",
            KernelArg::Ntk => "ntk",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit RBF, CK and NTK GPs to the simple-machine data.
    Toy {
        #[command(flatten)]
        common: Common,
    },
    /// Learn dynamics and value GPs on mountain car by policy iteration.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kernel: Option<KernelArg>,
    },
    /// Roll out the greedy policy of a trained model.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "N")]
        horizon: Option<usize>,
        /// Directory holding model.bin; defaults to --out.
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
    },
    /// Recompute the checksums listed in a manifest.
    VerifyManifest {
        #[arg(value_name = "PATH")]
        manifest: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn finish(dir: ArtifactDir, command: &str, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let m = Manifest::build(dir.root(), dir.written(), command, cfg)?;
    let path = dir.root().join(format!("manifest_{command}.txt"));
    std::fs::write(&path, m.render()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Runs one command. The returned path is the manifest written (or checked).
pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let result = match cli.command {
        Command::Toy { common } => {
            let cfg = load_config(&common)?;
            let mut dir = ArtifactDir::create(&common.out)?;
            toy::run(&cfg, &mut dir)?;
            finish(dir, "toy", &cfg)
        }
        Command::Train { common, kernel } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = kernel {
                cfg.kernel = k.name().into();
            }
            cfg.pi_config()?;
            let mut dir = ArtifactDir::create(&common.out)?;
            let outcome = train::run(&cfg, &mut dir)?;
            let path = finish(dir, "train", &cfg)?;
            if !outcome.diagnostics.converged {
                return Err(CliError::NotConverged(outcome.diagnostics.iterations()));
            }
            Ok(path)
        }
        Command::Rollout {
            common,
            horizon,
            model,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            if cfg.horizon == 0 {
                return Err(CliError::Arg("horizon must be at least 1".into()));
            }
            let models = container::load(model.as_deref().unwrap_or(&common.out))?;
            let mut dir = ArtifactDir::create(&common.out)?;
            rollout::run(&cfg, &models, &mut dir)?;
            finish(dir, "rollout", &cfg)
        }
        Command::VerifyManifest { manifest } => {
            let m = Manifest::load(&manifest)?;
            let dir = manifest.parent().unwrap_or(Path::new("."));
            let n = m.verify(dir)?;
            println!("{}: {n} files ok", manifest.display());
            Ok(manifest)
        }
    };
    eprintln!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    result
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
