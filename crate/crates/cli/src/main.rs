mod corpus;
mod error;
mod extract;
mod hide;
mod package;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use refsteg_core::carrier::HttpFetcher;
use refsteg_core::{Corpus, Resolver};

use error::CliError;

pub const CACHE_ENV: &str = "REFSTEG_CACHE_DIR";
pub const CORPUS_ENV: &str = "REFSTEG_CORPUS";

#[derive(Debug, Parser)]
#[command(name = "refsteg", version, about = "Hide messages as differences against model outputs on unmodified carriers")]
struct Cli {
    /// Increase log detail; -v also prints phase timings.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hide a message and write an authorization bundle.
    Hide(hide::HideArgs),
    /// Recover a message from a bundle or from its three channel artifacts.
    Extract(extract::ExtractArgs),
    /// Train a hiding model from carrier/output pairs.
    Train(train::TrainArgs),
    /// Split a bundle into locations, differences and models artifacts.
    Package(package::PackageArgs),
    /// Manage the local carrier corpus.
    Corpus(corpus::CorpusArgs),
    /// Write the demo carrier image and label model.
    Fixtures(package::FixturesArgs),
}

/// Flags shared by commands that resolve carriers.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Corpus directory for corpus:// carriers.
    #[arg(long, env = CORPUS_ENV)]
    pub corpus: Option<PathBuf>,
    /// Cache directory for HTTP carriers.
    #[arg(long, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,
    /// Ignore cached HTTP responses.
    #[arg(long)]
    pub no_cache: bool,
}

impl SourceArgs {
    pub fn open_corpus(&self) -> Result<Option<Corpus>, CliError> {
        self.corpus.as_ref().map(Corpus::open).transpose().map_err(CliError::from)
    }

    pub fn resolver(&self) -> Result<Resolver, CliError> {
        let mut http = HttpFetcher::new().bypass_cache(self.no_cache);
        if let Some(dir) = &self.cache_dir {
            http = http.with_cache_dir(dir);
        }
        let mut resolver = Resolver::new().with_http(http);
        if let Some(c) = self.open_corpus()? {
            resolver = resolver.with_corpus(c);
        }
        Ok(resolver)
    }
}

/// Prints phase durations to stderr when enabled.
pub struct Timer {
    enabled: bool,
    start: Instant,
}

impl Timer {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            start: Instant::now(),
        }
    }

    pub fn lap(&mut self, phase: &str) {
        if self.enabled {
            eprintln!("time {phase}: {:.3?}", self.start.elapsed());
        }
        self.start = Instant::now();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();

    let timer = Timer::new(cli.verbose >= 1);
    let result = match cli.command {
        Command::Hide(a) => hide::run(a, timer),
        Command::Extract(a) => extract::run(a, timer),
        Command::Train(a) => train::run(a, timer),
        Command::Package(a) => package::run(a),
        Command::Corpus(a) => corpus::run(a),
        Command::Fixtures(a) => package::fixtures(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
