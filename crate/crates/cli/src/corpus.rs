use std::path::PathBuf;

use clap::{Args, Subcommand};
use refsteg_core::Corpus;

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus directory.
    #[arg(long, env = crate::CORPUS_ENV)]
    corpus: PathBuf,
    #[command(subcommand)]
    action: Action,
}

#[derive(Debug, Subcommand)]
enum Action {
    /// Add files; prints `<id>  <path>` for each.
    Add {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// List resources as `<id>  <bytes>  <source>`.
    List,
}

pub fn run(args: CorpusArgs) -> Result<(), CliError> {
    let corpus = Corpus::open(&args.corpus)?;
    match args.action {
        Action::Add { paths } => {
            for p in paths {
                if !p.is_file() {
                    return Err(CliError::usage(format!("{} is not a readable file", p.display())));
                }
                let id = corpus.add_path(&p)?;
                println!("{id}  {}", p.display());
            }
        }
        Action::List => {
            for e in corpus.list()? {
                println!("{}  {}  {}", e.id, e.len, e.source);
            }
        }
    }
    Ok(())
}
