use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use refsteg_core::model::{self, OutputHead, TrainingConfig, TrainingSample};

use crate::error::{read_input, read_input_text, write_output, CliError};
use crate::Timer;

/// Dataset layout: `<name>.in` holds a carrier and `<name>.out` the expected
/// model output (label text in label mode).
#[derive(Debug, Args)]
#[command(group(ArgGroup::new("head").required(true).args(["output_len", "labels"])))]
pub struct TrainArgs {
    /// Directory of `<name>.in` / `<name>.out` pairs.
    #[arg(long)]
    dataset: PathBuf,
    /// Bytes head with this many outputs.
    #[arg(long)]
    output_len: Option<u32>,
    /// Label head; one label per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    hidden: Vec<u32>,
    /// Model file to write.
    #[arg(long, short)]
    output: PathBuf,
}

fn load_dataset(dir: &Path, labels: bool) -> Result<Vec<TrainingSample>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("cannot read dataset {}: {e}", dir.display())))?;
    let mut inputs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "in"))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(CliError::usage(format!("dataset {} has no .in files", dir.display())));
    }
    inputs
        .iter()
        .map(|input| {
            let expected_path = input.with_extension("out");
            let expected = if labels {
                read_input_text(&expected_path)?.trim_end_matches(['\r', '\n']).as_bytes().to_vec()
            } else {
                read_input(&expected_path)?
            };
            Ok(TrainingSample {
                carrier: read_input(input)?,
                expected,
            })
        })
        .collect()
}

pub fn run(args: TrainArgs, mut timer: Timer) -> Result<(), CliError> {
    let head = match (&args.labels, args.output_len) {
        (Some(path), _) => {
            let labels: Vec<String> = read_input_text(path)?
                .lines()
                .map(str::trim_end)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            OutputHead::Label { labels }
        }
        (None, Some(n)) => OutputHead::Bytes { output_len: n },
        (None, None) => unreachable!("clap enforces a head"),
    };
    let dataset = load_dataset(&args.dataset, matches!(head, OutputHead::Label { .. }))?;
    timer.lap("load dataset");

    let config = TrainingConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        seed: args.seed,
        hidden: args.hidden.clone(),
        ..TrainingConfig::default()
    };
    let report = model::train(&dataset, head, &config)?;
    timer.lap("train");

    write_output(&args.output, &model::serialize_model(&report.params)?)?;
    println!("samples: {}", dataset.len());
    println!("epochs: {}", args.epochs);
    println!("initial loss: {:.6}", report.initial_loss);
    println!("final loss: {:.6}", report.final_loss());
    println!("model: {}", args.output.display());
    Ok(())
}
