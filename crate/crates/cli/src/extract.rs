use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use refsteg_core::parallel::extract_parallel;
use refsteg_core::protocol::{
    self, Bundle, DifferencesArtifact, LocationsArtifact, ModelsArtifact, PartialChannels,
};

use crate::error::{read_input_text, write_output, CliError};
use crate::{SourceArgs, Timer};

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Authorization bundle.
    #[arg(long, conflicts_with_all = ["locations", "differences", "models"])]
    bundle: Option<PathBuf>,
    /// Locations artifact.
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Differences artifact.
    #[arg(long)]
    differences: Option<PathBuf>,
    /// Models artifact.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Where to write the message; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    source: SourceArgs,
}

fn load_bundle(args: &ExtractArgs) -> Result<Bundle, CliError> {
    if let Some(path) = &args.bundle {
        return Ok(Bundle::from_json(&read_input_text(path)?)?);
    }
    if args.locations.is_none() && args.differences.is_none() && args.models.is_none() {
        return Err(CliError::usage(
            "give --bundle, or --locations, --differences and --models",
        ));
    }
    let read = |p: &Option<PathBuf>| p.as_ref().map(|p| read_input_text(p)).transpose();
    let channels = PartialChannels {
        locations: read(&args.locations)?.map(|t| LocationsArtifact::from_json(&t)).transpose()?,
        differences: read(&args.differences)?.map(|t| DifferencesArtifact::from_json(&t)).transpose()?,
        models: read(&args.models)?.map(|t| ModelsArtifact::from_json(&t)).transpose()?,
    };
    Ok(channels.assemble()?)
}

pub fn run(args: ExtractArgs, mut timer: Timer) -> Result<(), CliError> {
    let bundle = load_bundle(&args)?;
    let resolver = args.source.resolver()?;
    timer.lap("load bundle");

    let message = if let Some(plan) = &bundle.plan {
        let message = extract_parallel(&bundle, &resolver, args.workers)?;
        eprintln!("recovered {} bytes from {} chunks; verification passed", message.len(), plan.parts);
        message
    } else {
        let found = protocol::extract_redundant(&bundle, &resolver)?;
        for f in &found.failures {
            eprintln!("skipped {f}");
        }
        eprintln!("set {} passed verification", found.set_index);
        found.message
    };
    timer.lap("extract");

    match &args.output {
        Some(path) => write_output(path, &message)?,
        None => std::io::stdout()
            .write_all(&message)
            .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}")))?,
    }
    Ok(())
}
