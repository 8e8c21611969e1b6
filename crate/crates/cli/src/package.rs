use std::path::PathBuf;

use clap::Args;
use refsteg_core::fixtures;
use refsteg_core::model;
use refsteg_core::protocol::{package_channels, Bundle};

use crate::error::{read_input_text, write_output, CliError};

pub const LOCATIONS_FILE: &str = "locations.json";
pub const DIFFERENCES_FILE: &str = "differences.json";
pub const MODELS_FILE: &str = "models.json";

#[derive(Debug, Args)]
pub struct PackageArgs {
    /// Bundle to split.
    #[arg(long)]
    bundle: PathBuf,
    /// Directory for the three artifacts.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: PackageArgs) -> Result<(), CliError> {
    let bundle = Bundle::from_json(&read_input_text(&args.bundle)?)?;
    let a = package_channels(&bundle)?;
    for (name, json) in [
        (LOCATIONS_FILE, a.locations.to_json()),
        (DIFFERENCES_FILE, a.differences.to_json()),
        (MODELS_FILE, a.models.to_json()),
    ] {
        let path = args.out_dir.join(name);
        write_output(&path, json.as_bytes())?;
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long)]
    out_dir: PathBuf,
}

/// Writes `tree.ppm` and `experiment-one.bshm`.
pub fn fixtures(args: FixturesArgs) -> Result<(), CliError> {
    let image = args.out_dir.join("tree.ppm");
    write_output(&image, &fixtures::tree_image())?;
    let model_path = args.out_dir.join("experiment-one.bshm");
    write_output(&model_path, &model::serialize_model(&fixtures::experiment_one_model())?)?;
    println!("{}", image.display());
    println!("{}", model_path.display());
    Ok(())
}
