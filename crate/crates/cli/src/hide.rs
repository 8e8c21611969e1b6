use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refsteg_core::carrier::{CarrierError, CarrierRecord, SelectionRule};
use refsteg_core::model;
use refsteg_core::parallel::{
    hide_parallel, CarrierSupplier, CorpusSupplier, ModelPool, ModelSupplier, ParallelOptions, SecretNumber,
    SplitPlan,
};
use refsteg_core::protocol::{self, Bundle, Nonce, DEFAULT_VERIFY_M};
use refsteg_core::{CarrierSource, SecretLocation};

use crate::error::{read_input, write_output, CliError};
use crate::{SourceArgs, Timer};

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["message", "text"])))]
#[command(group(ArgGroup::new("carriers").required(true).args(["carrier", "auto_select"])))]
pub struct HideArgs {
    /// File holding the secret message.
    #[arg(long)]
    message: Option<PathBuf>,
    /// Secret message given inline.
    #[arg(long)]
    text: Option<String>,
    /// Carrier location: a path, file://, http(s):// or corpus:// URI,
    /// optionally with `#start-end,...` segments. Repeat for several carriers.
    #[arg(long)]
    carrier: Vec<String>,
    /// Pick carriers at random from the corpus.
    #[arg(long, requires = "block_size")]
    auto_select: bool,
    /// Carrier size in bytes for --auto-select.
    #[arg(long)]
    block_size: Option<u64>,
    /// Hiding model file. Repeat to rotate over several models.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Reference model files by path and checksum instead of embedding them.
    #[arg(long)]
    model_ref: bool,
    /// Authorization sets per message (or per chunk).
    #[arg(long, default_value_t = 1)]
    redundancy: usize,
    /// Split the message into chunks of this many bytes.
    #[arg(long)]
    chunk_len: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Message tail bytes kept for verification.
    #[arg(long, default_value_t = DEFAULT_VERIFY_M)]
    verify_m: usize,
    /// Seed for carrier selection and the bundle nonce.
    #[arg(long)]
    seed: Option<u64>,
    /// Bundle file to write.
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
}

/// Explicit carriers handed out in order: chunk-major, then replica.
struct ListSupplier<'a> {
    carriers: &'a [CarrierRecord],
    redundancy: usize,
}

impl CarrierSupplier for ListSupplier<'_> {
    fn next_carrier(&self, number: SecretNumber, replica: usize) -> Result<CarrierRecord, CarrierError> {
        Ok(self.carriers[number.index() * self.redundancy + replica].clone())
    }
}

fn parse_location(text: &str) -> Result<SecretLocation, CliError> {
    if text.contains("://") {
        return Ok(text.parse()?);
    }
    let (path, fragment) = match text.rsplit_once('#') {
        Some((p, f)) => (p, Some(f)),
        None => (text, None),
    };
    let abs = std::path::absolute(Path::new(path))
        .map_err(|e| CliError::usage(format!("bad carrier path {path}: {e}")))?;
    let uri = match fragment {
        Some(f) => format!("file://{}#{f}", abs.display()),
        None => format!("file://{}", abs.display()),
    };
    Ok(uri.parse()?)
}

fn load_models(args: &HideArgs) -> Result<ModelPool, CliError> {
    if args.model_ref {
        let paths = args
            .model
            .iter()
            .map(|p| std::path::absolute(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(ModelPool::from_files(&paths)?);
    }
    let models = args
        .model
        .iter()
        .map(|p| model::deserialize_model(&read_input(p)?).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelPool::new(models)?)
}

pub fn run(args: HideArgs, mut timer: Timer) -> Result<(), CliError> {
    if args.redundancy == 0 {
        return Err(CliError::usage("--redundancy must be at least 1"));
    }
    let message = match (&args.message, &args.text) {
        (Some(p), _) => read_input(p)?,
        (None, Some(t)) => t.clone().into_bytes(),
        (None, None) => unreachable!("clap enforces an input"),
    };
    if message.is_empty() {
        return Err(CliError::usage("message is empty"));
    }
    let models = load_models(&args)?;
    timer.lap("load models");

    let capacity = models.capacity();
    let chunked = args.chunk_len.is_some() || message.len() > capacity;
    let chunk_len = args.chunk_len.unwrap_or(capacity);
    let parts = if chunked {
        SplitPlan::new(message.len(), chunk_len)?.parts
    } else {
        1
    };
    let needed = parts * args.redundancy;

    let seed = args.seed.unwrap_or_else(|| rand::thread_rng().gen());
    let nonce = match args.seed {
        Some(s) => Nonce::from_bytes(ChaCha8Rng::seed_from_u64(s).gen()),
        None => Nonce::random(),
    };

    let resolver = args.source.resolver()?;
    let explicit: Vec<CarrierRecord> = if args.auto_select {
        Vec::new()
    } else {
        if args.carrier.len() != needed {
            return Err(CliError::usage(format!(
                "{} carriers given, {needed} needed ({parts} chunk(s) x redundancy {})",
                args.carrier.len(),
                args.redundancy
            )));
        }
        args.carrier
            .iter()
            .map(|c| Ok(resolver.resolve(&parse_location(c)?)?))
            .collect::<Result<_, CliError>>()?
    };
    let corpus_supplier;
    let list_supplier;
    let supplier: &dyn CarrierSupplier = if args.auto_select {
        let corpus = resolver
            .corpus()
            .ok_or_else(|| CliError::usage(format!("--auto-select needs --corpus or {}", crate::CORPUS_ENV)))?;
        let block = args.block_size.expect("clap requires --block-size");
        corpus_supplier = CorpusSupplier::new(corpus, SelectionRule::block(block), seed);
        &corpus_supplier
    } else {
        list_supplier = ListSupplier {
            carriers: &explicit,
            redundancy: args.redundancy,
        };
        &list_supplier
    };
    timer.lap("resolve carriers");

    let bundle = if chunked {
        let opts = ParallelOptions {
            chunk_len: Some(chunk_len),
            workers: args.workers,
            redundancy: args.redundancy,
            verify_m: args.verify_m,
            nonce: Some(nonce),
        };
        hide_parallel(&message, supplier, &models, &opts)?
    } else {
        let first = SecretNumber::new(0).expect("zero is a valid secret number");
        let sets = (0..args.redundancy)
            .map(|r| {
                let carrier = supplier.next_carrier(first, r)?;
                let m = models.model(first, r);
                let mut set = protocol::hide_with_ref(&message, &carrier, &m.params, m.reference)?;
                set.set_index = r as u32;
                Ok(set)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let verification = protocol::make_verification(&message, args.verify_m.min(message.len()))?;
        Bundle::new(sets, verification).with_nonce(nonce)
    };
    timer.lap("hide");

    write_output(&args.output, bundle.to_json().as_bytes())?;
    println!("sets: {}", bundle.authorization_sets.len());
    println!("chunks: {}", bundle.plan.as_ref().map_or(1, |p| p.parts));
    println!("verification m: {}", bundle.verification.m);
    println!("bundle: {}", args.output.display());
    Ok(())
}
