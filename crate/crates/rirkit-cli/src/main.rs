//! `rirkit` command-line tool.
//!
//! Exit codes: 0 on success, 2 on usage errors (from clap), 3 on data or
//! precondition errors, each reported as a single `error: ...` line on
//! stderr. Every command is deterministic given its inputs; the only
//! randomized operation (`rvq train`) requires an explicit `--seed`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rirkit::acoustics::{acoustic_error_report, drr, edt, t60, Rir};
use rirkit::blob;
use rirkit::error::Error;
use rirkit::geomat;
use rirkit::losses::{
    adversarial_hinge_loss, generator_total_loss, mel_loss, metric_loss, rir_mse, stft_loss,
    DiscriminatorScores, LossReport, LossWeights,
};
use rirkit::rvq::{bitrate, CodeSequence, RvqCodec, RvqConfig};
use rirkit::signal::{convolve, scale};
use rirkit::sim::{simulate_rir, RoomSpec};
use rirkit::spectral::SpectralConfig;
use rirkit::store::{
    assemble_estimate_with_mode, load_store, save_store, Embedding, EmbeddingStore, SpliceConfig,
    SpliceMode,
};
use rirkit::wav::{read_wav, write_wav_f32};

#[derive(Parser)]
#[command(name = "rirkit", version, about = "Room acoustics toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute acoustic metrics of an RIR, or an error report against a
    /// ground-truth RIR.
    Analyze(AnalyzeArgs),
    /// Convolve clean speech with an RIR to synthesize reverberant speech.
    Reverb(ReverbArgs),
    /// Evaluate the mel/STFT/MSE loss stack over WAV pairs.
    Losses(Box<LossesArgs>),
    /// Residual vector quantizer: train, encode, decode, bitrate.
    #[command(subcommand)]
    Rvq(RvqCommand),
    /// Build geometry/material feature maps.
    #[command(subcommand)]
    Geomat(GeomatCommand),
    /// Embedding datastore: build, query, splice.
    #[command(subcommand)]
    Store(StoreCommand),
    /// Simulate a shoebox RIR with the image-source method.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// RIR WAV file (mono, 16 kHz).
    rir: PathBuf,
    /// Ground-truth RIR WAV; switches output to the error report.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Early/late boundary in samples for EMSE/LMSE.
    #[arg(long, default_value_t = 2000)]
    boundary: usize,
}

#[derive(Args)]
struct ReverbArgs {
    clean: PathBuf,
    rir: PathBuf,
    output: PathBuf,
    /// Scale the result so its peak amplitude is 1.0.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct LossesArgs {
    /// Estimated reverberant speech WAV.
    #[arg(long)]
    estimated_reverberant: PathBuf,
    /// Reference reverberant speech WAV.
    #[arg(long)]
    reverberant: PathBuf,
    /// Estimated clean speech WAV.
    #[arg(long)]
    estimated_clean: PathBuf,
    /// Reference clean speech WAV.
    #[arg(long)]
    clean: PathBuf,
    /// Estimated RIR WAV.
    #[arg(long)]
    estimated_rir: PathBuf,
    /// Reference RIR WAV.
    #[arg(long)]
    rir: PathBuf,
    /// JSON file with discriminator scores; omitting it reports 0
    /// adversarial loss.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Reported quantizer losses entering the generator total.
    #[arg(long, default_value_t = 0.0)]
    vq1: f64,
    #[arg(long, default_value_t = 0.0)]
    vq2: f64,
    /// Metric-loss weights (STFT and RIR-MSE terms).
    #[arg(long, default_value_t = 1.0)]
    metric_lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    metric_lambda2: f64,
    /// Generator-loss weights (adversarial and VQ terms).
    #[arg(long, default_value_t = 1.0)]
    gen_lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    gen_lambda2: f64,
    /// Comma-separated analysis window lengths.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum RvqCommand {
    /// Train a codec on a vector file with repeated full-batch EMA steps.
    Train(RvqTrainArgs),
    /// Encode vectors to a code grid.
    Encode(RvqEncodeArgs),
    /// Decode a code grid back to vectors.
    Decode(RvqDecodeArgs),
    /// Print the code-stream bitrate in bits/second.
    Bitrate(RvqBitrateArgs),
}

#[derive(Args)]
struct RvqTrainArgs {
    /// Training vectors: f32 matrix, one vector per row.
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long, default_value_t = 64)]
    layers: usize,
    #[arg(long, default_value_t = 8192)]
    codebook_size: usize,
    #[arg(long)]
    steps: usize,
    /// Seed for codebook initialization (required: no wall-clock seeding).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    ema_decay: f32,
    #[arg(long, default_value_t = 0.25)]
    beta: f32,
    /// Optional per-step loss log ("step vq_loss commitment_loss" lines).
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct RvqEncodeArgs {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RvqDecodeArgs {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    codes: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RvqBitrateArgs {
    #[arg(long)]
    layers: usize,
    #[arg(long)]
    codebook_size: usize,
    /// Code frames per second.
    #[arg(long)]
    fps: f64,
}

#[derive(Subcommand)]
enum GeomatCommand {
    /// Assemble the 3-channel feature map from segmentation + depth + DB.
    Build(GeomatBuildArgs),
}

#[derive(Args)]
struct GeomatBuildArgs {
    /// Segmentation label map, 16-bit binary PGM.
    #[arg(long)]
    segmentation: PathBuf,
    /// JSON object mapping label integers to object names.
    #[arg(long)]
    labels: PathBuf,
    /// Depth map in meters: f32 matrix, rows x cols = H x W.
    #[arg(long)]
    depth: PathBuf,
    /// Absorption database: JSON array with a "default" entry.
    #[arg(long)]
    materials: PathBuf,
    /// Output PNG path; a .json sidecar with the depth scale sits next to it.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum StoreCommand {
    /// Ingest (id, embedding, RIR) triples listed in a JSON file.
    Build(StoreBuildArgs),
    /// Print the top-k nearest entries for a query embedding.
    Query(StoreQueryArgs),
    /// Retrieve the best entry and splice its late region into an estimate.
    Splice(StoreSpliceArgs),
}

#[derive(Args)]
struct StoreBuildArgs {
    /// JSON array of {"id", "embedding", "rir"} with paths resolved
    /// relative to this file.
    #[arg(long)]
    entries: PathBuf,
    /// Output store directory.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct StoreQueryArgs {
    #[arg(long)]
    store: PathBuf,
    /// Query embedding: f32 matrix, flattened.
    #[arg(long)]
    embedding: PathBuf,
    #[arg(short, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct StoreSpliceArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    embedding: PathBuf,
    /// Early estimate RIR WAV.
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 2000)]
    boundary: usize,
    #[arg(long, default_value_t = 4000)]
    end: usize,
    /// Add the retrieved late region instead of replacing.
    #[arg(long)]
    additive: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Room spec JSON (dims, wall_absorption, source, listener, max_order,
    /// rir_len).
    #[arg(long)]
    room: PathBuf,
    /// Output RIR WAV (float-32).
    #[arg(long)]
    output: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(3);
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Reverb(args) => cmd_reverb(args),
        Command::Losses(args) => cmd_losses(*args),
        Command::Rvq(cmd) => match cmd {
            RvqCommand::Train(args) => cmd_rvq_train(args),
            RvqCommand::Encode(args) => cmd_rvq_encode(args),
            RvqCommand::Decode(args) => cmd_rvq_decode(args),
            RvqCommand::Bitrate(args) => cmd_rvq_bitrate(args),
        },
        Command::Geomat(GeomatCommand::Build(args)) => cmd_geomat_build(args),
        Command::Store(cmd) => match cmd {
            StoreCommand::Build(args) => cmd_store_build(args),
            StoreCommand::Query(args) => cmd_store_query(args),
            StoreCommand::Splice(args) => cmd_store_splice(args),
        },
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn read_rir(path: &Path, boundary: usize) -> Result<Rir, Error> {
    let audio = read_wav(path)?;
    let mut rir = Rir::from_audio(&audio)?;
    rir.set_early_late_boundary(boundary.min(rir.len()))?;
    Ok(rir)
}

/// Absolute-metrics output of `analyze` without --gt.
#[derive(Serialize)]
struct AnalyzeReport {
    /// Reverberation time in seconds.
    t60: f64,
    /// Early decay time in seconds.
    edt: f64,
    /// Direct-to-reverberant ratio in dB; null when there is no reflected
    /// energy.
    drr: Option<f64>,
    drr_unbounded: bool,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let est = read_rir(&args.rir, args.boundary)?;
    match args.gt {
        Some(gt_path) => {
            let gt = read_rir(&gt_path, args.boundary)?;
            let report = acoustic_error_report(&est, &gt)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        None => {
            let d = drr(&est)?;
            let report = AnalyzeReport {
                t60: t60(&est)?,
                edt: edt(&est)?,
                drr: if d.unbounded { None } else { Some(d.db) },
                drr_unbounded: d.unbounded,
            };
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

fn cmd_reverb(args: ReverbArgs) -> Result<(), Error> {
    let clean = read_wav(&args.clean)?;
    let rir = read_wav(&args.rir)?;
    let mut out = convolve(&clean, &rir)?;
    if args.normalize {
        let peak = out.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak > 0.0 {
            out = scale(&out, 1.0 / peak)?;
        }
    }
    write_wav_f32(&args.output, &out)
}

fn cmd_losses(args: LossesArgs) -> Result<(), Error> {
    let mut cfg = SpectralConfig::default();
    if let Some(windows) = args.windows {
        cfg.window_lengths = windows;
    }
    cfg.validate()?;

    let reverberant_est = read_wav(&args.estimated_reverberant)?;
    let reverberant = read_wav(&args.reverberant)?;
    let clean_est = read_wav(&args.estimated_clean)?;
    let clean = read_wav(&args.clean)?;
    let rir_est = Rir::from_audio(&read_wav(&args.estimated_rir)?)?;
    let rir_ref = Rir::from_audio(&read_wav(&args.rir)?)?;

    let mel = mel_loss(&reverberant_est, &reverberant, &clean_est, &clean, &cfg)?;
    let stft = stft_loss(&reverberant_est, &reverberant, &clean_est, &clean, &cfg)?;
    let mse = rir_mse(&rir_est, &rir_ref)?;
    let metric_weights = LossWeights::new(args.metric_lambda1, args.metric_lambda2)?;
    let metric = metric_loss(mel, stft.total, mse, &metric_weights)?;

    let adversarial = match args.scores {
        Some(path) => {
            let scores: DiscriminatorScores =
                serde_json::from_str(&fs::read_to_string(&path)?)?;
            adversarial_hinge_loss(&scores)?
        }
        None => 0.0,
    };
    let gen_weights = LossWeights::new(args.gen_lambda1, args.gen_lambda2)?;
    let generator = generator_total_loss(metric, adversarial, args.vq1, args.vq2, &gen_weights)?;

    let report = LossReport {
        mel,
        stft_mag: stft.magnitude,
        stft_phase: stft.phase,
        rir_mse: mse,
        metric,
        adversarial,
        generator,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn read_vector_rows(path: &Path) -> Result<Vec<Vec<f32>>, Error> {
    let (rows, cols, data) = blob::read_f32_matrix(path)?;
    Ok((0..rows)
        .map(|r| data[r * cols..(r + 1) * cols].to_vec())
        .collect())
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    final_vq_loss: f32,
    final_commitment_loss: f32,
}

fn cmd_rvq_train(args: RvqTrainArgs) -> Result<(), Error> {
    let vectors = read_vector_rows(&args.vectors)?;
    if vectors.is_empty() {
        return Err(Error::EmptyInput("training vectors"));
    }
    let config = RvqConfig {
        num_layers: args.layers,
        codebook_size: args.codebook_size,
        dim: vectors[0].len(),
        ema_decay: args.ema_decay,
        commitment_beta: args.beta,
        seed: args.seed,
    };
    let mut codec = RvqCodec::new(config, &vectors)?;
    let mut log = String::new();
    let mut last = None;
    for step in 0..args.steps {
        let stats = codec.train_step(&vectors)?;
        log.push_str(&format!(
            "{step} {} {}\n",
            stats.vq_loss, stats.commitment_loss
        ));
        last = Some(stats);
    }
    codec.save(&args.output)?;
    if let Some(path) = args.loss_log {
        fs::write(path, log)?;
    }
    let summary = TrainSummary {
        steps: args.steps,
        final_vq_loss: last.map(|s| s.vq_loss).unwrap_or(f32::NAN),
        final_commitment_loss: last.map(|s| s.commitment_loss).unwrap_or(f32::NAN),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct CodesSummary {
    frames: usize,
    layers: usize,
}

fn cmd_rvq_encode(args: RvqEncodeArgs) -> Result<(), Error> {
    let codec = RvqCodec::load(&args.codec)?;
    let vectors = read_vector_rows(&args.vectors)?;
    let codes = codec.encode_frames(&vectors)?;
    blob::write_codes_matrix(
        &args.output,
        codes.frames(),
        codes.num_layers(),
        codes.codes(),
    )?;
    let summary = CodesSummary {
        frames: codes.frames(),
        layers: codes.num_layers(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_rvq_decode(args: RvqDecodeArgs) -> Result<(), Error> {
    let codec = RvqCodec::load(&args.codec)?;
    let (frames, layers, data) = blob::read_codes_matrix(&args.codes)?;
    let codes = CodeSequence::new(data, frames, layers)?;
    let decoded = codec.decode(&codes)?;
    let dim = codec.config().dim;
    let flat: Vec<f32> = decoded.into_iter().flatten().collect();
    blob::write_f32_matrix(&args.output, frames, dim, &flat)?;
    let summary = CodesSummary { frames, layers };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_rvq_bitrate(args: RvqBitrateArgs) -> Result<(), Error> {
    let config = RvqConfig {
        num_layers: args.layers,
        codebook_size: args.codebook_size,
        ..RvqConfig::new(1)
    };
    let bps = bitrate(&config, args.fps)?;
    println!("{}", bps.round() as u64);
    Ok(())
}

fn cmd_geomat_build(args: GeomatBuildArgs) -> Result<(), Error> {
    let (labels, width, height) = geomat::read_pgm16(&args.segmentation)?;
    let label_names = geomat::parse_label_names(&fs::read_to_string(&args.labels)?)?;
    let seg = geomat::SegmentationMap::new(labels, width, height, label_names)?;

    let (rows, cols, depth_data) = blob::read_f32_matrix(&args.depth)?;
    let depth =
        geomat::DepthMap::new(depth_data.iter().map(|&v| v as f64).collect(), cols, rows)?;

    let db = geomat::load_absorption_db(&args.materials)?;
    let map = geomat::build_geomat(&seg, &depth, &db)?;
    geomat::write_geomat_png(&args.output, &map)?;
    let sidecar = geomat::GeoMatSidecar {
        width: map.width,
        height: map.height,
        depth_scale: map.depth_scale,
    };
    println!("{}", serde_json::to_string(&sidecar)?);
    Ok(())
}

#[derive(Deserialize)]
struct StoreEntrySpec {
    id: String,
    embedding: PathBuf,
    rir: PathBuf,
}

fn cmd_store_build(args: StoreBuildArgs) -> Result<(), Error> {
    let entries: Vec<StoreEntrySpec> =
        serde_json::from_str(&fs::read_to_string(&args.entries)?)?;
    let base = args.entries.parent().unwrap_or(Path::new("."));
    let mut store = EmbeddingStore::new();
    for spec in entries {
        let (_, _, values) = blob::read_f32_matrix(base.join(&spec.embedding))?;
        let embedding = Embedding::new(values.iter().map(|&v| v as f64).collect())?;
        let rir = Rir::from_audio(&read_wav(base.join(&spec.rir))?)?;
        store.add_entry(spec.id, embedding, rir)?;
    }
    save_store(&store, &args.output)?;
    println!(
        "{}",
        serde_json::json!({ "entries": store.len(), "dim": store.dim() })
    );
    Ok(())
}

fn read_query_embedding(path: &Path) -> Result<Embedding, Error> {
    let (_, _, values) = blob::read_f32_matrix(path)?;
    Embedding::new(values.iter().map(|&v| v as f64).collect())
}

#[derive(Serialize)]
struct QueryHit {
    id: String,
    similarity: f64,
}

fn cmd_store_query(args: StoreQueryArgs) -> Result<(), Error> {
    let store = load_store(&args.store)?;
    let query = read_query_embedding(&args.embedding)?;
    let hits = store.retrieve(&query, args.k)?;
    let out: Vec<QueryHit> = hits
        .iter()
        .map(|h| QueryHit {
            id: h.id.to_string(),
            similarity: h.similarity,
        })
        .collect();
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn cmd_store_splice(args: StoreSpliceArgs) -> Result<(), Error> {
    let store = load_store(&args.store)?;
    let query = read_query_embedding(&args.embedding)?;
    let est = Rir::from_audio(&read_wav(&args.estimate)?)?;
    let cfg = SpliceConfig::new(args.boundary, args.end)?;
    let mode = if args.additive {
        SpliceMode::Additive
    } else {
        SpliceMode::Replace
    };
    let (assembled, id) = assemble_estimate_with_mode(&est, &store, &query, &cfg, mode)?;
    write_wav_f32(&args.output, &assembled.to_audio())?;
    println!("{}", serde_json::json!({ "retrieved_id": id }));
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    samples: usize,
    duration_seconds: f64,
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let spec = RoomSpec::from_json(&fs::read_to_string(&args.room)?)?;
    let (room, source, listener, params) = spec.build()?;
    let rir = simulate_rir(&room, source, listener, &params)?;
    write_wav_f32(&args.output, &rir.to_audio())?;
    let summary = SimulateSummary {
        samples: rir.len(),
        duration_seconds: rir.len() as f64 / params.sample_rate as f64,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
