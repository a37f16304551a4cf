//! Command-line front end: scene synthesis, joint training, rendering,
//! secret reveal, fidelity evaluation, security audit, ablation sweeps, and
//! pruning robustness probes.
//!
//! Exit codes: 2 for usage errors, 3 for data errors, 4 for numerical
//! failures. Every command writes a `manifest.json` beside its outputs so a
//! run can be reproduced from the recorded configuration and seed. Set
//! `SPLATSTEG_THREADS` to bound the worker count of the ablation sweep; all
//! other commands are single-threaded.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use splatsteg_core::config::TrainingConfig;
use splatsteg_core::dataset::make_combined_dataset;
use splatsteg_core::decoder::{
    decode, embed_key, read_decoder, validate_key, write_decoder, FeatureMask,
};
use splatsteg_core::error::{DecodeError, GaussianError, MetricError, RenderError, TrainError};
use splatsteg_core::gaussians::GaussianSet;
use splatsteg_core::metrics::psnr;
use splatsteg_core::ply::{read_ply, write_ply};
use splatsteg_core::render::{render, RenderOptions};
use splatsteg_core::scalar::Real;
use splatsteg_core::scene::{read_cameras, read_png, read_scene, write_png, write_scene};
use splatsteg_core::security::{
    low_opacity_render, pruning_robustness, DEFAULT_LOW_OPACITY_TAU, DEFAULT_PRUNE_RATIOS,
};
use splatsteg_core::sinkhorn::{sinkhorn_3d, GroupDivergence, DEFAULT_BINS, DEFAULT_EPSILON};
use splatsteg_core::ssim::ssim;
use splatsteg_core::synth::{ring_cameras, synth_scene, SynthKind};
use splatsteg_core::train::train;
use splatsteg_core::Scalar;

#[derive(Parser)]
#[command(
    name = "splatsteg",
    version,
    about = "Hide one splat scene inside another and audit the result"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural scene with ring cameras and reconstruction points
    Synth(SynthArgs),
    /// Jointly train a carrier and its keyed decoder
    Train(TrainArgs),
    /// Render a checkpoint at the poses of a camera manifest
    Render(RenderArgs),
    /// Decode a carrier with a key; optionally render the revealed set
    Reveal(RevealArgs),
    /// PSNR/SSIM table between two image directories
    Eval(EvalArgs),
    /// Distributional security audit of a carrier against a reference
    Audit(AuditArgs),
    /// Train every feature-mask subset and tabulate fidelity against security
    Ablate(AblateArgs),
    /// Decode quality under low-opacity and random pruning
    PruneTest(PruneTestArgs),
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

fn data_err<E: Display>(context: String) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn render_err(context: String) -> impl FnOnce(RenderError) -> CliError {
    // Finiteness violations, wherever they surface, are numerical failures;
    // everything else about a render (shape mismatches, degenerate inputs)
    // is a data problem.
    move |e| match &e {
        RenderError::NonFinite { .. } | RenderError::Gaussian(GaussianError::NonFinite { .. }) => {
            CliError::Numeric(format!("{context}: {e}"))
        }
        _ => CliError::Data(format!("{context}: {e}")),
    }
}

fn decode_err(context: String) -> impl FnOnce(DecodeError) -> CliError {
    move |e| match &e {
        DecodeError::EmptyKey | DecodeError::InvalidKey { .. } => {
            CliError::Usage(format!("{context}: {e}"))
        }
        DecodeError::Gaussian(GaussianError::NonFinite { .. }) => {
            CliError::Numeric(format!("{context}: {e}"))
        }
        _ => CliError::Data(format!("{context}: {e}")),
    }
}

fn metric_err(context: String) -> impl FnOnce(MetricError) -> CliError {
    move |e| match &e {
        MetricError::NotNormalized { .. } | MetricError::NegativeMass => {
            CliError::Numeric(format!("{context}: {e}"))
        }
        MetricError::Render(RenderError::NonFinite { .. }) => {
            CliError::Numeric(format!("{context}: {e}"))
        }
        MetricError::Gaussian(GaussianError::NonFinite { .. }) => {
            CliError::Numeric(format!("{context}: {e}"))
        }
        _ => CliError::Data(format!("{context}: {e}")),
    }
}

fn train_err(context: String) -> impl FnOnce(TrainError) -> CliError {
    move |e| match &e {
        TrainError::NonFiniteLoss { .. } => CliError::Numeric(format!("{context}: {e}")),
        TrainError::Render(RenderError::NonFinite { .. }) => {
            CliError::Numeric(format!("{context}: {e}"))
        }
        _ => CliError::Data(format!("{context}: {e}")),
    }
}

fn parse_res(value: &str) -> Result<(usize, usize), String> {
    let (w, h) = value
        .split_once('x')
        .ok_or_else(|| format!("expected WxH, got {value:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {value:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {value:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("resolution must be positive, got {value:?}"));
    }
    Ok((w, h))
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    configuration: serde_json::Value,
    seed: u64,
    artifacts: Vec<String>,
    version: &'static str,
    duration_seconds: f64,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(data_err(format!("creating {}", dir.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(data_err(format!("writing {}", path.display())))
}

fn write_manifest(
    dir: &Path,
    command: &'static str,
    configuration: serde_json::Value,
    seed: u64,
    artifacts: Vec<String>,
    started: Instant,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command,
        configuration,
        seed,
        artifacts,
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    let path = dir.join("manifest.json");
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_bytes(&path, &bytes)
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainingConfig, CliError> {
    match path {
        None => Ok(TrainingConfig::desk()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(data_err(format!("--config {}", p.display())))?;
            TrainingConfig::from_toml_str(&text)
                .map_err(data_err(format!("--config {}", p.display())))
        }
    }
}

fn read_ply_file(flag: &str, path: &Path) -> Result<GaussianSet<Scalar>, CliError> {
    let bytes = std::fs::read(path).map_err(data_err(format!("{flag} {}", path.display())))?;
    read_ply(&bytes).map_err(data_err(format!("{flag} {}", path.display())))
}

fn mask_label(mask: FeatureMask) -> String {
    let mut parts = Vec::new();
    if mask.opacity {
        parts.push("op");
    }
    if mask.rotation {
        parts.push("ro");
    }
    if mask.scale {
        parts.push("sc");
    }
    if mask.position {
        parts.push("xyz");
    }
    if mask.sh {
        parts.push("sh");
    }
    if parts.is_empty() {
        "none".to_string()
    } else {
        parts.join("+")
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Render(args) => run_render(args),
        Command::Reveal(args) => run_reveal(args),
        Command::Eval(args) => run_eval(args),
        Command::Audit(args) => run_audit(args),
        Command::Ablate(args) => run_ablate(args),
        Command::PruneTest(args) => run_prune_test(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.code());
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output scene directory
    #[arg(long)]
    out: PathBuf,
    /// Scene kind: blobs, rings, or grid
    #[arg(long)]
    scene: String,
    /// Number of ring cameras
    #[arg(long, default_value_t = 24)]
    views: usize,
    /// Resolution as WxH
    #[arg(long, value_parser = parse_res, default_value = "64x64")]
    res: (usize, usize),
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let kind = SynthKind::parse(&args.scene).ok_or_else(|| {
        CliError::Usage(format!(
            "--scene {}: expected blobs, rings, or grid",
            args.scene
        ))
    })?;
    let (w, h) = args.res;
    let (dataset, _) = synth_scene::<Scalar>(kind, args.views, w, h, args.seed)
        .map_err(render_err(format!("synthesizing --scene {}", args.scene)))?;
    write_scene(&args.out, &dataset).map_err(data_err(format!("--out {}", args.out.display())))?;
    let mut artifacts: Vec<String> = (0..dataset.views.len())
        .map(|k| format!("view_{k:03}.png"))
        .collect();
    artifacts.push("cameras.json".to_string());
    artifacts.push("points3d.ply".to_string());
    write_manifest(
        &args.out,
        "synth",
        json!({"scene": args.scene, "views": args.views, "res": [w, h]}),
        args.seed,
        artifacts,
        started,
    )?;
    println!(
        "synth: wrote {} views and {} points to {}",
        dataset.views.len(),
        dataset.sfm_positions.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Training config TOML; desk-scale defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Carrier scene directory
    #[arg(long)]
    cover: PathBuf,
    /// Secret scene directories, comma separated
    #[arg(long, value_delimiter = ',')]
    secret: Vec<PathBuf>,
    /// Decoding keys, one per secret, comma separated (overrides the config)
    #[arg(long, value_delimiter = ',')]
    keys: Vec<String>,
    /// Output directory for cover.ply, decoder.bin, metrics.csv
    #[arg(long)]
    out: PathBuf,
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut config = load_config(&args.config)?;
    if !args.keys.is_empty() {
        config.secret_keys = args.keys.clone();
    }
    for key in &config.secret_keys {
        validate_key(key).map_err(|e| CliError::Usage(format!("--keys {key}: {e}")))?;
    }
    let cover = read_scene::<Scalar>(&args.cover)
        .map_err(data_err(format!("--cover {}", args.cover.display())))?;
    let mut secrets = Vec::new();
    for dir in &args.secret {
        secrets.push(
            read_scene::<Scalar>(dir).map_err(data_err(format!("--secret {}", dir.display())))?,
        );
    }
    let pretrained = vec![None; secrets.len() + 1];
    let dataset = make_combined_dataset(&cover, &secrets, &pretrained)
        .map_err(train_err("combining scenes".to_string()))?;
    let (carrier, decoder, log) =
        train::<Scalar>(&config, &dataset).map_err(train_err("training".to_string()))?;

    ensure_dir(&args.out)?;
    let mut artifacts = Vec::new();
    let ply = write_ply(&carrier).map_err(data_err("serializing carrier".to_string()))?;
    write_bytes(&args.out.join("cover.ply"), &ply)?;
    artifacts.push("cover.ply".to_string());
    if let Some(params) = &decoder {
        write_bytes(&args.out.join("decoder.bin"), &write_decoder(params))?;
        artifacts.push("decoder.bin".to_string());
    }
    write_bytes(&args.out.join("metrics.csv"), log.to_csv().as_bytes())?;
    artifacts.push("metrics.csv".to_string());
    let seed = config.seed;
    let configuration = serde_json::to_value(&config).expect("config serializes");
    write_manifest(&args.out, "train", configuration, seed, artifacts, started)?;
    if let Some(row) = log.rows.last() {
        let secret = row
            .psnr_secrets
            .first()
            .map(|p| format!(", secret psnr {p:.3}"))
            .unwrap_or_default();
        println!(
            "train: {} gaussians, cover psnr {:.3}{secret}",
            carrier.len(),
            row.psnr_cover
        );
    } else {
        println!("train: {} gaussians (no metric rows)", carrier.len());
    }
    Ok(())
}

#[derive(Args)]
struct RenderArgs {
    /// Gaussian checkpoint
    #[arg(long)]
    ply: PathBuf,
    /// Camera manifest (a scene's cameras.json)
    #[arg(long)]
    cameras: PathBuf,
    /// Output directory for render_XXX.png
    #[arg(long)]
    out: PathBuf,
}

fn run_render(args: RenderArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let set = read_ply_file("--ply", &args.ply)?;
    let cameras = read_cameras::<Scalar>(&args.cameras)
        .map_err(data_err(format!("--cameras {}", args.cameras.display())))?;
    if cameras.is_empty() {
        return Err(CliError::Data(format!(
            "--cameras {}: no cameras listed",
            args.cameras.display()
        )));
    }
    ensure_dir(&args.out)?;
    let options = RenderOptions::default();
    let mut artifacts = Vec::new();
    // Canonical scene naming so `eval` can pair the renders with any scene
    // directory's ground truth.
    for (k, camera) in cameras.iter().enumerate() {
        let (image, _) = render(&set, camera, &options).map_err(render_err(format!(
            "--ply {}: rendering view {k}",
            args.ply.display()
        )))?;
        let name = format!("view_{k:03}.png");
        write_png(&args.out.join(&name), &image).map_err(data_err(format!("writing {name}")))?;
        artifacts.push(name);
    }
    write_manifest(
        &args.out,
        "render",
        json!({"ply": args.ply.display().to_string(), "cameras": args.cameras.display().to_string()}),
        0,
        artifacts,
        started,
    )?;
    println!(
        "render: {} views from {} gaussians to {}",
        cameras.len(),
        set.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct RevealArgs {
    /// Carrier checkpoint
    #[arg(long)]
    ply: PathBuf,
    /// Decoder checkpoint
    #[arg(long)]
    decoder: PathBuf,
    /// Decoding key
    #[arg(long)]
    key: String,
    /// Output directory for secret.ply and optional renders
    #[arg(long)]
    out: PathBuf,
    /// Camera manifest; when given the revealed set is rendered as PNGs
    #[arg(long)]
    cameras: Option<PathBuf>,
}

fn run_reveal(args: RevealArgs) -> Result<(), CliError> {
    let started = Instant::now();
    validate_key(&args.key).map_err(|e| CliError::Usage(format!("--key: {e}")))?;
    let carrier = read_ply_file("--ply", &args.ply)?;
    let bytes = std::fs::read(&args.decoder)
        .map_err(data_err(format!("--decoder {}", args.decoder.display())))?;
    let params = read_decoder::<Scalar>(&bytes)
        .map_err(data_err(format!("--decoder {}", args.decoder.display())))?;
    let key = embed_key::<Scalar>(&args.key, params.config.key_dim)
        .map_err(decode_err("--key".to_string()))?;
    let revealed =
        decode(&carrier, &key, params.mask, &params).map_err(decode_err("decoding".to_string()))?;

    ensure_dir(&args.out)?;
    let mut artifacts = Vec::new();
    let ply = write_ply(&revealed).map_err(data_err("serializing revealed set".to_string()))?;
    write_bytes(&args.out.join("secret.ply"), &ply)?;
    artifacts.push("secret.ply".to_string());
    if let Some(cameras_path) = &args.cameras {
        let cameras = read_cameras::<Scalar>(cameras_path)
            .map_err(data_err(format!("--cameras {}", cameras_path.display())))?;
        let options = RenderOptions::default();
        for (k, camera) in cameras.iter().enumerate() {
            let (image, _) = render(&revealed, camera, &options)
                .map_err(render_err(format!("rendering view {k}")))?;
            let name = format!("view_{k:03}.png");
            write_png(&args.out.join(&name), &image)
                .map_err(data_err(format!("writing {name}")))?;
            artifacts.push(name);
        }
    }
    write_manifest(
        &args.out,
        "reveal",
        json!({"ply": args.ply.display().to_string(), "decoder": args.decoder.display().to_string()}),
        0,
        artifacts,
        started,
    )?;
    println!(
        "reveal: decoded {} gaussians to {}",
        revealed.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted images
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth images with matching filenames
    #[arg(long)]
    gt: PathBuf,
    /// Output directory for eval.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn list_pngs(flag: &str, dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(data_err(format!("{flag} {}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(data_err(format!("{flag} {}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if name.ends_with(".png") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let names = list_pngs("--pred", &args.pred)?;
    if names.is_empty() {
        return Err(CliError::Data(format!(
            "--pred {}: no png files",
            args.pred.display()
        )));
    }
    let mut csv = String::from("file,psnr,ssim\n");
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for name in &names {
        let pred = read_png::<Scalar>(&args.pred.join(name))
            .map_err(data_err(format!("--pred {name}")))?;
        let gt_path = args.gt.join(name);
        if !gt_path.is_file() {
            return Err(CliError::Data(format!(
                "--gt {}: missing counterpart for {name}",
                args.gt.display()
            )));
        }
        let gt = read_png::<Scalar>(&gt_path).map_err(data_err(format!("--gt {name}")))?;
        let p = psnr(&pred, &gt).map_err(metric_err(format!("psnr of {name}")))?;
        let s = ssim(&pred, &gt)
            .map_err(metric_err(format!("ssim of {name}")))?
            .as_f64();
        psnr_sum += p;
        ssim_sum += s;
        csv.push_str(&format!("{name},{p},{s}\n"));
    }
    let count = names.len() as f64;
    csv.push_str(&format!("mean,{},{}\n", psnr_sum / count, ssim_sum / count));
    ensure_dir(&args.out)?;
    write_bytes(&args.out.join("eval.csv"), csv.as_bytes())?;
    write_manifest(
        &args.out,
        "eval",
        json!({"pred": args.pred.display().to_string(), "gt": args.gt.display().to_string()}),
        0,
        vec!["eval.csv".to_string()],
        started,
    )?;
    println!(
        "eval: {} pairs, mean psnr {:.3}, mean ssim {:.4}",
        names.len(),
        psnr_sum / count,
        ssim_sum / count
    );
    Ok(())
}

#[derive(Args)]
struct AuditArgs {
    /// Reference checkpoint (a plain-trained carrier)
    #[arg(long = "gt-ply")]
    gt_ply: PathBuf,
    /// Checkpoint under audit
    #[arg(long = "stego-ply")]
    stego_ply: PathBuf,
    /// Entropic regularization strength
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    /// Histogram bins per channel
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Output directory for audit.json and suspicion maps
    #[arg(long)]
    out: PathBuf,
    /// Ring cameras used for the suspicion maps and the fidelity proxy
    #[arg(long, default_value_t = 4)]
    views: usize,
    /// Suspicion-map resolution as WxH
    #[arg(long, value_parser = parse_res, default_value = "128x128")]
    res: (usize, usize),
    /// Low-opacity threshold for the suspicion maps
    #[arg(long, default_value_t = DEFAULT_LOW_OPACITY_TAU)]
    tau: f64,
    /// Externally measured secret fidelity folded into the composite score
    #[arg(long = "psnr-secret")]
    psnr_secret: Option<f64>,
}

#[derive(Serialize)]
struct AuditReport {
    epsilon: f64,
    bins: usize,
    groups: Vec<GroupDivergence>,
    total_d: f64,
    solver_iterations: usize,
    /// Mean PSNR between reference and audited renders, capped at 99 dB.
    psnr_cover: f64,
    psnr_secret: Option<f64>,
    composite_score: f64,
    suspicion_maps: Vec<String>,
}

fn run_audit(args: AuditArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if !(args.eps > 0.0) {
        return Err(CliError::Usage(format!(
            "--eps {}: must be positive",
            args.eps
        )));
    }
    if args.bins < 2 {
        return Err(CliError::Usage(format!(
            "--bins {}: need at least 2",
            args.bins
        )));
    }
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(CliError::Usage(format!(
            "--tau {}: must lie in (0, 1)",
            args.tau
        )));
    }
    if args.views == 0 {
        return Err(CliError::Usage("--views 0: need at least one".to_string()));
    }
    let gt = read_ply_file("--gt-ply", &args.gt_ply)?;
    let stego = read_ply_file("--stego-ply", &args.stego_ply)?;
    let report = sinkhorn_3d(&gt, &stego, args.eps, args.bins)
        .map_err(metric_err("divergence".to_string()))?;

    let (w, h) = args.res;
    let cameras = ring_cameras::<Scalar>(args.views, w, h);
    let options = RenderOptions::default();
    let mut proxy_sum = 0.0;
    for camera in &cameras {
        let (a, _) =
            render(&gt, camera, &options).map_err(render_err("rendering --gt-ply".to_string()))?;
        let (b, _) = render(&stego, camera, &options)
            .map_err(render_err("rendering --stego-ply".to_string()))?;
        // Identical checkpoints give infinite PSNR; cap for a finite report.
        proxy_sum += psnr(&a, &b)
            .map_err(metric_err("fidelity proxy".to_string()))?
            .min(99.0);
    }
    let psnr_cover = proxy_sum / cameras.len() as f64;
    let composite = (psnr_cover + args.psnr_secret.unwrap_or(0.0)) * (1.0 - report.total);

    ensure_dir(&args.out)?;
    let mut maps = Vec::new();
    for (k, camera) in cameras.iter().enumerate() {
        for (tag, set) in [("gt", &gt), ("stego", &stego)] {
            let image = low_opacity_render(set, camera, args.tau)
                .map_err(metric_err(format!("suspicion map {tag} view {k}")))?;
            let name = format!("lowop_{tag}_{k:03}.png");
            write_png(&args.out.join(&name), &image)
                .map_err(data_err(format!("writing {name}")))?;
            maps.push(name);
        }
    }

    let audit = AuditReport {
        epsilon: report.epsilon,
        bins: report.bins,
        groups: report.groups,
        total_d: report.total,
        solver_iterations: report.iterations,
        psnr_cover,
        psnr_secret: args.psnr_secret,
        composite_score: composite,
        suspicion_maps: maps.clone(),
    };
    let json_bytes = serde_json::to_vec_pretty(&audit).expect("report serializes");
    write_bytes(&args.out.join("audit.json"), &json_bytes)?;
    let mut artifacts = vec!["audit.json".to_string()];
    artifacts.extend(maps);
    write_manifest(
        &args.out,
        "audit",
        json!({
            "gt_ply": args.gt_ply.display().to_string(),
            "stego_ply": args.stego_ply.display().to_string(),
            "eps": args.eps,
            "bins": args.bins,
            "tau": args.tau,
        }),
        0,
        artifacts,
        started,
    )?;
    println!(
        "audit: total d {:.6}, composite score {:.3}",
        audit.total_d, audit.composite_score
    );
    Ok(())
}

#[derive(Args)]
struct AblateArgs {
    /// Training config TOML; desk-scale defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Carrier scene directory
    #[arg(long)]
    cover: PathBuf,
    /// Secret scene directory
    #[arg(long)]
    secret: PathBuf,
    /// Decoding key for the swept secret
    #[arg(long, value_delimiter = ',')]
    keys: Vec<String>,
    /// Output directory for ablate.csv
    #[arg(long)]
    out: PathBuf,
    /// Entropic regularization for the security column
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    /// Histogram bins for the security column
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

const MASK_OFF: FeatureMask = FeatureMask {
    opacity: false,
    rotation: false,
    scale: false,
    position: false,
    sh: false,
};

/// Every subset of {op, ro, sc, xyz} plus the sh-bearing combinations worth
/// ranking against the geometric ones.
fn ablate_masks() -> Vec<FeatureMask> {
    let mut masks = Vec::new();
    for bits in 0..16u32 {
        masks.push(FeatureMask {
            opacity: bits & 1 != 0,
            rotation: bits & 2 != 0,
            scale: bits & 4 != 0,
            position: bits & 8 != 0,
            sh: false,
        });
    }
    masks.push(FeatureMask {
        sh: true,
        ..MASK_OFF
    });
    masks.push(FeatureMask {
        opacity: true,
        sh: true,
        ..MASK_OFF
    });
    masks.push(FeatureMask {
        opacity: true,
        rotation: true,
        sh: true,
        ..MASK_OFF
    });
    masks.push(FeatureMask {
        opacity: true,
        rotation: true,
        position: true,
        sh: true,
        ..MASK_OFF
    });
    masks.push(FeatureMask {
        opacity: true,
        rotation: true,
        scale: true,
        position: true,
        sh: true,
    });
    masks
}

struct AblateRow {
    label: String,
    psnr_cover: f64,
    psnr_secret: f64,
    divergence: f64,
    composite: f64,
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SPLATSTEG_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            CliError::Usage(format!(
                "SPLATSTEG_THREADS={v}: expected a positive integer"
            ))
        })?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| CliError::Data(format!("building thread pool: {e}")))
}

fn run_ablate(args: AblateArgs) -> Result<(), CliError> {
    use rayon::prelude::*;

    let started = Instant::now();
    let mut config = load_config(&args.config)?;
    if !args.keys.is_empty() {
        config.secret_keys = args.keys.clone();
    }
    if config.secret_keys.len() != 1 {
        return Err(CliError::Usage(format!(
            "--keys: the sweep trains one secret, got {} keys",
            config.secret_keys.len()
        )));
    }
    validate_key(&config.secret_keys[0])
        .map_err(|e| CliError::Usage(format!("--keys {}: {e}", config.secret_keys[0])))?;
    let cover = read_scene::<Scalar>(&args.cover)
        .map_err(data_err(format!("--cover {}", args.cover.display())))?;
    let secret = read_scene::<Scalar>(&args.secret)
        .map_err(data_err(format!("--secret {}", args.secret.display())))?;

    let plain_data = make_combined_dataset(&cover, &[], &[None])
        .map_err(train_err("combining scenes".to_string()))?;
    let joint_data = make_combined_dataset(&cover, &[secret], &[None, None])
        .map_err(train_err("combining scenes".to_string()))?;

    // The security column compares each stego carrier against a plain run of
    // the same budget, which stands in for an uncompromised reconstruction.
    let mut base_cfg = config.clone();
    base_cfg.secret_keys.clear();
    base_cfg.beta_secret.clear();
    let (baseline, _, _) =
        train::<Scalar>(&base_cfg, &plain_data).map_err(train_err("baseline run".to_string()))?;

    let masks = ablate_masks();
    let pool = thread_pool()?;
    let rows: Result<Vec<AblateRow>, CliError> = pool.install(|| {
        masks
            .par_iter()
            .map(|mask| {
                let label = mask_label(*mask);
                let mut run_cfg = config.clone();
                run_cfg.mask = *mask;
                let (stego, _, log) = train::<Scalar>(&run_cfg, &joint_data)
                    .map_err(train_err(format!("mask {label}")))?;
                let row = log
                    .rows
                    .last()
                    .ok_or_else(|| CliError::Data(format!("mask {label}: no metric rows")))?;
                let report = sinkhorn_3d(&baseline, &stego, args.eps, args.bins)
                    .map_err(metric_err(format!("mask {label} divergence")))?;
                let psnr_cover = row.psnr_cover;
                let psnr_secret = row.psnr_secrets[0];
                Ok(AblateRow {
                    label,
                    psnr_cover,
                    psnr_secret,
                    divergence: report.total,
                    composite: (psnr_cover + psnr_secret) * (1.0 - report.total),
                })
            })
            .collect()
    });
    let mut rows = rows?;
    rows.sort_by(|a, b| {
        b.composite
            .partial_cmp(&a.composite)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });

    let mut csv = String::from("mask,psnr_cover,psnr_secret,d,composite\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.label, row.psnr_cover, row.psnr_secret, row.divergence, row.composite
        ));
    }
    ensure_dir(&args.out)?;
    write_bytes(&args.out.join("ablate.csv"), csv.as_bytes())?;
    let configuration = serde_json::to_value(&config).expect("config serializes");
    write_manifest(
        &args.out,
        "ablate",
        configuration,
        config.seed,
        vec!["ablate.csv".to_string()],
        started,
    )?;
    let best = &rows[0];
    println!(
        "ablate: {} masks, best {} with composite {:.3}",
        rows.len(),
        best.label,
        best.composite
    );
    Ok(())
}

#[derive(Args)]
struct PruneTestArgs {
    /// Carrier checkpoint
    #[arg(long)]
    ply: PathBuf,
    /// Decoder checkpoint
    #[arg(long)]
    decoder: PathBuf,
    /// Decoding key
    #[arg(long)]
    key: String,
    /// Carrier scene directory (ground truth for carrier fidelity)
    #[arg(long)]
    cover: PathBuf,
    /// Secret scene directory (ground truth for secret fidelity)
    #[arg(long)]
    secret: PathBuf,
    /// Output directory for prune.json
    #[arg(long)]
    out: PathBuf,
    /// Pruning ratios, comma separated
    #[arg(long, value_delimiter = ',')]
    ratios: Vec<f64>,
    /// Seed for the random-pruning arm
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_prune_test(args: PruneTestArgs) -> Result<(), CliError> {
    let started = Instant::now();
    validate_key(&args.key).map_err(|e| CliError::Usage(format!("--key: {e}")))?;
    let ratios = if args.ratios.is_empty() {
        DEFAULT_PRUNE_RATIOS.to_vec()
    } else {
        args.ratios.clone()
    };
    for r in &ratios {
        if !(0.0..1.0).contains(r) {
            return Err(CliError::Usage(format!("--ratios {r}: must lie in [0, 1)")));
        }
    }
    let carrier = read_ply_file("--ply", &args.ply)?;
    let bytes = std::fs::read(&args.decoder)
        .map_err(data_err(format!("--decoder {}", args.decoder.display())))?;
    let params = read_decoder::<Scalar>(&bytes)
        .map_err(data_err(format!("--decoder {}", args.decoder.display())))?;
    let key = embed_key::<Scalar>(&args.key, params.config.key_dim)
        .map_err(decode_err("--key".to_string()))?;
    let cover = read_scene::<Scalar>(&args.cover)
        .map_err(data_err(format!("--cover {}", args.cover.display())))?;
    let secret = read_scene::<Scalar>(&args.secret)
        .map_err(data_err(format!("--secret {}", args.secret.display())))?;

    let report = pruning_robustness(
        &carrier,
        &params,
        &key,
        &cover.views,
        &secret.views,
        &ratios,
        args.seed,
        &RenderOptions::default(),
    )
    .map_err(metric_err("pruning probe".to_string()))?;

    ensure_dir(&args.out)?;
    let json_bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_bytes(&args.out.join("prune.json"), &json_bytes)?;
    write_manifest(
        &args.out,
        "prune-test",
        json!({
            "ply": args.ply.display().to_string(),
            "decoder": args.decoder.display().to_string(),
            "ratios": ratios,
        }),
        args.seed,
        vec!["prune.json".to_string()],
        started,
    )?;
    println!(
        "prune-test: {} entries to {}",
        ratios.len() * 2,
        args.out.display()
    );
    Ok(())
}
