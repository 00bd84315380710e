//! `lsfa`: synthetic data generation, encoding, training, detection,
//! evaluation, ablations, profiling, and feature visualization over the
//! compressed-stream detection pipeline.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lsfa_core::compressed_stream::{
    encode_stream, load_stream, save_stream, CodecParams, Frame,
};
use lsfa_core::detection::{
    evaluate_map, label_motion_speed, read_detections, read_ground_truth, write_detections,
    write_ground_truth, EvalReport,
};
use lsfa_core::networks::{extract_large, load_weights, save_weights};
use lsfa_core::pipeline::{
    default_ablation_grid, export_feature_viz, format_ablation_table, generate_synthetic_dataset,
    profile, run_ablation, run_inference, train, PipelineConfig, SyntheticClip,
    SyntheticDatasetSpec,
};

#[derive(Parser)]
#[command(name = "lsfa", version, about = "Compressed-video object detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset: one compressed container plus a
    /// ground-truth text file per clip.
    Gen(GenArgs),
    /// Encode a directory of PNG frames into a compressed container.
    Encode(EncodeArgs),
    /// Train weights on a generated dataset directory.
    Train(TrainArgs),
    /// Run detection over a container and write a detections text file.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Train and evaluate every term configuration.
    Ablate(AblateArgs),
    /// Sweep GOP lengths and report per-frame timing.
    Profile(ProfileArgs),
    /// Export feature-map channels as grayscale PNGs.
    Viz(VizArgs),
}

/// Configuration file plus per-field command-line overrides.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML configuration file; omitted fields use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gop_length: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    score_thresh: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    eval_iou: Option<f64>,
    #[arg(long)]
    speed_window: Option<usize>,
    #[arg(long)]
    frame_baseline: Option<bool>,
    #[arg(long)]
    use_motion_vectors: Option<bool>,
    #[arg(long)]
    use_residual_term: Option<bool>,
    #[arg(long)]
    use_tiny_term: Option<bool>,
    #[arg(long)]
    use_lfa: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr_decay_step: Option<usize>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    box_loss_weight: Option<f64>,
    #[arg(long)]
    cls_pos_weight: Option<f64>,
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long)]
    weight_seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("read config {}", path.display()))?;
                PipelineConfig::from_toml_str(&text)?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! over {
            ($($field:ident => $slot:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $slot = v; })*
            };
        }
        over! {
            gop_length => cfg.gop_length,
            num_classes => cfg.num_classes,
            score_thresh => cfg.score_thresh,
            nms_iou => cfg.nms_iou,
            eval_iou => cfg.eval_iou,
            speed_window => cfg.speed_window,
            frame_baseline => cfg.frame_baseline,
            use_motion_vectors => cfg.flags.use_motion_vectors,
            use_residual_term => cfg.flags.use_residual_term,
            use_tiny_term => cfg.flags.use_tiny_term,
            use_lfa => cfg.flags.use_lfa,
            learning_rate => cfg.train.learning_rate,
            momentum => cfg.train.momentum,
            steps => cfg.train.steps,
            lr_decay_step => cfg.train.lr_decay_step,
            lr_decay_factor => cfg.train.lr_decay_factor,
            batch_size => cfg.train.batch_size,
            box_loss_weight => cfg.train.box_loss_weight,
            cls_pos_weight => cfg.train.cls_pos_weight,
            huber_delta => cfg.train.huber_delta,
            weight_seed => cfg.weight_seed,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset seed (mandatory; same seed, same bytes).
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    clips: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    min_objects: usize,
    #[arg(long, default_value_t = 2)]
    max_objects: usize,
    #[arg(long, default_value_t = 10.0)]
    min_radius: f64,
    #[arg(long, default_value_t = 18.0)]
    max_radius: f64,
    #[arg(long, default_value_t = 0.0)]
    min_speed: f64,
    #[arg(long, default_value_t = 2.0)]
    max_speed: f64,
    #[arg(long, default_value_t = 0.25)]
    jitter: f64,
    #[arg(long, default_value_t = 18.0)]
    noise: f64,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory of equally sized PNG frames, consumed in name order.
    #[arg(long)]
    frames_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training seed (mandatory); also seeds weight initialization unless
    /// --weight-seed is given.
    #[arg(long)]
    seed: u64,
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Optional TOML timing report destination.
    #[arg(long)]
    timing_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Optional report destination (structured text); stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train_dir: PathBuf,
    #[arg(long)]
    val_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Content source; decoded frames feed every sweep entry.
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Comma-separated GOP lengths.
    #[arg(long, default_value = "2,4,8,12,24")]
    sweep: String,
    #[arg(long, default_value_t = 2)]
    repeats: usize,
}

#[derive(Args)]
struct VizArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Frame index whose large-extractor feature is exported.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Comma-separated channel indices.
    #[arg(long, default_value = "0,1,2,3")]
    channels: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "feature")]
    prefix: String,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Encode(args) => cmd_encode(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Detect(args) => cmd_detect(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Ablate(args) => cmd_ablate(args),
        Cmd::Profile(args) => cmd_profile(args),
        Cmd::Viz(args) => cmd_viz(args),
    }
}

fn clip_paths(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut streams: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("read dir {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "lsfa"))
        .collect();
    streams.sort();
    if streams.is_empty() {
        bail!("no .lsfa containers under {}", dir.display());
    }
    streams
        .into_iter()
        .map(|s| {
            let gt = s.with_extension("gt.txt");
            if !gt.exists() {
                bail!("missing ground truth {}", gt.display());
            }
            Ok((s, gt))
        })
        .collect()
}

/// Load a generated dataset directory back into clips (containers decode
/// losslessly, so decoded frames equal the originals).
fn load_dataset(dir: &Path) -> Result<Vec<SyntheticClip>> {
    clip_paths(dir)?
        .into_iter()
        .map(|(stream_path, gt_path)| {
            let stream = load_stream(&stream_path)?;
            let frames = stream.decode_all()?;
            let mut gts = read_ground_truth(BufReader::new(File::open(&gt_path)?))?;
            gts.resize_with(frames.len(), Vec::new);
            Ok(SyntheticClip {
                frames,
                gts,
                track_speeds: Vec::new(),
            })
        })
        .collect()
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let spec = SyntheticDatasetSpec {
        clip_count: args.clips,
        frames_per_clip: args.frames,
        height: args.height,
        width: args.width,
        min_objects: args.min_objects,
        max_objects: args.max_objects,
        min_radius: args.min_radius,
        max_radius: args.max_radius,
        min_speed: args.min_speed,
        max_speed: args.max_speed,
        jitter: args.jitter,
        noise: args.noise,
        seed: args.seed,
    };
    let clips = generate_synthetic_dataset(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let params = CodecParams {
        gop_length: cfg.gop_length,
        ..CodecParams::default()
    };
    for (i, clip) in clips.iter().enumerate() {
        let n = clip.frames.len() - clip.frames.len() % cfg.gop_length;
        if n == 0 {
            bail!("clips of {} frames are shorter than one GOP", clip.frames.len());
        }
        let stream = encode_stream(&clip.frames[..n], &params)?;
        let stream_path = args.out_dir.join(format!("clip_{i:04}.lsfa"));
        save_stream(&stream_path, &stream)?;
        let gt_path = args.out_dir.join(format!("clip_{i:04}.gt.txt"));
        let mut gt_file = BufWriter::new(File::create(&gt_path)?);
        write_ground_truth(&mut gt_file, &clip.gts[..n])?;
        gt_file.flush()?;
    }
    println!(
        "wrote {} clips ({} frames each) to {}",
        clips.len(),
        args.frames,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_encode(args: EncodeArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.frames_dir)
        .with_context(|| format!("read dir {}", args.frames_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .png frames under {}", args.frames_dir.display());
    }
    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        let img = image::open(path)
            .with_context(|| format!("open {}", path.display()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut data = vec![0u8; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] = px.0[c];
            }
        }
        frames.push(Frame::new(h, w, data)?);
    }
    let n = frames.len() - frames.len() % cfg.gop_length;
    if n == 0 {
        bail!(
            "{} frames cannot fill a GOP of length {}",
            frames.len(),
            cfg.gop_length
        );
    }
    let params = CodecParams {
        gop_length: cfg.gop_length,
        ..CodecParams::default()
    };
    let stream = encode_stream(&frames[..n], &params)?;
    save_stream(&args.out, &stream)?;
    println!("encoded {n} frames to {}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    cfg.train.seed = args.seed;
    if args.config.weight_seed.is_none() {
        cfg.weight_seed = args.seed;
    }
    let clips = load_dataset(&args.data_dir)?;
    let weights = train(&clips, &cfg)?;
    save_weights(&args.out, &weights)?;
    println!(
        "trained {} parameters over {} clips to {}",
        weights.param_count(),
        clips.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let stream = load_stream(&args.stream)?;
    let weights = load_weights(&args.weights)?;
    let (dets, timing) = run_inference(&stream, &weights, &cfg)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    write_detections(&mut out, &dets)?;
    out.flush()?;
    if let Some(path) = &args.timing_out {
        std::fs::write(path, toml::to_string_pretty(&timing)?)?;
    }
    println!(
        "{} detections over {} frames -> {}",
        dets.iter().map(|f| f.len()).sum::<usize>(),
        dets.len(),
        args.out.display()
    );
    Ok(())
}

fn format_eval_report(report: &EvalReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"));
    let mut out = String::new();
    out.push_str(&format!("map = {}\n", fmt(report.map)));
    for (name, v) in &report.map_by_speed {
        out.push_str(&format!(
            "map_{name} = {} (gt {})\n",
            fmt(*v),
            report.gt_by_speed[name]
        ));
    }
    out.push_str(&format!(
        "total_gt = {}\ntotal_dets = {}\n",
        report.total_gt, report.total_dets
    ));
    for c in &report.per_class {
        out.push_str(&format!(
            "class_{} = {} (gt {}, dets {})\n",
            c.class_id,
            fmt(c.ap),
            c.gt_count,
            c.det_count
        ));
    }
    out
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let mut dets = read_detections(BufReader::new(File::open(&args.dets)?))?;
    let gts = read_ground_truth(BufReader::new(File::open(&args.gt)?))?;
    let labeled = label_motion_speed(&gts, cfg.speed_window);
    dets.resize_with(labeled.len(), Vec::new);
    let report = evaluate_map(&dets, &labeled, cfg.eval_iou)?;
    let text = format_eval_report(&report);
    match &args.out {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let train_clips = load_dataset(&args.train_dir)?;
    let val_clips = load_dataset(&args.val_dir)?;
    let rows = run_ablation(&train_clips, &val_clips, &cfg, &default_ablation_grid())?;
    let table = format_ablation_table(&rows);
    match &args.out {
        Some(path) => std::fs::write(path, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_profile(args: ProfileArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let stream = load_stream(&args.stream)?;
    let frames = stream.decode_all()?;
    let weights = load_weights(&args.weights)?;
    let sweep: Vec<usize> = args
        .sweep
        .split(',')
        .map(|s| s.trim().parse().context("sweep entries must be integers"))
        .collect::<Result<_>>()?;
    let report = profile(&frames, &weights, &cfg, &sweep, args.repeats)?;
    print!("{}", report.format_text());
    Ok(())
}

fn cmd_viz(args: VizArgs) -> Result<()> {
    let _ = args.config.resolve()?;
    let stream = load_stream(&args.stream)?;
    let frames = stream.decode_all()?;
    let frame = frames
        .get(args.frame)
        .with_context(|| format!("frame {} of {}", args.frame, frames.len()))?;
    let weights = load_weights(&args.weights)?;
    let feature = extract_large(frame, &weights)?;
    let channels: Vec<usize> = args
        .channels
        .split(',')
        .map(|s| s.trim().parse().context("channel entries must be integers"))
        .collect::<Result<_>>()?;
    let paths = export_feature_viz(&feature, &channels, &args.out_dir, &args.prefix)?;
    println!("wrote {} images to {}", paths.len(), args.out_dir.display());
    Ok(())
}
