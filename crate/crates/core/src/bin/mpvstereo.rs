use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use mpvstereo::imgio::{load_image, save_image, StereoPair};
use mpvstereo::pipeline::eval::{DetectionCounts, EvalReport};
use mpvstereo::pipeline::frame::{bench, Pipeline};
use mpvstereo::pipeline::io::{
    disparity_to_image, draw_boxes, list_images, load_disparity, load_images, save_pfm,
};
use mpvstereo::pipeline::synth::{generate_corpus, generate_synthetic_scene, CorpusSpec, SceneSpec};
use mpvstereo::pipeline::PipelineConfig;
use mpvstereo::recog::{cascade_classify, train_cascade, CascadeModel, CascadeParams};
use mpvstereo::{Error, Result};

#[derive(Parser)]
#[command(name = "mpvstereo", version, about = "Stereo disparity, road and obstacle detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Maximum disparity; overrides the config.
    #[arg(long)]
    dmax: Option<u32>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(d) = self.dmax {
            cfg.d_max = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
}

impl PairArgs {
    fn load(&self) -> Result<StereoPair> {
        StereoPair::new(load_image(&self.left)?, load_image(&self.right)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compute a disparity map for one pair.
    Match {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        common: Common,
        /// Scaled 8-bit disparity image (.pgm or .png).
        #[arg(short, long)]
        output: PathBuf,
        /// Exact disparity as PFM.
        #[arg(long)]
        pfm: Option<PathBuf>,
    },
    /// Run the full frame pipeline and write a JSON detection record.
    Detect {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        common: Common,
        /// Cascade model; overrides the config.
        #[arg(long)]
        model: Option<PathBuf>,
        /// JSON output; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Left image with ROIs and detections drawn.
        #[arg(long)]
        annotated: Option<PathBuf>,
        /// Also write the disparity map as PFM.
        #[arg(long)]
        pfm: Option<PathBuf>,
        /// Leave stage timings out of the record.
        #[arg(long)]
        no_timings: bool,
    },
    /// Train a cascade from positive windows and negative images.
    Train {
        #[arg(long)]
        positives: PathBuf,
        #[arg(long)]
        negatives: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = CascadeParams::default().stages)]
        stages: usize,
        #[arg(long, default_value_t = CascadeParams::default().max_depth)]
        depth: usize,
        #[arg(long, default_value_t = CascadeParams::default().seed)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Disparity error rates and, optionally, detection accuracy.
    Eval {
        /// Predicted disparities (.pfm or 16-bit .png), matched to the
        /// ground truth by file stem.
        #[arg(long, requires = "gt", conflicts_with = "frames")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Frame directory to run the pipeline on; `NNN_gt.pfm` files are
        /// used as ground truth.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        /// Labeled windows for detection accuracy (needs --model).
        #[arg(long, requires = "model")]
        positives: Option<PathBuf>,
        #[arg(long, requires = "model")]
        negatives: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// JSON output; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate synthetic scenes or a recognition corpus.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of scenes.
        #[arg(long, default_value_t = 1)]
        frames: usize,
        /// Wall disparity for `wall` scenes.
        #[arg(long, default_value_t = 8)]
        disparity: u32,
        #[arg(long, default_value_t = 200)]
        positives: usize,
        #[arg(long, default_value_t = 400)]
        negatives: usize,
    },
    /// Time the pipeline on one pair.
    Bench {
        /// Pair to time; the synthetic road scene when absent.
        #[arg(long, requires = "right")]
        left: Option<PathBuf>,
        #[arg(long)]
        right: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Road with one obstacle 10 m ahead.
    Road,
    /// Fronto-parallel textured wall.
    Wall,
    /// Positive windows and negative images for training.
    Corpus,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serde(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn pipeline_with_model(mut cfg: PipelineConfig, model: Option<PathBuf>) -> Result<Pipeline> {
    if model.is_some() {
        cfg.paths.model = model;
    }
    Pipeline::from_config(cfg)
}

fn frame_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
    stem.strip_suffix("_left").unwrap_or(stem).to_string()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Match {
            pair,
            common,
            output,
            pfm,
        } => {
            let cfg = common.load()?;
            let p = Pipeline::new(cfg, None)?;
            let matched = p.match_stage(0, &pair.load()?)?;
            save_image(&disparity_to_image(&matched.disparity)?, &output)?;
            if let Some(pfm) = pfm {
                save_pfm(&matched.disparity, pfm)?;
            }
            info!("matching took {:.1} ms", matched.timings.matching_ms);
        }
        Command::Detect {
            pair,
            common,
            model,
            output,
            annotated,
            pfm,
            no_timings,
        } => {
            let cfg = common.load()?;
            let p = pipeline_with_model(cfg, model)?;
            let stereo = pair.load()?;
            let result = p.run_frame(&stereo)?;
            let record = result.record(frame_name(&pair.left), p.config(), !no_timings);
            write_output(output.as_deref(), &to_json(&record)?)?;
            if let Some(path) = annotated {
                let rois: Vec<_> = result.rois.iter().map(|r| (r.x, r.y, r.w, r.h)).collect();
                let dets: Vec<_> = result.detections.iter().map(|d| (d.x, d.y, d.w, d.h)).collect();
                let img = draw_boxes(stereo.left(), &rois, 0, 1);
                save_image(&draw_boxes(&img, &dets, 255, 2), path)?;
            }
            if let Some(pfm) = pfm {
                save_pfm(&result.disparity, pfm)?;
            }
        }
        Command::Train {
            positives,
            negatives,
            output,
            stages,
            depth,
            seed,
            threads,
        } => {
            let params = CascadeParams {
                stages,
                max_depth: depth,
                seed,
                ..CascadeParams::default()
            };
            let pos = load_images(&positives)?;
            let neg = load_images(&negatives)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            let report = pool.install(|| train_cascade(&pos, &neg, &params))?;
            for (k, s) in report.model.stages.iter().enumerate() {
                eprintln!(
                    "stage {k}: {} learners, hit {:.4}, false alarm {:.4}, {} negatives",
                    s.learners.len(),
                    s.hit_rate,
                    s.false_alarm,
                    s.negatives
                );
            }
            if let Some(k) = report.exhausted_at_stage {
                warn!("negative mining exhausted at stage {k}; model has {} stages", report.model.stages.len());
            }
            report.model.save(&output)?;
        }
        Command::Eval {
            pred,
            gt,
            frames,
            tau,
            positives,
            negatives,
            model,
            common,
            output,
        } => {
            let cfg = common.load()?;
            let tau = tau.unwrap_or(cfg.eval_tau);
            let mut report = match (pred, gt, frames) {
                (Some(pred), Some(gt), None) => eval_dirs(&pred, &gt, tau, cfg.d_max)?,
                (None, None, Some(frames)) => {
                    let mut cfg = cfg;
                    cfg.eval_tau = tau;
                    let p = pipeline_with_model(cfg, model.clone())?;
                    let seq = p.run_sequence(&frames)?;
                    for s in &seq.skipped {
                        warn!("skipped frame {}: {}", s.name, s.reason);
                    }
                    seq.report
                }
                (None, None, None) if positives.is_some() || negatives.is_some() => EvalReport::new(tau),
                _ => {
                    return Err(Error::InvalidArgument(
                        "give --pred with --gt, or --frames, or labeled sets".into(),
                    ))
                }
            };
            if let Some(model_path) = &model {
                if positives.is_some() || negatives.is_some() {
                    let model = CascadeModel::load(model_path)?;
                    report.set_detection(eval_labeled(&model, positives.as_deref(), negatives.as_deref())?);
                }
            }
            write_output(output.as_deref(), &to_json(&report)?)?;
        }
        Command::Synth {
            kind,
            out,
            seed,
            frames,
            disparity,
            positives,
            negatives,
        } => {
            create_dir(&out)?;
            match kind {
                SynthKind::Corpus => {
                    let corpus = generate_corpus(&CorpusSpec {
                        positives,
                        negatives,
                        seed,
                    })?;
                    for (sub, images) in [("pos", &corpus.positives), ("neg", &corpus.negatives)] {
                        let dir = out.join(sub);
                        create_dir(&dir)?;
                        for (i, img) in images.iter().enumerate() {
                            save_image(img, dir.join(format!("{i:04}.pgm")))?;
                        }
                    }
                }
                SynthKind::Road | SynthKind::Wall => {
                    let mut boxes = Vec::new();
                    for i in 0..frames {
                        let s = seed + i as u64;
                        let spec = match kind {
                            SynthKind::Road => SceneSpec::road_with_obstacle(s),
                            _ => SceneSpec::wall(256, 256, disparity, 32, s),
                        };
                        let scene = generate_synthetic_scene(&spec)?;
                        save_image(scene.pair.left(), out.join(format!("{i:03}_left.pgm")))?;
                        save_image(scene.pair.right(), out.join(format!("{i:03}_right.pgm")))?;
                        save_pfm(&scene.gt, out.join(format!("{i:03}_gt.pfm")))?;
                        boxes.push(scene.boxes);
                    }
                    write_output(Some(&out.join("boxes.json")), &to_json(&boxes)?)?;
                }
            }
        }
        Command::Bench {
            left,
            right,
            model,
            repeats,
            common,
        } => {
            let cfg = common.load()?;
            let pair = match (left, right) {
                (Some(l), Some(r)) => StereoPair::new(load_image(l)?, load_image(r)?)?,
                _ => generate_synthetic_scene(&SceneSpec::road_with_obstacle(1))?.pair,
            };
            let p = pipeline_with_model(cfg, model)?;
            println!("{}", to_json(&bench(&p, &pair, repeats)?)?.trim_end());
        }
    }
    Ok(())
}

fn eval_dirs(pred: &Path, gt: &Path, tau: f64, d_max: u32) -> Result<EvalReport> {
    let mut report = EvalReport::new(tau);
    let entries = fs::read_dir(gt).map_err(|e| Error::Io {
        path: gt.to_path_buf(),
        source: e,
    })?;
    let mut gt_files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pfm" | "png")))
        .collect();
    gt_files.sort();
    if gt_files.is_empty() {
        warn!("{}: no ground-truth files", gt.display());
    }
    for g in gt_files {
        let stem = g.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let candidate = ["pfm", "png"]
            .iter()
            .map(|ext| pred.join(format!("{stem}.{ext}")))
            .find(|p| p.exists());
        let Some(p) = candidate else {
            warn!("{stem}: no prediction, skipped");
            continue;
        };
        let gt_map = load_disparity(&g, None)?;
        let d = gt_map.d_max().max(d_max);
        report.add_image(stem, &load_disparity(&p, Some(d))?, &gt_map)?;
    }
    Ok(report)
}

fn eval_labeled(model: &CascadeModel, positives: Option<&Path>, negatives: Option<&Path>) -> Result<DetectionCounts> {
    let mut counts = DetectionCounts::default();
    for (dir, label) in [(positives, true), (negatives, false)] {
        let Some(dir) = dir else { continue };
        for path in list_images(dir)? {
            let (accepted, _) = cascade_classify(&load_image(&path)?, model)?;
            match (label, accepted) {
                (true, true) => counts.true_positives += 1,
                (true, false) => counts.false_negatives += 1,
                (false, false) => counts.true_negatives += 1,
                (false, true) => counts.false_positives += 1,
            }
        }
    }
    Ok(counts)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
