//! Per-frame processing and the two-stage sequence pipeline.
//!
//! A frame passes through a matching stage (rectify, disparity) and an
//! analysis stage (road model, obstacle ROIs, recognition). Over a sequence
//! the two stages run on separate threads joined by a one-slot queue, so
//! frame k is analysed while frame k+1 is matched.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{apply_remap, load_image, RemapTable, StereoPair};
use crate::multiscale::{fill_invalid_rows, run_multiscale_mpv, EvalSummary};
use crate::pipeline::config::{MatcherMode, PipelineConfig};
use crate::pipeline::eval::{EvalReport, TimingSummary};
use crate::pipeline::io::load_disparity;
use crate::recog::{detect_in_roi, pad_roi, CascadeModel, Detection};
use crate::roadobs::{detect_road, extract_obstacle_rois, udisparity, RoadModel, RoiBox};
use crate::viterbi::{run_mpv, DisparityMap};

/// Wall-clock milliseconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub rectify_ms: f64,
    pub matching_ms: f64,
    pub road_ms: f64,
    pub rois_ms: f64,
    pub detection_ms: f64,
}

impl Timings {
    pub fn total_ms(&self) -> f64 {
        self.rectify_ms + self.matching_ms + self.road_ms + self.rois_ms + self.detection_ms
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Output of the matching stage.
#[derive(Clone, Debug)]
pub struct MatchedFrame {
    pub seq: u64,
    /// Rectified pair.
    pub pair: StereoPair,
    pub disparity: DisparityMap,
    pub node_evaluations: Option<EvalSummary>,
    pub timings: Timings,
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub seq: u64,
    pub disparity: DisparityMap,
    pub road: Option<RoadModel>,
    /// Search regions as swept by the detector (padded, clipped).
    pub rois: Vec<RoiBox>,
    pub detections: Vec<Detection>,
    pub node_evaluations: Option<EvalSummary>,
    pub timings: Timings,
    pub warnings: Vec<String>,
}

/// JSON document written per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: String,
    pub width: usize,
    pub height: usize,
    pub d_max: u32,
    pub config_hash: String,
    pub road: Option<RoadModel>,
    pub rois: Vec<RoiBox>,
    pub detections: Vec<Detection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_evaluations: Option<EvalSummary>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

impl FrameResult {
    pub fn record(&self, frame: impl Into<String>, config: &PipelineConfig, with_timings: bool) -> DetectionRecord {
        DetectionRecord {
            frame: frame.into(),
            width: self.disparity.width(),
            height: self.disparity.height(),
            d_max: self.disparity.d_max(),
            config_hash: config.hash(),
            road: self.road.clone(),
            rois: self.rois.clone(),
            detections: self.detections.clone(),
            node_evaluations: self.node_evaluations,
            warnings: self.warnings.clone(),
            timings: with_timings.then_some(self.timings),
        }
    }
}

/// Configured frame processor. Holds the model, rectification tables and a
/// worker pool sized by `config.threads`.
pub struct Pipeline {
    config: PipelineConfig,
    model: Option<CascadeModel>,
    remap: Option<(RemapTable, RemapTable)>,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// Builds a pipeline, loading remap tables named in the config.
    pub fn new(config: PipelineConfig, model: Option<CascadeModel>) -> Result<Self> {
        config.validate()?;
        let remap = match (&config.paths.remap_left, &config.paths.remap_right) {
            (Some(l), Some(r)) => Some((RemapTable::load(l)?, RemapTable::load(r)?)),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidArgument(
                    "remap tables must be given for both cameras or neither".into(),
                ))
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        Ok(Self {
            config,
            model,
            remap,
            pool,
        })
    }

    /// Loads the model named in the config, if any, then builds.
    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        let model = match &config.paths.model {
            Some(p) => Some(CascadeModel::load(p)?),
            None => None,
        };
        Self::new(config, model)
    }

    pub fn with_remap(mut self, left: RemapTable, right: RemapTable) -> Self {
        self.remap = Some((left, right));
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn model(&self) -> Option<&CascadeModel> {
        self.model.as_ref()
    }

    pub fn match_stage(&self, seq: u64, pair: &StereoPair) -> Result<MatchedFrame> {
        self.pool.install(|| self.match_inner(seq, pair))
    }

    fn match_inner(&self, seq: u64, pair: &StereoPair) -> Result<MatchedFrame> {
        let mut timings = Timings::default();
        let t = Instant::now();
        let pair = match &self.remap {
            Some((l, r)) => {
                let left = apply_remap(pair.left(), l).map_err(|e| e.in_stage("rectify"))?;
                let right = apply_remap(pair.right(), r).map_err(|e| e.in_stage("rectify"))?;
                StereoPair::new(left, right).map_err(|e| e.in_stage("rectify"))?
            }
            None => pair.clone(),
        };
        timings.rectify_ms = elapsed_ms(t);

        let t = Instant::now();
        let params = self.config.mpv();
        let (disparity, node_evaluations) = match self.config.matcher {
            MatcherMode::Multiscale => {
                let (d, s) = run_multiscale_mpv(&pair, self.config.d_max, &params, &self.config.multiscale)
                    .map_err(|e| e.in_stage("matching"))?;
                (d, Some(s))
            }
            MatcherMode::Single => {
                let d = run_mpv(&pair, self.config.d_max, &params)
                    .and_then(|d| fill_invalid_rows(&d))
                    .map_err(|e| e.in_stage("matching"))?;
                (d, None)
            }
        };
        timings.matching_ms = elapsed_ms(t);
        Ok(MatchedFrame {
            seq,
            pair,
            disparity,
            node_evaluations,
            timings,
        })
    }

    pub fn analysis_stage(&self, matched: MatchedFrame) -> Result<FrameResult> {
        self.pool.install(|| self.analyse_inner(matched))
    }

    fn analyse_inner(&self, matched: MatchedFrame) -> Result<FrameResult> {
        let MatchedFrame {
            seq,
            pair,
            disparity,
            node_evaluations,
            mut timings,
        } = matched;
        let mut warnings = Vec::new();
        let geometry = self
            .config
            .camera
            .geometry(pair.width(), pair.height())
            .map_err(|e| e.in_stage("road"))?;

        let t = Instant::now();
        let road = match detect_road(&disparity, &geometry, &self.config.road) {
            Ok(r) => Some(r),
            Err(e @ (Error::Degenerate(_) | Error::Infeasible(_))) => {
                warnings.push(format!("no road model: {e}"));
                None
            }
            Err(e) => return Err(e.in_stage("road")),
        };
        timings.road_ms = elapsed_ms(t);

        let t = Instant::now();
        let (w, h) = (pair.width(), pair.height());
        let rois: Vec<RoiBox> = match &road {
            Some(road) => extract_obstacle_rois(&disparity, road, &udisparity(&disparity), &self.config.road)
                .iter()
                .map(|r| pad_roi(r, self.config.detector.roi_padding, w, h))
                .collect(),
            None => Vec::new(),
        };
        timings.rois_ms = elapsed_ms(t);

        let t = Instant::now();
        let detections = match &self.model {
            Some(model) => {
                let mut all = Vec::new();
                for roi in &rois {
                    all.extend(
                        detect_in_roi(pair.left(), roi, model, &self.config.detector)
                            .map_err(|e| e.in_stage("detection"))?,
                    );
                }
                dedupe_detections(all, self.config.detector.merge_overlap)
            }
            None => {
                warnings.push("no cascade model; detection skipped".into());
                Vec::new()
            }
        };
        timings.detection_ms = elapsed_ms(t);
        for w in &warnings {
            warn!("frame {seq}: {w}");
        }
        Ok(FrameResult {
            seq,
            disparity,
            road,
            rois,
            detections,
            node_evaluations,
            timings,
            warnings,
        })
    }

    pub fn run_frame(&self, pair: &StereoPair) -> Result<FrameResult> {
        let matched = self.match_stage(0, pair)?;
        self.analysis_stage(matched)
    }

    /// Processes the `NNN_left` / `NNN_right` pairs of `dir` in name order.
    /// Matching of frame k+1 overlaps analysis of frame k.
    pub fn run_sequence(&self, dir: &Path) -> Result<SequenceResult> {
        let listing = pair_frames(dir)?;
        let mut skipped = listing.unpaired;
        if listing.frames.is_empty() {
            warn!("{}: no frame pairs found", dir.display());
        }
        let tau = self.config.eval_tau;
        let d_max = self.config.d_max;

        let (tx, rx) = sync_channel::<(FramePaths, Option<DisparityMap>, MatchedFrame)>(1);
        let (frames, mut load_skips, report) = std::thread::scope(|scope| -> Result<_> {
            let producer = scope.spawn(move || -> Result<Vec<SkippedFrame>> {
                let mut skipped = Vec::new();
                let mut seq = 0u64;
                for fp in listing.frames {
                    let loaded = load_pair(&fp).and_then(|pair| {
                        let gt = match &fp.gt {
                            Some(p) => Some(load_disparity(p, Some(d_max))?),
                            None => None,
                        };
                        Ok((pair, gt))
                    });
                    let (pair, gt) = match loaded {
                        Ok(v) => v,
                        Err(e) => {
                            warn!("skipping frame {}: {e}", fp.name);
                            skipped.push(SkippedFrame {
                                name: fp.name.clone(),
                                reason: e.to_string(),
                            });
                            continue;
                        }
                    };
                    let matched = self.match_stage(seq, &pair)?;
                    seq += 1;
                    if tx.send((fp, gt, matched)).is_err() {
                        break;
                    }
                }
                Ok(skipped)
            });

            let mut frames = Vec::new();
            let mut report = EvalReport::new(tau);
            let mut expected = 0u64;
            let mut totals = Vec::new();
            for (fp, gt, matched) in rx {
                assert_eq!(matched.seq, expected, "frames arrived out of order");
                expected += 1;
                let result = self.analysis_stage(matched)?;
                assert_eq!(result.seq, expected - 1, "analysis mixed frames");
                if let Some(gt) = gt {
                    report
                        .add_image(fp.name.clone(), &result.disparity, &gt)
                        .map_err(|e| e.in_stage("eval"))?;
                }
                totals.push(result.timings.total_ms());
                frames.push((fp.name, result));
            }
            let skipped = producer.join().expect("matching thread panicked")?;
            report.timing = Some(TimingSummary::from_durations_ms(&totals));
            Ok((frames, skipped, report))
        })?;
        skipped.append(&mut load_skips);
        skipped.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(SequenceResult {
            frames,
            skipped,
            report,
        })
    }
}

/// Convenience wrapper building a one-off pipeline.
pub fn run_frame(pair: &StereoPair, config: &PipelineConfig, model: Option<CascadeModel>) -> Result<FrameResult> {
    Pipeline::new(config.clone(), model)?.run_frame(pair)
}

/// Detections from different ROIs that overlap are collapsed, keeping the
/// one with more merged windows (earlier on ties).
fn dedupe_detections(dets: Vec<Detection>, min_overlap: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let clash = kept.iter().position(|k| {
            let ix = (k.x + k.w).min(d.x + d.w).saturating_sub(k.x.max(d.x));
            let iy = (k.y + k.h).min(d.y + d.h).saturating_sub(k.y.max(d.y));
            let smaller = (k.w * k.h).min(d.w * d.h).max(1);
            (ix * iy) as f64 / smaller as f64 >= min_overlap
        });
        match clash {
            Some(i) if d.hits > kept[i].hits => kept[i] = d,
            Some(_) => {}
            None => kept.push(d),
        }
    }
    kept
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub name: String,
    pub reason: String,
}

pub struct SequenceResult {
    pub frames: Vec<(String, FrameResult)>,
    pub skipped: Vec<SkippedFrame>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePaths {
    pub name: String,
    pub left: PathBuf,
    pub right: PathBuf,
    pub gt: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct FrameListing {
    pub frames: Vec<FramePaths>,
    pub unpaired: Vec<SkippedFrame>,
}

#[derive(Default)]
struct Slots {
    left: Option<PathBuf>,
    right: Option<PathBuf>,
    gt: Option<PathBuf>,
}

/// Groups `NNN_left.{pgm,png}`, `NNN_right.{pgm,png}` and optional
/// `NNN_gt.{pfm,png}` by their common prefix.
pub fn pair_frames(dir: &Path) -> Result<FrameListing> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut slots: BTreeMap<String, Slots> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        let ext = ext.to_ascii_lowercase();
        let Some((name, role)) = stem.rsplit_once('_') else {
            continue;
        };
        let slot = slots.entry(name.to_string()).or_default();
        match (role, ext.as_str()) {
            ("left", "pgm" | "png") => slot.left = Some(path),
            ("right", "pgm" | "png") => slot.right = Some(path),
            ("gt", "pfm" | "png") => slot.gt = Some(path),
            _ => {}
        }
    }
    let mut listing = FrameListing::default();
    for (name, s) in slots {
        match (s.left, s.right) {
            (Some(left), Some(right)) => listing.frames.push(FramePaths {
                name,
                left,
                right,
                gt: s.gt,
            }),
            (None, None) => {}
            (l, _) => {
                let missing = if l.is_none() { "left" } else { "right" };
                warn!("frame {name}: no {missing} image, skipped");
                listing.unpaired.push(SkippedFrame {
                    name,
                    reason: format!("missing {missing} image"),
                });
            }
        }
    }
    Ok(listing)
}

fn load_pair(fp: &FramePaths) -> Result<StereoPair> {
    StereoPair::new(load_image(&fp.left)?, load_image(&fp.right)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub d_max: u32,
    pub threads: usize,
    pub repeats: usize,
    pub mean: Timings,
    pub mean_total_ms: f64,
    pub fps: f64,
}

/// Runs the same frame `repeats` times and averages stage timings.
pub fn bench(pipeline: &Pipeline, pair: &StereoPair, repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be > 0".into()));
    }
    let mut sum = Timings::default();
    for _ in 0..repeats {
        let t = pipeline.run_frame(pair)?.timings;
        sum.rectify_ms += t.rectify_ms;
        sum.matching_ms += t.matching_ms;
        sum.road_ms += t.road_ms;
        sum.rois_ms += t.rois_ms;
        sum.detection_ms += t.detection_ms;
    }
    let n = repeats as f64;
    let mean = Timings {
        rectify_ms: sum.rectify_ms / n,
        matching_ms: sum.matching_ms / n,
        road_ms: sum.road_ms / n,
        rois_ms: sum.rois_ms / n,
        detection_ms: sum.detection_ms / n,
    };
    let total = mean.total_ms();
    Ok(BenchReport {
        width: pair.width(),
        height: pair.height(),
        d_max: pipeline.config().d_max,
        threads: pipeline.pool.current_num_threads(),
        repeats,
        mean,
        mean_total_ms: total,
        fps: if total > 0.0 { 1000.0 / total } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{save_image, GrayImage};
    use crate::pipeline::io::save_pfm;
    use crate::pipeline::synth::{generate_synthetic_scene, SceneSpec};

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            d_max: 16,
            threads: 2,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn identical_images_give_zero_disparity_and_nothing_else() {
        let img = GrayImage::from_fn(64, 48, |x, y| ((x * 37 + y * 91) % 251) as u8).unwrap();
        let pair = StereoPair::new(img.clone(), img).unwrap();
        let r = run_frame(&pair, &small_config(), None).unwrap();
        assert_eq!(r.disparity.iter_valid().filter(|&(_, _, u)| u != 0).count(), 0);
        assert!(r.road.is_none());
        assert!(r.detections.is_empty());
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn dedupe_keeps_stronger() {
        let a = Detection { x: 0, y: 0, w: 10, h: 10, hits: 2, distance: 5.0 };
        let b = Detection { x: 2, y: 2, w: 10, h: 10, hits: 5, distance: 5.0 };
        let c = Detection { x: 50, y: 50, w: 10, h: 10, hits: 1, distance: 5.0 };
        assert_eq!(dedupe_detections(vec![a, b, c], 0.5), vec![b, c]);
    }

    #[test]
    fn sequence_pairs_skips_and_evaluates() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..2u64 {
            let s = generate_synthetic_scene(&SceneSpec::wall(64, 48, 6, 16, i)).unwrap();
            save_image(s.pair.left(), dir.path().join(format!("{i:03}_left.pgm"))).unwrap();
            save_image(s.pair.right(), dir.path().join(format!("{i:03}_right.pgm"))).unwrap();
            save_pfm(&s.gt, dir.path().join(format!("{i:03}_gt.pfm"))).unwrap();
        }
        let lone = GrayImage::filled(64, 48, 9).unwrap();
        save_image(&lone, dir.path().join("005_left.pgm")).unwrap();
        save_image(&lone, dir.path().join("007_left.pgm")).unwrap();
        save_image(&GrayImage::filled(60, 48, 9).unwrap(), dir.path().join("007_right.pgm")).unwrap();

        let p = Pipeline::new(small_config(), None).unwrap();
        let seq = p.run_sequence(dir.path()).unwrap();
        let names: Vec<_> = seq.frames.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["000", "001"]);
        assert_eq!(seq.frames[1].1.seq, 1);
        let skipped: Vec<_> = seq.skipped.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(skipped, ["005", "007"]);
        assert_eq!(seq.report.images.len(), 2);
        // The 6-column strip on the left has no match in the right image.
        assert!(seq.report.mean_error_rate.unwrap() < 6.0 / 64.0 + 0.02);
    }

    #[test]
    fn empty_directory_is_empty_result() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(small_config(), None).unwrap();
        let seq = p.run_sequence(dir.path()).unwrap();
        assert!(seq.frames.is_empty());
        assert!(seq.report.mean_error_rate.is_none());
    }
}
