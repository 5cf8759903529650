//! Frame pipeline contracts on synthetic scenes.

use mpvstereo::imgio::{save_image, RemapTable};
use mpvstereo::pipeline::io::save_pfm;
use mpvstereo::pipeline::synth::{generate_synthetic_scene, SceneSpec};
use mpvstereo::pipeline::{Pipeline, PipelineConfig};
use mpvstereo::Error;

fn config(threads: usize) -> PipelineConfig {
    PipelineConfig {
        threads,
        ..PipelineConfig::default()
    }
}

#[test]
fn records_are_identical_across_thread_counts() {
    let scene = generate_synthetic_scene(&SceneSpec::road_with_obstacle(4)).unwrap();
    let mut records = Vec::new();
    for threads in 1..=4 {
        let cfg = config(threads);
        let p = Pipeline::new(cfg.clone(), None).unwrap();
        let r = p.run_frame(&scene.pair).unwrap();
        records.push(serde_json::to_string(&r.record("f", &cfg, false)).unwrap());
    }
    for r in &records[1..] {
        assert_eq!(r, &records[0]);
    }
}

#[test]
fn road_scene_without_model_yields_rois_only() {
    let scene = generate_synthetic_scene(&SceneSpec::road_with_obstacle(7)).unwrap();
    let cfg = config(2);
    let p = Pipeline::new(cfg.clone(), None).unwrap();
    let r = p.run_frame(&scene.pair).unwrap();
    assert!(r.detections.is_empty());
    assert!(r.warnings.iter().any(|w| w.contains("model")));
    let road = r.road.as_ref().expect("road model");
    assert!(road.plane.normal[1] > 0.99, "{:?}", road.plane);
    assert!((road.plane.offset + 1.5).abs() < 0.1, "{:?}", road.plane);

    let gt = scene.boxes[0];
    let geometry = cfg.camera.geometry(scene.pair.width(), scene.pair.height()).unwrap();
    let (w, h) = (scene.pair.width(), scene.pair.height());
    assert!(!r.rois.is_empty());
    for roi in &r.rois {
        assert!(roi.right() <= w && roi.bottom() <= h);
        assert!((roi.distance - geometry.fb() / roi.mean_disparity).abs() <= 1e-6);
    }
    let hit = r.rois.iter().find(|roi| roi.contains_box(gt.x + 4, gt.y + 4, gt.w - 8, gt.h - 8));
    let hit = hit.unwrap_or_else(|| panic!("no ROI covers {gt:?}: {:?}", r.rois));
    assert!((hit.distance - 10.0).abs() < 0.5, "{hit:?}");
}

#[test]
fn five_frame_sequence_reports_mean_error() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..5u64 {
        let s = generate_synthetic_scene(&SceneSpec::road_with_obstacle(20 + i)).unwrap();
        save_image(s.pair.left(), dir.path().join(format!("{i:03}_left.png"))).unwrap();
        save_image(s.pair.right(), dir.path().join(format!("{i:03}_right.png"))).unwrap();
        save_pfm(&s.gt, dir.path().join(format!("{i:03}_gt.pfm"))).unwrap();
    }
    let p = Pipeline::new(config(0), None).unwrap();
    let seq = p.run_sequence(dir.path()).unwrap();
    assert_eq!(seq.frames.len(), 5);
    assert!(seq.skipped.is_empty());
    for (k, (_, f)) in seq.frames.iter().enumerate() {
        assert_eq!(f.seq, k as u64);
    }
    assert_eq!(seq.report.images.len(), 5);
    let mean = seq.report.mean_error_rate.unwrap();
    assert!(mean < 0.1, "mean error rate {mean}");
    assert_eq!(seq.report.timing.unwrap().frames, 5);
}

#[test]
fn rectification_errors_name_their_stage() {
    let scene = generate_synthetic_scene(&SceneSpec::wall(64, 48, 4, 16, 1)).unwrap();
    let p = Pipeline::new(config(1), None)
        .unwrap()
        .with_remap(RemapTable::identity(32, 32), RemapTable::identity(64, 48));
    match p.run_frame(&scene.pair) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "rectify"),
        other => panic!("expected a rectify error, got {other:?}"),
    }

    let ok = Pipeline::new(config(1), None)
        .unwrap()
        .with_remap(RemapTable::identity(64, 48), RemapTable::identity(64, 48));
    let plain = Pipeline::new(config(1), None).unwrap();
    assert_eq!(
        ok.run_frame(&scene.pair).unwrap().disparity,
        plain.run_frame(&scene.pair).unwrap().disparity
    );
}

#[test]
fn config_file_drives_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, "d_max = 16\nthreads = 1\nmatcher = \"single\"\n[penalty]\nlambda = 4.0\n").unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.d_max, 16);
    let scene = generate_synthetic_scene(&SceneSpec::wall(64, 48, 5, 16, 2)).unwrap();
    let r = Pipeline::new(cfg, None).unwrap().run_frame(&scene.pair).unwrap();
    assert!(r.node_evaluations.is_none());
    assert_eq!(r.disparity.d_max(), 16);
    assert_eq!(r.disparity.get(40, 24), Some(5));

    std::fs::write(&path, "d_max = \"many\"\n").unwrap();
    assert!(matches!(PipelineConfig::load(&path), Err(Error::Malformed { .. })));
}
