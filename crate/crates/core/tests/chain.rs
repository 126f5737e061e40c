//! Eye frame to fused camera frame, and trajectory/evaluation round trips,
//! through the public API only.

use coopercept_core::eval::{evaluate, read_detections_jsonl, write_jsonl, BBox, Detection};
use coopercept_core::gaze::{crop_patch, map_gaze, ScreenGeometry};
use coopercept_core::pupil::{merge_eyes, PupilDetector, RadiusRange};
use coopercept_core::pyramid::{fuse_frame, BlendOrder};
use coopercept_core::track::{fuse_trajectories, rmse, FusionConfig, Source, TrackPoint, Trajectory};
use coopercept_core::ImageBuffer;

fn eye_frame(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, 1, |x, y, _| {
        if (x as f64 - cx).hypot(y as f64 - cy) <= r {
            40.0
        } else {
            180.0
        }
    })
    .unwrap()
}

#[test]
fn pupils_to_fused_marker() {
    let detector = PupilDetector {
        radius: RadiusRange::new(5, 20),
        ..Default::default()
    };
    // Screen centre: both pupils straddle (960, 540).
    let left = detector.detect(&eye_frame(1920, 1080, 958.0, 540.0, 9.0), 1000).unwrap();
    let right = detector.detect(&eye_frame(1920, 1080, 962.0, 540.0, 9.0), 1004).unwrap();
    let gaze = merge_eyes(&left, &right).unwrap();
    assert_eq!(gaze.utc_ms, 1002);
    assert!((gaze.x - 960.0).abs() < 0.5 && (gaze.y - 540.0).abs() < 0.5, "{gaze:?}");

    let geom = ScreenGeometry::default();
    let mapping = map_gaze(&gaze, &geom).unwrap();
    let (cx, cy) = mapping.bbox.center();
    assert!((cx - 160.0).abs() < 0.2 && (cy - 176.67).abs() < 0.2, "{cx} {cy}");

    // Uniform grey camera, scene with the tracker's red marker at the gaze.
    let camera = ImageBuffer::filled(480, 270, 3, 128.0).unwrap();
    let scene = ImageBuffer::from_fn(1920, 1080, 3, |x, y, c| {
        if (x as f64 - 960.0).hypot(y as f64 - 540.0) <= 35.0 {
            [230.0, 20.0, 20.0][c]
        } else {
            128.0
        }
    })
    .unwrap();
    let patch = crop_patch(&scene, &gaze, &geom);
    let fused = fuse_frame(&camera, &patch, &mapping.bbox, &geom, BlendOrder::GazeOnTop).unwrap();
    let centre = fused.pixel(cx.round() as usize, cy.round() as usize);
    assert!(centre[0] > 200.0 && centre[1] < 60.0, "{centre:?}");
    // Corners lie more than five marker radii from the gaze.
    for (x, y) in [(5, 5), (470, 260), (5, 260), (470, 5)] {
        assert!(fused.pixel(x, y).iter().all(|v| (v - 128.0).abs() < 0.05), "({x}, {y})");
    }
}

#[test]
fn identical_sources_fuse_to_the_source() {
    let points: Vec<TrackPoint> = (0..60)
        .map(|k| TrackPoint {
            utc_ms: 100 * k,
            x: 50.0 + 2.0 * k as f64,
            y: 80.0 + 0.5 * k as f64,
        })
        .collect();
    let gaze = Trajectory::new(Source::Gaze, points.clone()).unwrap();
    let det = Trajectory::new(Source::Detector, points.clone()).unwrap();
    let truth = Trajectory::new(Source::GroundTruth, points).unwrap();
    let fused = fuse_trajectories(&gaze, &det, &FusionConfig::default()).unwrap();
    assert_eq!(fused.len(), 60);
    // The filter starts at rest and needs a few steps to pick up the speed.
    let tail: Vec<TrackPoint> = fused.points()[20..].to_vec();
    let tail = Trajectory::new(Source::Fused, tail).unwrap();
    assert!(rmse(&tail, &truth).unwrap() < 0.05);
}

#[test]
fn detections_survive_a_jsonl_round_trip() {
    let dets = vec![
        Detection { frame: 0, class: "car".into(), bbox: BBox::new(1.5, 2.0, 30.0, 20.0).unwrap(), conf: 0.9 },
        Detection { frame: 3, class: "bus".into(), bbox: BBox::new(100.0, 40.25, 80.0, 50.0).unwrap(), conf: 0.55 },
    ];
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &dets).unwrap();
    assert_eq!(read_detections_jsonl(buf.as_slice()).unwrap(), dets);
    // No ground truth for either class: nothing to score.
    assert!(evaluate(&dets, &[], 0.5, 0.5).is_err());
}
