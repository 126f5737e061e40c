//! Runs the `coopercept` binary against the bundled synthetic fixture and
//! small variations of it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

use coopercept_core::ImageBuffer;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic")
}

fn coopercept(stage: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopercept"))
        .arg(stage)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a config into `dir` whose `[paths]` point at the fixture, with
/// `paths` entries replacing or dropping (empty value) the defaults, and
/// `extra` appended verbatim.
fn write_config(dir: &Path, paths: &[(&str, &str)], extra: &str) -> PathBuf {
    let fx = fixture();
    let mut entries: Vec<(String, String)> = [
        ("eye_frames", fx.join("eye")),
        ("frame_index", fx.join("frames.csv")),
        ("detections", fx.join("detections.jsonl")),
        ("ground_truth", fx.join("ground_truth.jsonl")),
        ("rtk", fx.join("rtk.csv")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.display().to_string()))
    .collect();
    for (key, value) in paths {
        entries.retain(|(k, _)| k != key);
        if !value.is_empty() {
            entries.push((key.to_string(), value.to_string()));
        }
    }
    let mut text = String::from("[paths]\noutput = \"out\"\n");
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v:?}\n"));
    }
    text.push_str("\n[hough]\nr_min = 5\nr_max = 20\n");
    let fixture_config = fs::read_to_string(fx.join("config.toml")).unwrap();
    let track = &fixture_config[fixture_config.find("[track]").unwrap()..];
    text.push('\n');
    text.push_str(track);
    text.push_str(extra);
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Output of one `pupil` run on the fixture, shared by the tests that need
/// gaze samples.
fn pupil_run() -> &'static Path {
    static RUN: OnceLock<TempDir> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let out = coopercept("pupil", &fixture().join("config.toml"), dir.path());
        assert!(out.status.success(), "{}", stderr(&out));
        dir
    })
    .path()
}

fn max_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn pupil_writes_one_row_per_eye_pair() {
    let text = fs::read_to_string(pupil_run().join("gaze.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("UTC,Gaze_X,Gaze_Y,PupilArea"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    // Rendered pupils have radius 9.22 px, area ≈ 267 px².
    for row in rows {
        let area: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((area - 267.06).abs() < 8.0, "{row}");
    }
}

#[test]
fn empty_eye_directory_exits_2() {
    let dir = TempDir::new().unwrap();
    let eyes = dir.path().join("eyes");
    fs::create_dir(&eyes).unwrap();
    let cfg = write_config(dir.path(), &[("eye_frames", eyes.to_str().unwrap())], "");
    let out = coopercept("pupil", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("no eye frames"));
}

#[test]
fn fused_frames_match_golden_files() {
    let dir = TempDir::new().unwrap();
    let gaze = pupil_run().join("gaze.csv");
    let cfg = write_config(dir.path(), &[("gaze_csv", gaze.to_str().unwrap())], "");
    let out = coopercept("fuse", &cfg, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    for i in 0..5 {
        let name = format!("fused_{i:06}.png");
        let got = ImageBuffer::load(dir.path().join(&name)).unwrap();
        let want = ImageBuffer::load(fixture().join("golden").join(&name)).unwrap();
        let diff = max_abs_diff(&got, &want);
        assert!(diff <= 1.0, "{name}: max abs diff {diff}");
    }
    for i in 0..10 {
        assert!(dir.path().join(format!("fused_{i:06}.png")).is_file());
    }
}

#[test]
fn fusion_changes_only_the_gaze_region() {
    let dir = TempDir::new().unwrap();
    let gaze = pupil_run().join("gaze.csv");
    let cfg = write_config(dir.path(), &[("gaze_csv", gaze.to_str().unwrap())], "");
    let out = coopercept("fuse", &cfg, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let fused = ImageBuffer::load(dir.path().join("fused_000000.png")).unwrap();
    let camera = ImageBuffer::load(fixture().join("camera/000000.png")).unwrap();
    // Far corner untouched, gaze region altered.
    assert_eq!(fused.pixel(470, 260), camera.pixel(470, 260));
    assert!(max_abs_diff(&fused, &camera) > 20.0);
}

#[test]
fn frames_without_gaze_overlap_are_copied() {
    let dir = TempDir::new().unwrap();
    let gaze = dir.path().join("gaze.csv");
    fs::write(&gaze, "UTC,Gaze_X,Gaze_Y,PupilArea\n1000,960.000,540.000,265.000\n1117,961.000,540.000,265.000\n").unwrap();
    let cfg = write_config(dir.path(), &[("gaze_csv", gaze.to_str().unwrap())], "");
    let out_dir = dir.path().join("out");
    let out = coopercept("fuse", &cfg, &out_dir);
    assert!(out.status.success(), "{}", stderr(&out));
    for i in 0..10 {
        let fused = fs::read(out_dir.join(format!("fused_{i:06}.png"))).unwrap();
        let camera = fs::read(fixture().join(format!("camera/{i:06}.png"))).unwrap();
        assert!(fused == camera, "frame {i} was not copied");
    }
}

#[test]
fn geometry_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let gaze = pupil_run().join("gaze.csv");
    let cfg = write_config(
        dir.path(),
        &[("gaze_csv", gaze.to_str().unwrap())],
        "\n[geometry]\ntarget_w = 640.0\ntarget_h = 360.0\n",
    );
    let out = coopercept("fuse", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("geometry mismatch"), "{}", stderr(&out));
}

#[test]
fn eval_reports_every_fixture_class() {
    let dir = TempDir::new().unwrap();
    let out = coopercept("eval", &fixture().join("config.toml"), dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval_report.json")).unwrap()).unwrap();
    let classes = report["classes"].as_object().unwrap();
    assert_eq!(classes.keys().collect::<Vec<_>>(), ["bus", "car", "pedestrian"]);
    let mean = classes.values().map(|c| c["ap"].as_f64().unwrap()).sum::<f64>() / 3.0;
    assert_eq!(report["mAP"].as_f64().unwrap(), mean);
}

#[test]
fn malformed_detection_line_is_cited() {
    let dir = TempDir::new().unwrap();
    let mut lines: Vec<String> = fs::read_to_string(fixture().join("detections.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    lines[2] = "{\"frame\":0,\"class\":\"car\",\"x\":1.0".into();
    let dets = dir.path().join("dets.jsonl");
    fs::write(&dets, lines.join("\n")).unwrap();
    let cfg = write_config(dir.path(), &[("detections", dets.to_str().unwrap())], "");
    let out = coopercept("eval", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("dets.jsonl") && err.contains("line 3"), "{err}");
}

#[test]
fn track_writes_all_four_trajectories() {
    let dir = TempDir::new().unwrap();
    let gaze = pupil_run().join("gaze.csv");
    let cfg = write_config(dir.path(), &[("gaze_csv", gaze.to_str().unwrap())], "");
    let out = coopercept("track", &cfg, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    for source in ["gaze", "detector", "fused", "ground_truth"] {
        assert_eq!(csv.lines().filter(|l| l.ends_with(&format!(",{source}"))).count(), 10, "{source}");
    }
    let svg = fs::read_to_string(dir.path().join("trajectories.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("track_metrics.json")).unwrap()).unwrap();
    let rmse = &metrics["rmse_px"];
    // The fixture's detector boxes sit within a few px of the truth while
    // the gaze deliberately wanders around the vehicle.
    assert!(rmse["detector"].as_f64().unwrap() < 4.0);
    assert!(rmse["fused"].as_f64().unwrap() < rmse["gaze"].as_f64().unwrap());
    assert_eq!(metrics["ttc"].as_array().unwrap().len(), 10);
    let zones: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("zone_report.json")).unwrap()).unwrap();
    assert_eq!(zones["zones"]["far"]["inside_fraction"].as_f64(), Some(0.0));
    assert_eq!(zones["zones"]["near"]["inside_fraction"].as_f64(), Some(1.0));
}

#[test]
fn missing_rtk_is_reported() {
    let dir = TempDir::new().unwrap();
    let gaze = pupil_run().join("gaze.csv");
    let cfg = write_config(dir.path(), &[("gaze_csv", gaze.to_str().unwrap()), ("rtk", "")], "");
    let out = coopercept("track", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rtk"), "{}", stderr(&out));
}

#[test]
fn rtk_outside_frame_span_fails_with_diagnostic() {
    let dir = TempDir::new().unwrap();
    let gaze = pupil_run().join("gaze.csv");
    let rtk = dir.path().join("rtk.csv");
    fs::write(
        &rtk,
        "utc_ms,rel_x_m,rel_y_m,ego_vy_mps,obj_vy_mps,gap_m\n1000,1.0,1.0,5.0,5.0,20.0\n1050,1.0,1.0,5.0,5.0,19.5\n",
    )
    .unwrap();
    let cfg = write_config(dir.path(), &[("gaze_csv", gaze.to_str().unwrap()), ("rtk", rtk.to_str().unwrap())], "");
    let out = coopercept("track", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(!stderr(&out).trim().is_empty());
}

#[test]
fn invalid_config_names_the_problem() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &[], "\n[eval]\niou_thresh = 1.5\n");
    let out = coopercept("eval", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("iou_thresh"), "{}", stderr(&out));
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let dir = TempDir::new().unwrap();
    let out = coopercept("eval", &fixture().join("config.toml"), dir.path());
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stages"], serde_json::json!(["eval"]));
    assert!(manifest["inputs"]["detections.jsonl"].is_string());
    assert!(manifest["outputs"]["eval_report.json"].is_string());
}
