//! Regenerates the 10-frame synthetic fixture under `tests/fixtures/synthetic`.
//!
//! A conflict vehicle follows a left-turn arc across the camera frame while
//! the driver's gaze moves between zones of the vehicle as time to collision
//! falls. Everything is seeded, so reruns are byte-identical.
//!
//! ```text
//! cargo run -p coopercept --example make_fixture
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use coopercept_core::eval::{write_jsonl, BBox, Detection, GroundTruthBox};
use coopercept_core::track::io::write_rtk_csv;
use coopercept_core::track::RtkSample;
use coopercept_core::ImageBuffer;

const T0: i64 = 1_620_436_346_000;
const FRAMES: i64 = 10;
const FRAME_MS: i64 = 100;
const EYE_MS: i64 = 117;
const PX_PER_M: f64 = 20.0;
const PUPIL_R: f64 = 9.22;

/// Vehicle centre in camera pixels at `t` seconds after T0.
fn vehicle_center(t: f64) -> (f64, f64) {
    let angle = (-20.0 + 40.0 * t) * PI / 180.0;
    (240.0 + 150.0 * angle.sin(), 250.0 - 120.0 * angle.cos())
}

fn gap_m(t: f64) -> f64 {
    24.0 - 14.0 * t
}

fn closing_mps(t: f64) -> f64 {
    10.0 + 6.0 * t
}

/// Where the driver looks relative to the vehicle centre: above it while
/// the conflict is far, at the rear once it approaches, at the front when
/// it is near.
fn gaze_offset(t: f64) -> (f64, f64) {
    let ttc = gap_m(t) / closing_mps(t);
    if ttc > 2.0 {
        (0.0, -28.0)
    } else if ttc > 1.03 {
        (-20.0, 4.0)
    } else {
        (16.0, 2.0)
    }
}

fn camera_frame(center: (f64, f64)) -> ImageBuffer {
    let (vx, vy) = center;
    ImageBuffer::from_fn(480, 270, 3, |x, y, c| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let in_box = |bx: f64, by: f64, w: f64, h: f64| xf >= bx && xf < bx + w && yf >= by && yf < by + h;
        let color: [f64; 3] = if in_box(vx - 30.0, vy - 20.0, 60.0, 40.0) {
            let wheel = (yf > vy + 12.0) && ((xf - (vx - 18.0)).abs() < 6.0 || (xf - (vx + 18.0)).abs() < 6.0);
            if wheel {
                [20.0, 20.0, 20.0]
            } else {
                [40.0, 50.0, 140.0]
            }
        } else if in_box(30.0, 95.0, 80.0, 50.0) {
            [220.0, 180.0, 40.0]
        } else if in_box(400.0, 130.0, 12.0, 30.0) {
            [200.0, 80.0, 60.0]
        } else if y < 100 {
            [135.0, 170.0, 210.0]
        } else if (y / 6) % 2 == 0 && (236..244).contains(&x) {
            [235.0, 235.0, 235.0]
        } else {
            [90.0, 90.0, 95.0]
        };
        color[c]
    })
    .expect("valid dims")
}

/// Eye-tracker world view: the camera view scaled by 3 at offset (480, 10)
/// on a dark cabin background, with the tracker's red gaze marker.
fn scene_frame(camera: &ImageBuffer, gaze: (f64, f64)) -> ImageBuffer {
    ImageBuffer::from_fn(1920, 1080, 3, |x, y, c| {
        if (x as f64 - gaze.0).hypot(y as f64 - gaze.1) <= 35.0 {
            return [230.0, 20.0, 20.0][c];
        }
        let (cx, cy) = ((x as isize - 480) / 3, (y as isize - 10) / 3);
        if x >= 480 && y >= 10 && cx < 480 && cy < 270 {
            camera.get(cx as usize, cy as usize, c)
        } else {
            [30.0, 30.0, 34.0][c]
        }
    })
    .expect("valid dims")
}

/// Dark pupil disc on a lighter eye background, 4x4 supersampled at the rim.
fn eye_frame(cx: f64, cy: f64) -> ImageBuffer {
    let mut img = ImageBuffer::filled(1920, 1080, 1, 180.0).expect("valid dims");
    let reach = PUPIL_R + 2.0;
    let (x0, x1) = ((cx - reach).floor() as usize, (cx + reach).ceil() as usize);
    let (y0, y1) = ((cy - reach).floor() as usize, (cy + reach).ceil() as usize);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let mut inside = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let px = x as f64 + (sx as f64 + 0.5) / 4.0 - 0.5;
                    let py = y as f64 + (sy as f64 + 0.5) / 4.0 - 0.5;
                    inside += usize::from((px - cx).hypot(py - cy) <= PUPIL_R);
                }
            }
            let f = inside as f64 / 16.0;
            img.set(x, y, 0, 180.0 - f * 140.0);
        }
    }
    img
}

fn to_screen(p: (f64, f64)) -> (f64, f64) {
    (3.0 * p.0 + 480.0, 3.0 * p.1 + 10.0)
}

fn secs(utc_ms: i64) -> f64 {
    (utc_ms - T0) as f64 / 1000.0
}

fn main() -> anyhow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic");
    for sub in ["eye", "camera", "scene"] {
        let dir = root.join(sub);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(20210508);
    let gaze_noise = Normal::new(0.0, 1.0)?;

    // Gaze samples at the tracker cadence, in camera pixels.
    let mut gaze_samples: Vec<(i64, (f64, f64))> = Vec::new();
    let mut k = 0;
    loop {
        let left_ms = T0 - 50 + EYE_MS * k;
        let merged_ms = left_ms + 2;
        let t = secs(merged_ms);
        let (vx, vy) = vehicle_center(t);
        let (ox, oy) = gaze_offset(t);
        let cam = (
            vx + ox + gaze_noise.sample(&mut rng),
            vy + oy + gaze_noise.sample(&mut rng),
        );
        gaze_samples.push((merged_ms, cam));
        let (sx, sy) = to_screen(cam);
        eye_frame(sx - 1.5, sy + 0.5).save_png(root.join(format!("eye/{left_ms}_left.png")))?;
        eye_frame(sx + 1.5, sy - 0.5).save_png(root.join(format!("eye/{}_right.png", left_ms + 4)))?;
        if left_ms > T0 + FRAME_MS * (FRAMES - 1) {
            break;
        }
        k += 1;
    }

    let gaze_at = |utc: i64| -> (f64, f64) {
        let i = gaze_samples.partition_point(|s| s.0 <= utc) - 1;
        let (ta, a) = gaze_samples[i];
        let (tb, b) = gaze_samples[i + 1];
        let f = (utc - ta) as f64 / (tb - ta) as f64;
        (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1))
    };

    let mut index = String::from("frame_id,utc_ms,camera,scene\n");
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    let box_noise = Normal::new(0.0, 1.5)?;
    for frame in 0..FRAMES {
        let utc = T0 + FRAME_MS * frame;
        let t = secs(utc);
        let center = vehicle_center(t);
        let camera = camera_frame(center);
        let cam_name = format!("camera/{frame:06}.png");
        let scene_name = format!("scene/{frame:06}.png");
        camera.save_png(root.join(&cam_name))?;
        scene_frame(&camera, to_screen(gaze_at(utc))).save_png(root.join(&scene_name))?;
        writeln!(index, "{frame},{utc},{cam_name},{scene_name}")?;

        let truth = [
            ("car", BBox::new(center.0 - 30.0, center.1 - 20.0, 60.0, 40.0)?),
            ("bus", BBox::new(30.0, 95.0, 80.0, 50.0)?),
            ("pedestrian", BBox::new(400.0, 130.0, 12.0, 30.0)?),
        ];
        for (class, b) in truth {
            gts.push(GroundTruthBox { frame, class: class.into(), bbox: b });
            // The pedestrian is missed on every third frame.
            if class == "pedestrian" && frame % 3 == 2 {
                continue;
            }
            let jitter = |v: f64, rng: &mut ChaCha8Rng| v + box_noise.sample(rng);
            dets.push(Detection {
                frame,
                class: class.into(),
                bbox: BBox::new(jitter(b.x, &mut rng), jitter(b.y, &mut rng), b.w, b.h)?,
                conf: (rng.random_range(0.6..0.97f64) * 1000.0).round() / 1000.0,
            });
        }
        // A low-confidence false alarm on the road.
        if frame % 4 == 1 {
            dets.push(Detection {
                frame,
                class: "car".into(),
                bbox: BBox::new(300.0, 200.0, 40.0, 30.0)?,
                conf: 0.35,
            });
        }
    }
    fs::write(root.join("frames.csv"), index)?;
    let round = |b: BBox| BBox::new((b.x * 100.0).round() / 100.0, (b.y * 100.0).round() / 100.0, b.w, b.h);
    for d in &mut dets {
        d.bbox = round(d.bbox)?;
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &dets)?;
    fs::write(root.join("detections.jsonl"), buf)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &gts)?;
    fs::write(root.join("ground_truth.jsonl"), buf)?;

    let rtk: Vec<RtkSample> = (0..=20)
        .map(|i| {
            let utc_ms = T0 - 50 + 50 * i;
            let t = secs(utc_ms);
            let (x, y) = vehicle_center(t);
            let closing = closing_mps(t);
            RtkSample {
                utc_ms,
                rel_x_m: x / PX_PER_M,
                rel_y_m: y / PX_PER_M,
                ego_vy_mps: 0.6 * closing,
                obj_vy_mps: 0.4 * closing,
                gap_m: gap_m(t),
            }
        })
        .collect();
    let mut buf = Vec::new();
    write_rtk_csv(&mut buf, &rtk)?;
    fs::write(root.join("rtk.csv"), buf)?;

    println!("fixture written to {}", root.display());
    Ok(())
}
