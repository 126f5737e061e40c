//! Detection scoring: IoU, 11-point AP, mAP and precision/recall/F1, plus
//! the Mish activation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box, top-left corner plus size, px.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("box coordinates must be finite".into()));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box size must be positive, got {}x{}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Closed on all four edges.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: i64,
    pub class: String,
    #[serde(flatten)]
    pub bbox: BBox,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub frame: i64,
    pub class: String,
    #[serde(flatten)]
    pub bbox: BBox,
}

/// Greedy one-to-one matching in descending confidence: each detection
/// takes the unmatched ground-truth box of its frame with the highest IoU,
/// provided it reaches `iou_thresh`. Returns the TP flag per sorted
/// detection and the number of ground-truth boxes.
fn match_class(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    cls: &str,
    iou_thresh: f64,
    conf_thresh: f64,
) -> (Vec<bool>, usize) {
    let mut mine: Vec<&Detection> = dets
        .iter()
        .filter(|d| d.class == cls && d.conf >= conf_thresh)
        .collect();
    mine.sort_by(|a, b| b.conf.total_cmp(&a.conf));
    let truth: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.class == cls).collect();
    let mut matched = vec![false; truth.len()];
    let hits = mine
        .iter()
        .map(|d| {
            let best = truth
                .iter()
                .enumerate()
                .filter(|(i, g)| !matched[*i] && g.frame == d.frame)
                .map(|(i, g)| (i, iou(&d.bbox, &g.bbox)))
                .filter(|&(_, o)| o >= iou_thresh)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((i, _)) => {
                    matched[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (hits, truth.len())
}

/// Mean over recall levels 0, 0.1, …, 1 of the highest precision reached at
/// any operating point whose recall is at least that level. `None` when the
/// class has no ground truth.
pub fn ap_11point(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    cls: &str,
    iou_thresh: f64,
) -> Option<f64> {
    let (hits, n_gt) = match_class(dets, gts, cls, iou_thresh, f64::NEG_INFINITY);
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let curve: Vec<(f64, f64)> = hits
        .iter()
        .enumerate()
        .map(|(i, &hit)| {
            tp += usize::from(hit);
            (tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64)
        })
        .collect();
    let sum: f64 = (0..=10)
        .map(|k| {
            let r = k as f64 / 10.0;
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|&(_, p)| p)
                .fold(0.0, f64::max)
        })
        .sum();
    Some(sum / 11.0)
}

pub fn map_score(per_class: &BTreeMap<String, f64>) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::NoDefinedClasses);
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Counts after dropping detections below `conf_thresh`. Precision with no
/// detections and recall with no ground truth are reported as 0.
pub fn prf1(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    cls: &str,
    iou_thresh: f64,
    conf_thresh: f64,
) -> Prf1 {
    let (hits, n_gt) = match_class(dets, gts, cls, iou_thresh, conf_thresh);
    let tp = hits.iter().filter(|&&h| h).count() as f64;
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    let precision = ratio(tp, hits.len());
    let recall = ratio(tp, n_gt);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

/// `x · tanh(ln(1 + eˣ))` with the softplus taken as `x` above 20, where
/// `ln(1 + eˣ)` and `x` agree to double precision.
pub fn mish(x: f64) -> f64 {
    let softplus = if x > 20.0 { x } else { x.exp().ln_1p() };
    x * softplus.tanh()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// Absent for classes without ground truth.
    pub ap: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ground_truth: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_thresh: f64,
    pub conf_thresh: f64,
    pub classes: BTreeMap<String, ClassReport>,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// Scores every class that occurs in either input.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thresh: f64,
    conf_thresh: f64,
) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&iou_thresh) || !(0.0..=1.0).contains(&conf_thresh) {
        return Err(Error::InvalidParameter(format!(
            "thresholds must lie in [0, 1], got iou {iou_thresh}, conf {conf_thresh}"
        )));
    }
    let names: BTreeSet<&str> = dets
        .iter()
        .map(|d| d.class.as_str())
        .chain(gts.iter().map(|g| g.class.as_str()))
        .collect();
    let classes: BTreeMap<String, ClassReport> = names
        .into_iter()
        .map(|cls| {
            let p = prf1(dets, gts, cls, iou_thresh, conf_thresh);
            let report = ClassReport {
                ap: ap_11point(dets, gts, cls, iou_thresh),
                precision: p.precision,
                recall: p.recall,
                f1: p.f1,
                ground_truth: gts.iter().filter(|g| g.class == cls).count(),
                detections: dets.iter().filter(|d| d.class == cls).count(),
            };
            (cls.to_string(), report)
        })
        .collect();
    let defined: BTreeMap<String, f64> = classes
        .iter()
        .filter_map(|(k, c)| c.ap.map(|ap| (k.clone(), ap)))
        .collect();
    Ok(EvalReport {
        iou_thresh,
        conf_thresh,
        map: map_score(&defined)?,
        classes,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    frame: i64,
    class: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    conf: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthLine {
    frame: i64,
    class: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

/// serde_json's message without its "at line 1" suffix, which would clash
/// with the file line number.
fn json_message(e: &serde_json::Error) -> String {
    let text = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    match text.strip_suffix(&suffix) {
        Some(head) => format!("{head} (column {})", e.column()),
        None => text,
    }
}

fn read_jsonl<R: BufRead, L: serde::de::DeserializeOwned, T>(
    input: R,
    convert: impl Fn(L) -> Result<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::parse(n, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: L = serde_json::from_str(&line).map_err(|e| Error::parse(n, json_message(&e)))?;
        out.push(convert(parsed).map_err(|e| Error::parse(n, e.to_string()))?);
    }
    Ok(out)
}

pub fn read_detections_jsonl<R: BufRead>(input: R) -> Result<Vec<Detection>> {
    read_jsonl(input, |l: DetectionLine| {
        if !(0.0..=1.0).contains(&l.conf) {
            return Err(Error::InvalidParameter(format!(
                "confidence must lie in [0, 1], got {}",
                l.conf
            )));
        }
        Ok(Detection {
            frame: l.frame,
            class: l.class,
            bbox: BBox::new(l.x, l.y, l.w, l.h)?,
            conf: l.conf,
        })
    })
}

pub fn read_ground_truth_jsonl<R: BufRead>(input: R) -> Result<Vec<GroundTruthBox>> {
    read_jsonl(input, |l: TruthLine| {
        Ok(GroundTruthBox {
            frame: l.frame,
            class: l.class,
            bbox: BBox::new(l.x, l.y, l.w, l.h)?,
        })
    })
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(file))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    read_detections_jsonl(open(path)?).map_err(|e| e.at_path(path))
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthBox>> {
    let path = path.as_ref();
    read_ground_truth_jsonl(open(path)?).map_err(|e| e.at_path(path))
}

/// One compact JSON object per line, in input order.
pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::InvalidParameter(format!("serialization failed: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(crate::error::INPUT, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn det(frame: i64, cls: &str, bbox: BBox, conf: f64) -> Detection {
        Detection {
            frame,
            class: cls.into(),
            bbox,
            conf,
        }
    }

    fn gt(frame: i64, cls: &str, bbox: BBox) -> GroundTruthBox {
        GroundTruthBox {
            frame,
            class: cls.into(),
            bbox,
        }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(2.0, 2.0, 1.0, 1.0)), 0.0);
        assert_eq!(iou(&a, &b(1.0, 0.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &b(0.5, 0.0, 1.0, 1.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    fn two_gt_fixture() -> (Vec<Detection>, Vec<GroundTruthBox>) {
        let g1 = b(10.0, 10.0, 20.0, 20.0);
        let g2 = b(100.0, 100.0, 20.0, 20.0);
        let dets = vec![
            det(0, "car", g1, 0.9),
            det(0, "car", b(200.0, 10.0, 20.0, 20.0), 0.8),
            det(0, "car", g2, 0.7),
        ];
        (dets, vec![gt(0, "car", g1), gt(0, "car", g2)])
    }

    #[test]
    fn ap_examples() {
        let (dets, gts) = two_gt_fixture();
        let ap = ap_11point(&dets, &gts, "car", 0.5).unwrap();
        assert!((ap - 28.0 / 33.0).abs() < 1e-12);

        let one = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(ap_11point(&[det(1, "p", one, 0.5)], &[gt(1, "p", one)], "p", 0.5), Some(1.0));

        let miss = [det(1, "p", b(50.0, 50.0, 10.0, 10.0), 0.9)];
        assert_eq!(ap_11point(&miss, &[gt(1, "p", one)], "p", 0.5), Some(0.0));
        // Same box, wrong frame.
        assert_eq!(ap_11point(&[det(2, "p", one, 0.9)], &[gt(1, "p", one)], "p", 0.5), Some(0.0));
        assert_eq!(ap_11point(&dets, &gts, "bus", 0.5), None);
    }

    #[test]
    fn each_truth_box_matches_once() {
        let g = b(0.0, 0.0, 10.0, 10.0);
        let dets = [det(0, "c", g, 0.9), det(0, "c", g, 0.8)];
        let p = prf1(&dets, &[gt(0, "c", g)], "c", 0.5, 0.0);
        assert_eq!((p.precision, p.recall), (0.5, 1.0));
    }

    #[test]
    fn map_examples() {
        let m: BTreeMap<String, f64> = [("a".to_string(), 1.0), ("b".to_string(), 0.5)].into();
        assert_eq!(map_score(&m).unwrap(), 0.75);
        let single: BTreeMap<String, f64> = [("a".to_string(), 0.3)].into();
        assert_eq!(map_score(&single).unwrap(), 0.3);
        assert!(matches!(map_score(&BTreeMap::new()), Err(Error::NoDefinedClasses)));

        let twelve: BTreeMap<String, f64> =
            (0..12).map(|i| (format!("c{i:02}"), (i as f64 * 0.37).fract())).collect();
        let mut sum = 0.0;
        for v in twelve.values() {
            sum += v;
        }
        assert!((map_score(&twelve).unwrap() - sum / 12.0).abs() < 1e-15);
    }

    #[test]
    fn prf1_examples() {
        let boxes: Vec<BBox> = (0..4).map(|i| b(i as f64 * 50.0, 0.0, 20.0, 20.0)).collect();
        let gts: Vec<_> = boxes.iter().map(|&bx| gt(0, "c", bx)).collect();
        let perfect: Vec<_> = boxes.iter().map(|&bx| det(0, "c", bx, 0.9)).collect();
        let p = prf1(&perfect, &gts, "c", 0.5, 0.5);
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));

        let none = prf1(&[], &gts, "c", 0.5, 0.5);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));

        // 3 TP, 1 FP, 1 FN.
        let mut mixed: Vec<_> = boxes[..3].iter().map(|&bx| det(0, "c", bx, 0.9)).collect();
        mixed.push(det(0, "c", b(500.0, 500.0, 20.0, 20.0), 0.9));
        mixed.push(det(0, "c", boxes[3], 0.1));
        let p = prf1(&mixed, &gts, "c", 0.5, 0.5);
        assert_eq!((p.precision, p.recall, p.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn mish_values() {
        assert_eq!(mish(0.0), 0.0);
        assert!((mish(1.0) - 0.865_098_4).abs() < 1e-6);
        assert!((mish(20.0) - 20.0).abs() < 1e-6);
        assert!((mish(800.0) - 800.0).abs() < 1e-9);
        assert!(mish(-800.0).abs() < 1e-9);
        let mut prev = mish(0.0);
        let mut lowest = f64::INFINITY;
        for i in -20_000..=20_000 {
            let x = i as f64 * 1e-3;
            let m = mish(x);
            lowest = lowest.min(m);
            if x > 0.0 {
                assert!(m >= prev);
            }
            prev = m;
        }
        assert!(lowest >= -0.31, "minimum {lowest}");
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let text = "{\"frame\":3,\"class\":\"car\",\"x\":1.5,\"y\":2,\"w\":10,\"h\":5,\"conf\":0.75}\n\n\
                    {\"frame\":4,\"class\":\"bus\",\"x\":0,\"y\":0,\"w\":1,\"h\":1,\"conf\":1}\n";
        let dets = read_detections_jsonl(text.as_bytes()).unwrap();
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0], det(3, "car", b(1.5, 2.0, 10.0, 5.0), 0.75));

        let mut buf = Vec::new();
        write_jsonl(&mut buf, &dets).unwrap();
        assert_eq!(read_detections_jsonl(buf.as_slice()).unwrap(), dets);

        let bad = "{\"frame\":3,\"class\":\"car\",\"x\":1,\"y\":2,\"w\":10,\"h\":5,\"conf\":0.7}\n{\"frame\":3,\"class\":\"car\"\n";
        match read_detections_jsonl(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let neg = "{\"frame\":1,\"class\":\"car\",\"x\":1,\"y\":2,\"w\":-3,\"h\":5}\n";
        assert!(matches!(read_ground_truth_jsonl(neg.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let with_conf = "{\"frame\":1,\"class\":\"car\",\"x\":1,\"y\":2,\"w\":3,\"h\":5,\"conf\":0.5}\n";
        assert!(read_ground_truth_jsonl(with_conf.as_bytes()).is_err());
    }

    #[test]
    fn report_covers_every_class() {
        let (mut dets, mut gts) = two_gt_fixture();
        let p = b(300.0, 300.0, 10.0, 30.0);
        dets.push(det(1, "person", p, 0.6));
        gts.push(gt(1, "person", p));
        dets.push(det(1, "bike", p, 0.6));
        let r = evaluate(&dets, &gts, 0.5, 0.5).unwrap();
        assert_eq!(r.classes.len(), 3);
        assert_eq!(r.classes["bike"].ap, None);
        assert!((r.map - (28.0 / 33.0 + 1.0) / 2.0).abs() < 1e-15);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("mAP").is_some());
    }

    fn random_scene(seed: u64) -> (Vec<Detection>, Vec<GroundTruthBox>) {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for frame in 0..4 {
            for k in 0..3 {
                let g = b(k as f64 * 100.0, frame as f64 * 10.0, 30.0, 30.0);
                gts.push(gt(frame, "c", g));
                if next() < 0.7 {
                    let jitter = next() * 12.0;
                    dets.push(det(frame, "c", b(g.x + jitter, g.y, 30.0, 30.0), next()));
                }
            }
            for _ in 0..2 {
                dets.push(det(frame, "c", b(500.0 + next() * 50.0, 400.0, 20.0, 20.0), next()));
            }
        }
        (dets, gts)
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in -50.0f64..50.0, ay in -50.0f64..50.0, aw in 0.1f64..60.0, ah in 0.1f64..60.0,
            bx in -50.0f64..50.0, by in -50.0f64..50.0, bw in 0.1f64..60.0, bh in 0.1f64..60.0,
        ) {
            let (a, c) = (b(ax, ay, aw, ah), b(bx, by, bw, bh));
            let v = iou(&a, &c);
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, a == c);
        }

        #[test]
        fn ap_depends_only_on_ranking(seed in any::<u64>(), power in 0.2f64..5.0) {
            let (dets, gts) = random_scene(seed);
            let rescaled: Vec<_> = dets
                .iter()
                .map(|d| Detection { conf: d.conf.powf(power) * 0.5, ..d.clone() })
                .collect();
            prop_assert_eq!(ap_11point(&dets, &gts, "c", 0.5), ap_11point(&rescaled, &gts, "c", 0.5));
        }

        #[test]
        fn deleting_a_false_positive_never_hurts(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
            let (dets, gts) = random_scene(seed);
            let before = ap_11point(&dets, &gts, "c", 0.5).unwrap();
            let fps: Vec<usize> = dets
                .iter()
                .enumerate()
                .filter(|(_, d)| d.bbox.x >= 500.0)
                .map(|(i, _)| i)
                .collect();
            let drop = fps[pick.index(fps.len())];
            let fewer: Vec<_> = dets.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, d)| d.clone()).collect();
            let after = ap_11point(&fewer, &gts, "c", 0.5).unwrap();
            prop_assert!(after >= before - 1e-15);
        }
    }
}
