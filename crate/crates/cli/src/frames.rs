//! Camera frame index and eye-frame discovery.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub frame_id: i64,
    pub utc_ms: i64,
    pub camera: PathBuf,
    /// Eye-tracker scene frame at the same instant, if recorded.
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameIndex {
    pub frames: Vec<FrameEntry>,
}

#[derive(Deserialize)]
struct Row {
    frame_id: i64,
    utc_ms: i64,
    camera: String,
    scene: Option<String>,
}

impl FrameIndex {
    /// Reads `frame_id,utc_ms,camera,scene`; image paths are relative to the
    /// index file. Rows must be increasing in both id and time.
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("opening frame index {}", path.display()))?;
        let mut frames: Vec<FrameEntry> = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.with_context(|| format!("{}:{}", path.display(), i + 2))?;
            if let Some(prev) = frames.last() {
                if row.frame_id <= prev.frame_id || row.utc_ms <= prev.utc_ms {
                    bail!(
                        "{}:{}: frame ids and timestamps must be strictly increasing",
                        path.display(),
                        i + 2
                    );
                }
            }
            frames.push(FrameEntry {
                frame_id: row.frame_id,
                utc_ms: row.utc_ms,
                camera: base.join(row.camera),
                scene: row.scene.filter(|s| !s.is_empty()).map(|s| base.join(s)),
            });
        }
        Ok(Self { frames })
    }

    pub fn times(&self) -> Vec<i64> {
        self.frames.iter().map(|f| f.utc_ms).collect()
    }

    pub fn utc_of(&self) -> BTreeMap<i64, i64> {
        self.frames.iter().map(|f| (f.frame_id, f.utc_ms)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Eye {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EyeFrame {
    pub utc_ms: i64,
    pub eye: Eye,
    pub path: PathBuf,
}

/// Lists `<utc>_left`, `<utc>_right` and `<utc>` frames (`.png` or `.pgm`)
/// sorted by time; other files are ignored.
pub fn discover_eye_frames(dir: &Path) -> Result<Vec<EyeFrame>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading eye frame directory {}", dir.display()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if !matches!(path.extension().and_then(|e| e.to_str()), Some("png" | "pgm")) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let (utc, eye) = match stem.rsplit_once('_') {
            Some((utc, "left")) => (utc, Eye::Left),
            Some((utc, "right")) => (utc, Eye::Right),
            Some(_) => continue,
            None => (stem, Eye::Both),
        };
        let Ok(utc_ms) = utc.parse::<i64>() else {
            continue;
        };
        out.push(EyeFrame { utc_ms, eye, path });
    }
    out.sort();
    Ok(out)
}

/// What to detect for one output gaze sample.
#[derive(Debug, Clone, PartialEq)]
pub enum EyeJob {
    Pair { left: EyeFrame, right: EyeFrame },
    Single(EyeFrame),
}

/// Pairs every left frame with the nearest unused right frame. Unpaired
/// single-eye frames are dropped; combined frames stand alone.
pub fn plan_eye_jobs(frames: &[EyeFrame]) -> (Vec<EyeJob>, Vec<EyeFrame>) {
    let rights: Vec<&EyeFrame> = frames.iter().filter(|f| f.eye == Eye::Right).collect();
    let mut used = vec![false; rights.len()];
    let mut jobs = Vec::new();
    let mut unpaired = Vec::new();
    for f in frames {
        match f.eye {
            Eye::Both => jobs.push(EyeJob::Single(f.clone())),
            Eye::Left => {
                let best = rights
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !used[*i])
                    .min_by_key(|(_, r)| (r.utc_ms - f.utc_ms).abs());
                match best {
                    Some((i, r)) => {
                        used[i] = true;
                        jobs.push(EyeJob::Pair {
                            left: f.clone(),
                            right: (*r).clone(),
                        });
                    }
                    None => unpaired.push(f.clone()),
                }
            }
            Eye::Right => {}
        }
    }
    unpaired.extend(rights.iter().zip(&used).filter(|(_, u)| !**u).map(|(r, _)| (*r).clone()));
    (jobs, unpaired)
}
