//! Gaze sample CSV: `UTC,Gaze_X,Gaze_Y,PupilArea`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::GazePoint;

pub const GAZE_CSV_HEADER: [&str; 4] = ["UTC", "Gaze_X", "Gaze_Y", "PupilArea"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    #[serde(rename = "UTC")]
    pub utc_ms: i64,
    #[serde(rename = "Gaze_X")]
    pub x: f64,
    #[serde(rename = "Gaze_Y")]
    pub y: f64,
    #[serde(rename = "PupilArea")]
    pub area: f64,
}

impl GazeRecord {
    pub fn gaze_point(&self) -> GazePoint {
        GazePoint {
            utc_ms: self.utc_ms,
            x: self.x,
            y: self.y,
        }
    }
}

/// Writes records with three decimals, the precision of the eye tracker's
/// own export.
pub fn write_gaze_csv<W: Write>(out: W, records: &[GazeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GAZE_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.utc_ms.to_string(),
            format!("{:.3}", r.x),
            format!("{:.3}", r.y),
            format!("{:.3}", r.area),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_gaze_csv<R: Read>(input: R) -> Result<Vec<GazeRecord>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(GAZE_CSV_HEADER) {
        return Err(Error::InvalidParameter(format!(
            "gaze CSV header must be {}, got {}",
            GAZE_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn load_gaze_csv(path: impl AsRef<Path>) -> Result<Vec<GazeRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_gaze_csv(file)
}

pub fn save_gaze_csv(path: impl AsRef<Path>, records: &[GazeRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_gaze_csv(std::io::BufWriter::new(file), records)
}
