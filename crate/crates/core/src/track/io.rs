//! RTK log and trajectory CSV files.

use std::io::{Read, Write};
use std::path::Path;

use super::{RtkSample, Source, TrackPoint, Trajectory};
use crate::error::{Error, Result};

pub const RTK_CSV_HEADER: [&str; 6] = [
    "utc_ms",
    "rel_x_m",
    "rel_y_m",
    "ego_vy_mps",
    "obj_vy_mps",
    "gap_m",
];

pub const TRAJECTORY_CSV_HEADER: [&str; 4] = ["utc_ms", "x_px", "y_px", "source"];

fn check_header<R: Read>(r: &mut csv::Reader<R>, expected: &[&str], what: &str) -> Result<()> {
    let headers = r.headers()?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::InvalidParameter(format!(
            "{what} header must be {}, got {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

pub fn read_rtk_csv<R: Read>(input: R) -> Result<Vec<RtkSample>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut r, &RTK_CSV_HEADER, "RTK CSV")?;
    let rows: Vec<RtkSample> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let times: Vec<i64> = rows.iter().map(|s| s.utc_ms).collect();
    crate::gaze::check_increasing(&times, "RTK rows")?;
    Ok(rows)
}

pub fn load_rtk_csv(path: impl AsRef<Path>) -> Result<Vec<RtkSample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rtk_csv(file).map_err(|e| e.at_path(path))
}

pub fn write_rtk_csv<W: Write>(out: W, rows: &[RtkSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Writes several trajectories into one long-format table with four
/// decimals per coordinate.
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[&Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_CSV_HEADER)?;
    for t in trajectories {
        for p in t.points() {
            w.write_record([
                p.utc_ms.to_string(),
                format!("{:.4}", p.x),
                format!("{:.4}", p.y),
                t.source().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_trajectories_csv(path: impl AsRef<Path>, trajectories: &[&Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectories_csv(std::io::BufWriter::new(file), trajectories)
}

/// Splits a long-format table back into per-source trajectories, in the
/// order the sources first appear.
pub fn read_trajectories_csv<R: Read>(input: R) -> Result<Vec<Trajectory>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut r, &TRAJECTORY_CSV_HEADER, "trajectory CSV")?;
    let mut groups: Vec<(Source, Vec<TrackPoint>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| -> Result<&str> {
            rec.get(k).ok_or_else(|| Error::parse(line, "missing column"))
        };
        let num = |k: usize| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|e| Error::parse(line, format!("{}: {e}", TRAJECTORY_CSV_HEADER[k])))
        };
        let utc_ms: i64 = field(0)?
            .parse()
            .map_err(|e| Error::parse(line, format!("utc_ms: {e}")))?;
        let source: Source = field(3)?
            .parse()
            .map_err(|e: Error| Error::parse(line, e.to_string()))?;
        let point = TrackPoint {
            utc_ms,
            x: num(1)?,
            y: num(2)?,
        };
        match groups.iter_mut().find(|(s, _)| *s == source) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((source, vec![point])),
        }
    }
    groups
        .into_iter()
        .map(|(s, pts)| Trajectory::new(s, pts))
        .collect()
}
