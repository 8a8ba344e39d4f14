//! Measurement logs and result files.
//!
//! A measurement log is a CSV with header `t,Fx,Fy,Mz` and optionally the
//! true contact `cx,cy`, all in SI units. Rows must have finite values and
//! strictly increasing `t`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{ContactPoint, Vec2, Wrench};
use crate::sim::SimSample;

pub const MEASUREMENT_HEADER: [&str; 4] = ["t", "Fx", "Fy", "Mz"];
pub const TRUTH_COLUMNS: [&str; 2] = ["cx", "cy"];

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub wrench: Wrench,
    pub truth: Option<ContactPoint>,
}

/// Reads a measurement log. Errors name the file line of the first bad row.
pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    let file = File::open(path)?;
    parse_measurements(file, path)
}

pub fn parse_measurements<R: Read>(input: R, path: &Path) -> Result<Vec<Measurement>> {
    let data_err = |row: usize, msg: String| Error::Data { path: path.to_path_buf(), row, msg };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> =
        rdr.headers().map_err(|e| data_err(1, e.to_string()))?.iter().map(str::to_string).collect();
    let has_truth = match header.len() {
        4 => false,
        6 => true,
        n => return Err(data_err(1, format!("expected 4 or 6 columns, found {n}"))),
    };
    let expected: Vec<&str> = MEASUREMENT_HEADER.iter().chain(TRUTH_COLUMNS.iter()).copied().collect();
    if header.iter().zip(&expected).any(|(h, e)| h != e) {
        return Err(data_err(1, format!("header must be t,Fx,Fy,Mz[,cx,cy], found {}", header.join(","))));
    }

    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| data_err(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(data_err(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let mut v = [0.0f64; 6];
        for (k, field) in rec.iter().enumerate() {
            v[k] = field.parse().map_err(|_| data_err(line, format!("column {}: cannot parse {field:?}", header[k])))?;
            if !v[k].is_finite() {
                return Err(data_err(line, format!("column {}: value is not finite", header[k])));
            }
        }
        if !(v[0] > last_t) {
            return Err(data_err(line, format!("t = {} does not increase", v[0])));
        }
        last_t = v[0];
        out.push(Measurement {
            wrench: Wrench::new(v[0], v[1], v[2], v[3]),
            truth: has_truth.then(|| Vec2::new(v[4], v[5])),
        });
    }
    Ok(out)
}

pub fn write_measurements<W: Write>(mut out: W, rows: &[Measurement]) -> Result<()> {
    let with_truth = rows.first().is_some_and(|r| r.truth.is_some());
    if with_truth {
        writeln!(out, "t,Fx,Fy,Mz,cx,cy")?;
    } else {
        writeln!(out, "t,Fx,Fy,Mz")?;
    }
    for r in rows {
        let w = &r.wrench;
        write!(out, "{:.12e},{:.12e},{:.12e},{:.12e}", w.t, w.force.x, w.force.y, w.moment)?;
        match (with_truth, r.truth) {
            (true, Some(c)) => writeln!(out, ",{:.12e},{:.12e}", c.x, c.y)?,
            (false, _) => writeln!(out)?,
            (true, None) => return Err(Error::config("every row needs truth columns once the first has them")),
        }
    }
    Ok(())
}

impl From<&SimSample> for Measurement {
    fn from(s: &SimSample) -> Self {
        Self { wrench: s.wrench, truth: Some(s.truth.c_true) }
    }
}

pub fn write_truth<W: Write>(mut out: W, samples: &[SimSample]) -> Result<()> {
    writeln!(out, "t,cx,cy,fx_true,fy_true,theta_perp")?;
    for s in samples {
        let tr = &s.truth;
        writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            tr.t, tr.c_true.x, tr.c_true.y, tr.f_true.x, tr.f_true.y, tr.theta_perp
        )?;
    }
    Ok(())
}

/// Writes a file by filling a sibling temporary and renaming it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
