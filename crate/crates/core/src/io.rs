//! CSV formatting and series files with header `t,x,v`.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::SeriesRecord;

#[derive(Debug, Error)]
pub enum SeriesIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("series file has no `x` column")]
    MissingColumn,
    #[error("row {row}: cannot parse `{value}` as an integer count")]
    BadCount { row: usize, value: String },
}

/// Formats `x` with 12 significant digits, like C's `%.12g`.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..DIGITS).contains(&exp) {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_series<W: Write>(out: W, records: &[SeriesRecord]) -> Result<(), SeriesIoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "v"])?;
    for r in records {
        w.write_record([r.t.to_string(), r.x.to_string(), fmt_sig(r.v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `x` column of a CSV file with a header row. Other columns are
/// ignored, so both simulator output and bare count files are accepted.
pub fn read_counts<R: Read>(input: R) -> Result<Vec<i64>, SeriesIoError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let col = r
        .headers()?
        .iter()
        .position(|h| h == "x")
        .ok_or(SeriesIoError::MissingColumn)?;
    let mut xs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(col).unwrap_or("");
        let x = raw.parse().map_err(|_| SeriesIoError::BadCount {
            row: i + 1,
            value: raw.to_string(),
        })?;
        xs.push(x);
    }
    Ok(xs)
}

pub fn read_counts_file(path: &Path) -> Result<Vec<i64>, SeriesIoError> {
    read_counts(std::fs::File::open(path)?)
}
