use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Example, Provenance, IMAGE_PIXELS};
use crate::error::{Error, Result};

/// Parses whitespace-separated 0..=255 intensities.
pub(crate) fn parse_pixels(field: &str, row: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(IMAGE_PIXELS);
    for tok in field.split_ascii_whitespace() {
        let v: u8 = tok.parse().map_err(|_| Error::Row {
            row,
            message: format!("pixel `{tok}` is not an integer in 0..=255"),
        })?;
        out.push(v);
    }
    if out.len() != IMAGE_PIXELS {
        return Err(Error::Row {
            row,
            message: format!("expected {IMAGE_PIXELS} pixels, found {}", out.len()),
        });
    }
    Ok(out)
}

pub(crate) fn parse_label(field: &str, row: usize) -> Result<u8> {
    let label: i64 = field.trim().parse().map_err(|_| Error::Row {
        row,
        message: format!("label `{field}` is not an integer"),
    })?;
    if !(0..=6).contains(&label) {
        return Err(Error::Row {
            row,
            message: format!("label {label} outside 0..=6"),
        });
    }
    Ok(label as u8)
}

/// Reads an `emotion,pixels[,Usage]` CSV from any reader. Rows are numbered
/// from 1 after the header in error messages; a trailing `Usage` column is
/// ignored.
pub fn read_fer_csv<R: Read>(reader: R) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.len() < 2 || names[0] != "emotion" || names[1] != "pixels" {
        return Err(Error::Data(format!(
            "header must start with `emotion,pixels`, found `{}`",
            names.join(",")
        )));
    }
    let mut examples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::Row {
                row,
                message: format!("expected at least 2 fields, found {}", record.len()),
            });
        }
        let label = parse_label(&record[0], row)?;
        let pixels = parse_pixels(&record[1], row)?;
        examples.push(Example::from_bytes(label, &pixels)?);
    }
    Ok(examples)
}

pub fn parse_fer_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(Dataset {
        examples: read_fer_csv(std::io::BufReader::new(file))?,
        provenance: Provenance {
            source: Some(path.to_path_buf()),
            first_row: 0,
        },
    })
}

pub(crate) fn pixel_line(ex: &Example) -> String {
    let mut line = String::with_capacity(IMAGE_PIXELS * 4);
    for (i, b) in ex.to_bytes().iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        line.push_str(&b.to_string());
    }
    line
}

/// Writes `dataset` as an `emotion,pixels` CSV (LF line endings).
pub fn write_fer_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "emotion,pixels").map_err(io)?;
    for ex in &dataset.examples {
        writeln!(w, "{},{}", ex.label, pixel_line(ex)).map_err(io)?;
    }
    w.flush().map_err(io)
}
