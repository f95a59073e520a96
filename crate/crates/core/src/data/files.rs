use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::fer::{parse_label, parse_pixels, pixel_line};
use super::{Dataset, Example, Provenance};
use crate::error::{Error, Result};

/// Writes the labels (header `emotion`) and the pixel rows (header
/// `pixels`, intensities 0..=255) as two line-aligned files.
pub fn split_label_pixel_files(
    dataset: &Dataset,
    labels_path: impl AsRef<Path>,
    pixels_path: impl AsRef<Path>,
) -> Result<()> {
    let (lp, pp) = (labels_path.as_ref(), pixels_path.as_ref());
    let lio = |e| Error::io(lp, e);
    let pio = |e| Error::io(pp, e);
    let mut labels = BufWriter::new(File::create(lp).map_err(lio)?);
    let mut pixels = BufWriter::new(File::create(pp).map_err(pio)?);
    writeln!(labels, "emotion").map_err(lio)?;
    writeln!(pixels, "pixels").map_err(pio)?;
    for ex in &dataset.examples {
        writeln!(labels, "{}", ex.label).map_err(lio)?;
        writeln!(pixels, "{}", pixel_line(ex)).map_err(pio)?;
    }
    labels.flush().map_err(lio)?;
    pixels.flush().map_err(pio)
}

fn data_lines(path: &Path, header: &str) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if first.trim_end_matches('\r') != header {
        return Err(Error::Data(format!(
            "{}: expected header `{header}`, found `{first}`",
            path.display()
        )));
    }
    lines
        .map(|l| {
            l.map(|s| s.trim_end_matches('\r').to_owned())
                .map_err(|e| Error::io(path, e))
        })
        .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
        .collect()
}

/// Inverse of [`split_label_pixel_files`].
pub fn recombine_label_pixel_files(
    labels_path: impl AsRef<Path>,
    pixels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let labels = data_lines(labels_path.as_ref(), "emotion")?;
    let pixels = data_lines(pixels_path.as_ref(), "pixels")?;
    if labels.len() != pixels.len() {
        return Err(Error::Data(format!(
            "{} labels but {} pixel rows",
            labels.len(),
            pixels.len()
        )));
    }
    let examples = labels
        .iter()
        .zip(&pixels)
        .enumerate()
        .map(|(i, (l, p))| Example::from_bytes(parse_label(l, i + 1)?, &parse_pixels(p, i + 1)?))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        examples,
        provenance: Provenance {
            source: Some(labels_path.as_ref().to_path_buf()),
            first_row: 0,
        },
    })
}
