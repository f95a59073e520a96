use std::fs;
use std::path::Path;

use super::{Dataset, IMAGE_SIDE};
use crate::error::{Error, Result};

/// A decoded binary (P5) graymap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

/// `P5\n{w} {h}\n255\n` followed by the row-major bytes.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "{}x{} image needs {} bytes, got {}",
            width,
            height,
            width * height,
            pixels.len()
        )));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a P5 graymap with maxval <= 255. Header comments are skipped.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit graymaps are supported"));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != width * height {
        return Err(bad("raster length does not match the header"));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        pixels: raster.to_vec(),
    })
}

/// Writes up to `limit` examples (all when `None`) as `{index:05}_{label}.pgm`
/// under `out_dir`, creating the directory. Returns the number written.
pub fn export_images(dataset: &Dataset, out_dir: impl AsRef<Path>, limit: Option<usize>) -> Result<usize> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = limit.unwrap_or(usize::MAX).min(dataset.len());
    for (i, ex) in dataset.examples.iter().take(n).enumerate() {
        let path = dir.join(format!("{i:05}_{}.pgm", ex.label));
        write_pgm(&path, IMAGE_SIDE, IMAGE_SIDE, &ex.to_bytes())?;
    }
    Ok(n)
}
