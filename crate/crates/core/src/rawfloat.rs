//! Raw float interchange format for decompositions.
//!
//! Layout: magic `LSPLIT01`, then u32 little-endian (m, h, w, channels),
//! then one row-major, channel-interleaved 32-bit little-endian float
//! image per frame, frames concatenated in order. Bit-exact by design:
//! this is the source of truth the display PNGs are derived from.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"LSPLIT01";

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadRawFile {
        file: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes a stack of same-shaped images. Values are narrowed to f32.
pub fn write_raw<T: Scalar>(path: &Path, images: &[Image<T>]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidArgument(
            "raw file needs at least one image".into(),
        ));
    }
    let (h, w, ch) = images[0].dims();
    for img in images {
        if img.dims() != (h, w, ch) {
            return Err(Error::ShapeMismatch(
                "raw file frames must share dimensions".into(),
            ));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |buf: &[u8]| out.write_all(buf).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    for v in [images.len() as u32, h as u32, w as u32, ch as u32] {
        write(&v.to_le_bytes())?;
    }
    for img in images {
        for v in img.data() {
            write(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a stack written by [`write_raw`].
pub fn read_raw<T: Scalar>(path: &Path) -> Result<Vec<Image<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(bad(path, format!("bad magic {magic:?}")));
    }
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    let read_u32 =
        |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (m, h, w, ch) = (read_u32(0), read_u32(1), read_u32(2), read_u32(3));
    if m == 0 || h == 0 || w == 0 || ch == 0 {
        return Err(bad(
            path,
            format!("degenerate header m={m} h={h} w={w} ch={ch}"),
        ));
    }
    let per_image = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(ch))
        .ok_or_else(|| bad(path, "header overflows"))?;
    let mut images = Vec::with_capacity(m);
    let mut buf = vec![0u8; per_image * 4];
    for i in 0..m {
        input
            .read_exact(&mut buf)
            .map_err(|_| bad(path, format!("truncated at frame {i} of {m}")))?;
        let data: Vec<T> = buf
            .chunks_exact(4)
            .map(|b| T::of_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        images.push(Image::from_vec(h, w, ch, data));
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad(path, "trailing bytes after last frame"));
    }
    Ok(images)
}
