//! Display PNG output. Raw floats are the source of truth; these images
//! are normalized by the 99th percentile so a single hot pixel cannot
//! blow out the scale.

use std::path::Path;

use anyhow::{Context, Result};
use image::{ImageBuffer, Luma, Rgb};
use lsplit_core::image::Image;

fn percentile_scale(values: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return 1.0;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((sorted.len() - 1) as f64 * 0.99).round() as usize;
    let p99 = sorted[idx];
    if p99 > 0.0 {
        p99
    } else {
        let max = *sorted.last().unwrap();
        if max > 0.0 {
            max
        } else {
            1.0
        }
    }
}

fn to_u8(v: f64, scale: f64) -> u8 {
    ((v / scale).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel image as an 8-bit PNG, normalized by the
/// 99th percentile over all channels.
pub fn write_display_png(path: &Path, img: &Image<f64>) -> Result<()> {
    let (h, w, ch) = img.dims();
    let scale = percentile_scale(img.data());
    match ch {
        1 => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    Luma([to_u8(img.at(y as usize, x as usize, 0), scale)])
                });
            buf.save(path)
        }
        3 => {
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    Rgb([
                        to_u8(img.at(y as usize, x as usize, 0), scale),
                        to_u8(img.at(y as usize, x as usize, 1), scale),
                        to_u8(img.at(y as usize, x as usize, 2), scale),
                    ])
                });
            buf.save(path)
        }
        other => anyhow::bail!("cannot display {other}-channel image"),
    }
    .with_context(|| format!("writing {}", path.display()))
}
