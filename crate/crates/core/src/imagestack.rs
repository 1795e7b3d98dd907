//! Sequence loading and log-domain preprocessing.
//!
//! A sequence is a stack of co-registered RGB frames of one scene under
//! changing illumination, with per-frame validity masks. Everything the
//! loss terms consume (log frames, luminance weights, bilateral features,
//! image pyramid) is derived here, once, ahead of optimization.
//!
//! Pixel values are treated as linear intensities; no gamma handling is
//! applied. Feed linearized inputs if the source material is encoded.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

/// Exponent applied to pixel luminance for the reconstruction weights.
pub const LUM_WEIGHT_EXPONENT: f64 = 1.0 / 8.0;

/// Number of pyramid scales used by the shading smoothness term.
pub const PYRAMID_LEVELS: usize = 4;

/// Co-registered RGB frames in [0,1] with per-frame validity masks.
#[derive(Debug, Clone)]
pub struct ImageSequence<T> {
    frames: Vec<Image<T>>,
    masks: Vec<Mask>,
    sequence_id: String,
}

impl<T: Scalar> ImageSequence<T> {
    /// Validates the sequence invariants: matching dimensions, finite
    /// pixel values within [0,1], three channels per frame.
    pub fn new(
        frames: Vec<Image<T>>,
        masks: Vec<Mask>,
        sequence_id: impl Into<String>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument(
                "sequence needs at least one frame".into(),
            ));
        }
        if frames.len() != masks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} frames but {} masks",
                frames.len(),
                masks.len()
            )));
        }
        let (h, w, ch) = frames[0].dims();
        if ch != 3 {
            return Err(Error::ShapeMismatch(format!(
                "frames must be RGB, got {ch} channels"
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.dims() != (h, w, ch) {
                return Err(Error::ShapeMismatch(format!(
                    "frame {i} is {}x{}, expected {w}x{h}",
                    f.w(),
                    f.h()
                )));
            }
            for &v in f.data() {
                if !v.is_finite() || v < T::zero() || v > T::one() {
                    return Err(Error::InvalidArgument(format!(
                        "frame {i} has pixel value {v} outside [0,1]"
                    )));
                }
            }
        }
        for (i, m) in masks.iter().enumerate() {
            if (m.h(), m.w()) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "mask {i} is {}x{}, expected {w}x{h}",
                    m.w(),
                    m.h()
                )));
            }
        }
        Ok(Self {
            frames,
            masks,
            sequence_id: sequence_id.into(),
        })
    }

    #[inline]
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.frames[0].h()
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.frames[0].w()
    }
    #[inline]
    pub fn frames(&self) -> &[Image<T>] {
        &self.frames
    }
    #[inline]
    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }
    #[inline]
    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }
}

/// One pyramid scale: linear-domain frames, grayscale log intensity, masks.
#[derive(Debug, Clone)]
pub struct PyramidLevel<T> {
    pub h: usize,
    pub w: usize,
    /// Linear-domain RGB frames at this scale (2x2 pooled from the scale above).
    pub linear: Vec<Image<T>>,
    /// log(max(lum, eps_img)) of the linear frames; lum = (R+G+B)/3.
    pub log_gray: Vec<Image<T>>,
    /// Conservative masks: a coarse pixel is valid iff all children are valid.
    pub masks: Vec<Mask>,
}

/// Log-domain view of a sequence plus everything the losses precompute.
#[derive(Debug, Clone)]
pub struct LogStack<T> {
    sequence_id: String,
    m: usize,
    h: usize,
    w: usize,
    eps_img: f64,
    /// log(max(I, eps_img)) per frame, RGB.
    pub log_frames: Vec<Image<T>>,
    /// Luminance weights L = max(lum, eps_img)^(1/8), single channel.
    pub lum_weights: Vec<Image<T>>,
    /// Per-pixel 5-vectors (x, y, intensity, c1, c2) as a 5-channel image per frame.
    pub features: Vec<Image<T>>,
    /// Scales 1..=4; `levels[0]` is full resolution.
    pub levels: Vec<PyramidLevel<T>>,
}

impl<T: Scalar> LogStack<T> {
    #[inline]
    pub fn frame_count(&self) -> usize {
        self.m
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }
    #[inline]
    pub fn eps_img(&self) -> f64 {
        self.eps_img
    }
    #[inline]
    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }
    #[inline]
    pub fn masks(&self) -> &[Mask] {
        &self.levels[0].masks
    }

    /// Per-level images and masks for scale `level` in 1..=4.
    pub fn level(&self, level: usize) -> Result<&PyramidLevel<T>> {
        if level == 0 || level > self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "pyramid level {level} outside 1..={}",
                self.levels.len()
            )));
        }
        Ok(&self.levels[level - 1])
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png") | Some("jpg") | Some("jpeg")
    )
}

fn decode_rgb<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let dynimg = image::open(path).map_err(|source| Error::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    // Going through rgb16 keeps 8-bit inputs exact: v*257/65535 == v/255.
    let rgb = dynimg.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = Vec::with_capacity(h * w * 3);
    for px in rgb.pixels() {
        for c in 0..3 {
            data.push(T::of_f64(px0_to_unit(px.0[c])));
        }
    }
    Ok(Image::from_vec(h, w, 3, data))
}

#[inline]
fn px0_to_unit(v: u16) -> f64 {
    v as f64 / 65535.0
}

fn decode_mask(path: &Path) -> Result<Mask> {
    let dynimg = image::open(path).map_err(|source| Error::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = dynimg.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut data = Vec::with_capacity(h * w);
    for px in gray.pixels() {
        data.push(px.0[0] > 127);
    }
    Ok(Mask::from_vec(h, w, data))
}

/// Loads a sequence from a directory of PNG/JPEG frames, sorted
/// lexicographically by filename. Masks, when a directory is given, are
/// matched per frame by filename stem; frames without a mask get an
/// all-valid one.
pub fn load_sequence<T: Scalar>(
    frame_dir: &Path,
    mask_dir: Option<&Path>,
) -> Result<ImageSequence<T>> {
    let mut frame_paths: Vec<PathBuf> = std::fs::read_dir(frame_dir)
        .map_err(|e| Error::io(frame_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    frame_paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if frame_paths.is_empty() {
        return Err(Error::EmptyDirectory(frame_dir.to_path_buf()));
    }

    let mut frames = Vec::with_capacity(frame_paths.len());
    let mut masks = Vec::with_capacity(frame_paths.len());
    let mut expect: Option<(usize, usize)> = None;
    for path in &frame_paths {
        let img = decode_rgb::<T>(path)?;
        let (h, w, _) = img.dims();
        match expect {
            None => expect = Some((h, w)),
            Some((eh, ew)) if (eh, ew) != (h, w) => {
                return Err(Error::DimensionMismatch {
                    file: path.clone(),
                    expect_w: ew,
                    expect_h: eh,
                    found_w: w,
                    found_h: h,
                })
            }
            _ => {}
        }

        let mask = match mask_dir {
            Some(dir) => match find_mask_for(dir, path) {
                Some(mp) => {
                    let m = decode_mask(&mp)?;
                    if (m.h(), m.w()) != (h, w) {
                        return Err(Error::DimensionMismatch {
                            file: mp,
                            expect_w: w,
                            expect_h: h,
                            found_w: m.w(),
                            found_h: m.h(),
                        });
                    }
                    m
                }
                None => Mask::all_valid(h, w),
            },
            None => Mask::all_valid(h, w),
        };
        frames.push(img);
        masks.push(mask);
    }

    let id = frame_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".to_string());
    ImageSequence::new(frames, masks, id)
}

/// Loads one RGB image into [0,1] (8- and 16-bit integer inputs map linearly).
pub fn load_rgb_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    decode_rgb(path)
}

/// Loads one image as a single grayscale channel in [0,1].
pub fn load_gray_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let rgb = decode_rgb::<T>(path)?;
    let (h, w, _) = rgb.dims();
    Ok(Image::from_fn(h, w, 1, |y, x, _| {
        T::of_f64(lum3(
            rgb.at(y, x, 0).as_f64(),
            rgb.at(y, x, 1).as_f64(),
            rgb.at(y, x, 2).as_f64(),
        ))
    }))
}

/// Loads a validity mask: single-channel image, value > 127 means valid.
pub fn load_mask_image(path: &Path) -> Result<Mask> {
    decode_mask(path)
}

fn find_mask_for(mask_dir: &Path, frame_path: &Path) -> Option<PathBuf> {
    let stem = frame_path.file_stem()?;
    for ext in ["png", "jpg", "jpeg"] {
        let candidate = mask_dir.join(Path::new(stem)).with_extension(ext);
        if candidate.is_file() {
            return Some(candidate);
        }
    }
    None
}

#[inline]
fn lum3(r: f64, g: f64, b: f64) -> f64 {
    (r + g + b) / 3.0
}

/// Per-pixel bilateral features (x, y, intensity, c1, c2) from a linear RGB frame.
///
/// Intensity is (R+G+B)/3; c1 = R/(R+G+B) and c2 = G/(R+G+B). A zero-sum
/// pixel gets the neutral chromaticity (1/3, 1/3).
pub fn features_from_linear<T: Scalar>(linear: &Image<T>) -> Image<T> {
    let (h, w, ch) = linear.dims();
    assert_eq!(ch, 3);
    Image::from_fn(h, w, 5, |y, x, c| {
        let r = linear.at(y, x, 0).as_f64();
        let g = linear.at(y, x, 1).as_f64();
        let b = linear.at(y, x, 2).as_f64();
        let sum = r + g + b;
        let v = match c {
            0 => x as f64,
            1 => y as f64,
            2 => lum3(r, g, b),
            3 => {
                if sum > 0.0 {
                    r / sum
                } else {
                    1.0 / 3.0
                }
            }
            _ => {
                if sum > 0.0 {
                    g / sum
                } else {
                    1.0 / 3.0
                }
            }
        };
        T::of_f64(v)
    })
}

/// One 2x2 pooling step in the linear domain with conservative masks.
///
/// Odd dimensions pad by edge replication (coordinates clamp). Values
/// average the valid children; a coarse pixel is valid only when every
/// child inside the image is valid.
pub fn pool2_linear<T: Scalar>(img: &Image<T>, mask: &Mask) -> (Image<T>, Mask) {
    let (h, w, ch) = img.dims();
    let h2 = h.div_ceil(2);
    let w2 = w.div_ceil(2);
    let mut out = Image::zeros(h2, w2, ch);
    let mut out_mask = Mask::all_valid(h2, w2);
    for yy in 0..h2 {
        for xx in 0..w2 {
            let mut all_valid = true;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let cy = (2 * yy + dy).min(h - 1);
                let cx = (2 * xx + dx).min(w - 1);
                all_valid &= mask.valid(cy, cx);
            }
            out_mask.set(yy, xx, all_valid);
            for c in 0..ch {
                let mut sum = 0.0;
                let mut sum_valid = 0.0;
                let mut n_valid = 0usize;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let cy = (2 * yy + dy).min(h - 1);
                    let cx = (2 * xx + dx).min(w - 1);
                    let v = img.at(cy, cx, c).as_f64();
                    sum += v;
                    if mask.valid(cy, cx) {
                        sum_valid += v;
                        n_valid += 1;
                    }
                }
                let v = if n_valid > 0 {
                    sum_valid / n_valid as f64
                } else {
                    sum / 4.0
                };
                out.set(yy, xx, c, T::of_f64(v));
            }
        }
    }
    (out, out_mask)
}

/// Builds the log-domain stack: log frames, luminance weights, features,
/// and the 4-scale pyramid.
pub fn to_log_stack<T: Scalar>(seq: &ImageSequence<T>, eps_img: f64) -> Result<LogStack<T>> {
    if !(eps_img > 0.0 && eps_img <= 0.1) {
        return Err(Error::InvalidArgument(format!(
            "eps_img must lie in (0, 0.1], got {eps_img}"
        )));
    }
    let m = seq.frame_count();
    let (h, w) = (seq.h(), seq.w());

    let log_frames: Vec<Image<T>> = seq
        .frames()
        .iter()
        .map(|f| f.map(|v| T::of_f64(v.as_f64().max(eps_img).ln())))
        .collect();

    // Luminance from the unclamped pixels, floored at eps_img so the
    // weights stay strictly positive.
    let lum_weights: Vec<Image<T>> = seq
        .frames()
        .iter()
        .map(|f| {
            Image::from_fn(h, w, 1, |y, x, _| {
                let lum = lum3(
                    f.at(y, x, 0).as_f64(),
                    f.at(y, x, 1).as_f64(),
                    f.at(y, x, 2).as_f64(),
                );
                T::of_f64(lum.max(eps_img).powf(LUM_WEIGHT_EXPONENT))
            })
        })
        .collect();

    let features: Vec<Image<T>> = seq.frames().iter().map(features_from_linear).collect();

    let log_gray_of = |linear: &Image<T>| -> Image<T> {
        Image::from_fn(linear.h(), linear.w(), 1, |y, x, _| {
            let lum = lum3(
                linear.at(y, x, 0).as_f64(),
                linear.at(y, x, 1).as_f64(),
                linear.at(y, x, 2).as_f64(),
            );
            T::of_f64(lum.max(eps_img).ln())
        })
    };

    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    let mut cur_linear: Vec<Image<T>> = seq.frames().to_vec();
    let mut cur_masks: Vec<Mask> = seq.masks().to_vec();
    for level in 0..PYRAMID_LEVELS {
        if level > 0 {
            let pooled: Vec<(Image<T>, Mask)> = cur_linear
                .iter()
                .zip(cur_masks.iter())
                .map(|(img, msk)| pool2_linear(img, msk))
                .collect();
            cur_linear = pooled.iter().map(|(i, _)| i.clone()).collect();
            cur_masks = pooled.into_iter().map(|(_, m)| m).collect();
        }
        let log_gray = cur_linear.iter().map(&log_gray_of).collect();
        levels.push(PyramidLevel {
            h: cur_linear[0].h(),
            w: cur_linear[0].w(),
            linear: cur_linear.clone(),
            log_gray,
            masks: cur_masks.clone(),
        });
    }

    Ok(LogStack {
        sequence_id: seq.sequence_id().to_string(),
        m,
        h,
        w,
        eps_img,
        log_frames,
        lum_weights,
        features,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_frame(h: usize, w: usize, v: f64) -> Image<f64> {
        Image::constant(h, w, 3, v)
    }

    fn seq_of(frames: Vec<Image<f64>>) -> ImageSequence<f64> {
        let masks = frames
            .iter()
            .map(|f| Mask::all_valid(f.h(), f.w()))
            .collect();
        ImageSequence::new(frames, masks, "test").unwrap()
    }

    #[test]
    fn identity_pixel_logs_to_zero_with_unit_weight() {
        let seq = seq_of(vec![gray_frame(2, 2, 1.0)]);
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        assert_eq!(stack.log_frames[0].at(0, 0, 0), 0.0);
        assert_eq!(stack.log_frames[0].at(1, 1, 2), 0.0);
        assert_eq!(stack.lum_weights[0].at(0, 0, 0), 1.0);
    }

    #[test]
    fn luminance_weight_is_eighth_root() {
        let v = 0.5f64.powi(8);
        let seq = seq_of(vec![gray_frame(1, 1, v)]);
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        let l = stack.lum_weights[0].at(0, 0, 0);
        assert!((l - 0.5).abs() < 1e-12, "expected 0.5, got {l}");
    }

    #[test]
    fn black_pixel_clamps_to_eps_floor() {
        let seq = seq_of(vec![gray_frame(1, 1, 0.0)]);
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        for c in 0..3 {
            let v = stack.log_frames[0].at(0, 0, c);
            assert!((v - 1e-4f64.ln()).abs() < 1e-12);
        }
        assert!(stack.log_frames[0].is_finite());
        // weights stay in (0, 1]
        let l = stack.lum_weights[0].at(0, 0, 0);
        assert!(l > 0.0 && l <= 1.0);
    }

    #[test]
    fn eps_img_out_of_range_is_rejected() {
        let seq = seq_of(vec![gray_frame(1, 1, 0.5)]);
        assert!(to_log_stack(&seq, 0.0).is_err());
        assert!(to_log_stack(&seq, 0.2).is_err());
    }

    #[test]
    fn pooling_of_constant_is_constant() {
        let img = gray_frame(2, 2, 0.7);
        let (out, mask) = pool2_linear(&img, &Mask::all_valid(2, 2));
        assert_eq!(out.dims(), (1, 1, 3));
        assert!((out.at(0, 0, 0) - 0.7).abs() < 1e-15);
        assert!(mask.valid(0, 0));
    }

    #[test]
    fn pooling_mask_is_conservative() {
        let img = gray_frame(2, 2, 0.7);
        let mut mask = Mask::all_valid(2, 2);
        mask.set(1, 0, false);
        let (_, out_mask) = pool2_linear(&img, &mask);
        assert!(!out_mask.valid(0, 0));
    }

    #[test]
    fn pooling_ramp_matches_block_mean_oracle() {
        // 4x4 linear ramp; oracle = direct mean over each 2x2 block.
        let img = Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64 / 16.0);
        let (out, _) = pool2_linear(&img, &Mask::all_valid(4, 4));
        for yy in 0..2 {
            for xx in 0..2 {
                let mut oracle = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        oracle += img.at(2 * yy + dy, 2 * xx + dx, 0);
                    }
                }
                oracle /= 4.0;
                assert!((out.at(yy, xx, 0) - oracle).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pyramid_dims_follow_ceil_halving() {
        let seq = seq_of(vec![gray_frame(13, 9, 0.5), gray_frame(13, 9, 0.6)]);
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        let expect = [(13, 9), (7, 5), (4, 3), (2, 2)];
        for (l, (eh, ew)) in expect.iter().enumerate() {
            let lvl = stack.level(l + 1).unwrap();
            assert_eq!((lvl.h, lvl.w), (*eh, *ew));
        }
        assert!(stack.level(0).is_err());
        assert!(stack.level(5).is_err());
    }

    #[test]
    fn pyramid_validity_fraction_is_monotone_nonincreasing() {
        let frame = Image::from_fn(10, 11, 3, |y, x, _| ((y * 13 + x * 7) % 10) as f64 / 10.0);
        let mask = Mask::from_fn(10, 11, |y, x| (y * 31 + x * 17) % 5 != 0);
        let seq = ImageSequence::new(vec![frame], vec![mask], "t").unwrap();
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        let mut prev = f64::INFINITY;
        for l in 1..=4 {
            let frac = stack.level(l).unwrap().masks[0].valid_fraction();
            assert!(frac <= prev + 1e-12, "level {l}: {frac} > {prev}");
            prev = frac;
        }
    }

    #[test]
    fn chromaticity_features_are_valid_simplex_coords() {
        let frame = Image::from_fn(3, 3, 3, |y, x, c| [0.9, 0.4, 0.1][(y + x + c) % 3]);
        let feats = features_from_linear(&frame);
        for y in 0..3 {
            for x in 0..3 {
                let c1 = feats.at(y, x, 3);
                let c2 = feats.at(y, x, 4);
                assert!(c1 >= 0.0 && c2 >= 0.0 && c1 + c2 <= 1.0 + 1e-12);
                assert_eq!(feats.at(y, x, 0), x as f64);
                assert_eq!(feats.at(y, x, 1), y as f64);
            }
        }
    }

    #[test]
    fn lum_weight_monotone_in_luminance() {
        // property: lum(p) >= lum(q)  =>  L(p) >= L(q)
        let frame = Image::from_fn(1, 8, 3, |_, x, c| {
            (x as f64 / 8.0 + 0.02 * c as f64).min(1.0)
        });
        let seq = seq_of(vec![frame.clone()]);
        let stack = to_log_stack(&seq, 1e-4).unwrap();
        let lums: Vec<f64> = (0..8)
            .map(|x| (frame.at(0, x, 0) + frame.at(0, x, 1) + frame.at(0, x, 2)) / 3.0)
            .collect();
        let weights: Vec<f64> = (0..8).map(|x| stack.lum_weights[0].at(0, x, 0)).collect();
        for i in 0..8 {
            for j in 0..8 {
                if lums[i] >= lums[j] {
                    assert!(weights[i] >= weights[j] - 1e-15);
                }
            }
        }
    }
}
