//! Dense image planes and binary validity masks.

use crate::scalar::Scalar;

/// Row-major, channel-interleaved image: `data[(y*w + x)*channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    h: usize,
    w: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(h: usize, w: usize, channels: usize) -> Self {
        Self {
            h,
            w,
            channels,
            data: vec![T::zero(); h * w * channels],
        }
    }

    pub fn constant(h: usize, w: usize, channels: usize, value: T) -> Self {
        Self {
            h,
            w,
            channels,
            data: vec![value; h * w * channels],
        }
    }

    pub fn from_vec(h: usize, w: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), h * w * channels, "image buffer length mismatch");
        Self {
            h,
            w,
            channels,
            data,
        }
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(h * w * channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            h,
            w,
            channels,
            data,
        }
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
    pub fn channels(&self) -> usize {
        self.channels
    }
    /// (h, w, channels)
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.channels)
    }
    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        debug_assert!(y < self.h && x < self.w && c < self.channels);
        self.data[(y * self.w + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: T) {
        debug_assert!(y < self.h && x < self.w && c < self.channels);
        self.data[(y * self.w + x) * self.channels + c] = value;
    }

    #[inline]
    pub fn add_at(&mut self, y: usize, x: usize, c: usize, value: T) {
        debug_assert!(y < self.h && x < self.w && c < self.channels);
        self.data[(y * self.w + x) * self.channels + c] =
            self.data[(y * self.w + x) * self.channels + c] + value;
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            h: self.h,
            w: self.w,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Binary per-pixel validity mask (true = valid).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn all_valid(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![true; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), h * w, "mask buffer length mismatch");
        Self { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { h, w, data }
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
    pub fn valid(&self, y: usize, x: usize) -> bool {
        debug_assert!(y < self.h && x < self.w);
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        debug_assert!(y < self.h && x < self.w);
        self.data[y * self.w + x] = value;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.valid_count() as f64 / self.data.len() as f64
    }

    /// 1.0 at valid pixels, 0.0 elsewhere, broadcast over `channels`.
    pub fn to_weight_image<T: Scalar>(&self, channels: usize) -> Image<T> {
        Image::from_fn(self.h, self.w, channels, |y, x, _| {
            if self.valid(y, x) {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}
