//! Library error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no decodable images found in {0}")]
    EmptyDirectory(PathBuf),

    #[error(
        "{file}: dimensions {found_w}x{found_h} do not match first frame {expect_w}x{expect_h}"
    )]
    DimensionMismatch {
        file: PathBuf,
        expect_w: usize,
        expect_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bandwidth for feature axis {axis} must be positive, got {value}")]
    DegenerateBandwidth { axis: usize, value: f64 },

    #[error("instance too large for dense reference: {pixels} pixels exceeds limit {limit}")]
    InstanceTooLarge { pixels: usize, limit: usize },

    #[error("precomputed quantities do not match this stack: {0}")]
    PrecompMismatch(String),

    #[error(
        "line search failed after {halvings} halvings at iteration {iteration} \
         (energy {energy:.6e}, gradient norm {grad_norm:.6e}); non-descent suggests a gradient bug"
    )]
    LineSearchFailed {
        iteration: usize,
        halvings: usize,
        energy: f64,
        grad_norm: f64,
    },

    #[error("non-positive shading value {value} at pixel (x={x}, y={y})")]
    NonPositiveShading { x: usize, y: usize, value: f64 },

    #[error("no valid pixels in mask")]
    EmptyMask,

    #[error("no usable annotations: {0}")]
    NoUsableAnnotations(String),

    #[error("bad raw float file {file}: {reason}")]
    BadRawFile { file: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {reason}")]
    Annotation { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
