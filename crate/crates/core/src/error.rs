use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::PixelBox;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: cannot encode image: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: exemplar has no alpha channel")]
    NoAlpha { path: PathBuf },

    #[error("logo has no pixel with alpha above the threshold")]
    EmptyLogo,

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("no exemplar classes found in {dir}")]
    NoClasses { dir: PathBuf },

    #[error("duplicate class `{class}`: {first} and {second}")]
    DuplicateClass {
        class: String,
        first: PathBuf,
        second: PathBuf,
    },

    #[error("scale factors must be positive, got ({sx}, {sy})")]
    NonPositiveScale { sx: f64, sy: f64 },

    #[error("shear ({kx}, {ky}) is singular")]
    SingularShear { kx: f64, ky: f64 },

    #[error("tilt of {tilt_x}°/{tilt_y}° is outside (-90, 90) or focal {focal} is not positive")]
    InvalidTilt { tilt_x: f64, tilt_y: f64, focal: f64 },

    #[error("a corner projects behind the camera")]
    BackFacing,

    #[error("planar map is singular")]
    SingularMap,

    #[error("logo box {bbox:?} does not lie inside a {width}x{height} image")]
    OutOfBounds { bbox: PixelBox, width: u32, height: u32 },

    #[error("logo of {hull_w}x{hull_h} does not fit a {ctx_w}x{ctx_h} context")]
    DoesNotFit {
        hull_w: u32,
        hull_h: u32,
        ctx_w: u32,
        ctx_h: u32,
    },

    #[error("generation failed for class `{class}` (seed {seed:#018x}) after {attempts} attempts: {last}")]
    GenerationFailed {
        class: String,
        seed: u64,
        attempts: u32,
        last: Box<Error>,
    },

    #[error("{} record(s) failed; first: {}", .0.len(), .0[0])]
    DatasetFailed(Vec<Error>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("line {line}: unknown class `{class}`")]
    UnknownClass { line: usize, class: String },

    #[error("class `{class}` has {have} images, need more than {need}")]
    InsufficientImages { class: String, have: usize, need: usize },

    #[error("plan {plan} needs a {which} manifest")]
    MissingManifest { plan: String, which: &'static str },

    #[error("prediction class `{class}` is not in the ground-truth class list")]
    ClassMismatch { class: String },

    #[error("preview needs at least one image")]
    EmptyGrid,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::Decode { .. } | Error::NoAlpha { .. }) => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping file-path wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            e => e,
        }
    }
}
