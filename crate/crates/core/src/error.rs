use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported camera model `{0}` (only SIMPLE_PINHOLE and PINHOLE are accepted; undistort the images first)")]
    UnsupportedCameraModel(String),

    #[error("malformed record in {file} at {location}: {reason}")]
    Malformed {
        file: String,
        location: String,
        reason: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("no seed points: initialize Gaussians randomly inside the scene bounds instead")]
    NoSeedPoints,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate camera placement: {0}")]
    DegenerateCameras(String),

    #[error("scene too small to partition: root cell sees {images} images, fewer than the keep-minimum {minimum}; run unpartitioned")]
    TooFewImages { images: usize, minimum: usize },

    #[error("non-finite loss term `{term}` ({value})")]
    NonFiniteLoss { term: &'static str, value: f64 },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("TSDF volume of {voxels} voxels exceeds the budget of {budget}; use a larger voxel size")]
    VoxelBudget { voxels: usize, budget: usize },

    #[error("empty mesh")]
    EmptyMesh,

    #[error("dimension mismatch: {0}")]
    Shape(String),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
