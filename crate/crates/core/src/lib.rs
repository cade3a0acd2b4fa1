pub mod appearance;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod ingestion;
pub mod img;
pub mod losses;
pub mod math;
pub mod mesher;
pub mod partition;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod spatial;
pub mod trainer;

pub use error::{Error, Result};
