//! COLMAP import/export, Gaussian seeding and synthetic scene generation.

pub mod colmap;
pub mod synthetic;

pub use colmap::{load_colmap, load_colmap_as, write_colmap, ColmapBundle, ColmapFormat, SeedPoint};
pub use synthetic::{make_synthetic, make_synthetic_with_views, SyntheticConfig, SyntheticScene};

use nalgebra::Vector4;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::Vec3;
use crate::scene::{GaussianPrimitive, SceneBounds, TrainingImage};
use crate::spatial::KdTree;

pub const INIT_OPACITY: f64 = 0.1;

/// Bounds of seed points and camera centers.
pub fn bundle_bounds(bundle: &ColmapBundle) -> Option<SceneBounds> {
    let mut it = bundle
        .points
        .iter()
        .map(|p| p.position)
        .chain(bundle.views.iter().map(|v| v.center));
    let first = it.next()?;
    let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p)));
    Some(SceneBounds { min, max })
}

/// One isotropic Gaussian per seed point, sized by the mean distance to its
/// three nearest neighbours.
pub fn init_gaussians(bundle: &ColmapBundle) -> Result<Vec<GaussianPrimitive>> {
    if bundle.points.is_empty() {
        return Err(Error::NoSeedPoints);
    }
    let pts: Vec<Vec3> = bundle.points.iter().map(|p| p.position).collect();
    let diag = bundle_bounds(bundle).map_or(0.0, |b| b.diagonal());
    let fallback = if diag > 0.0 { 0.01 * diag } else { 0.01 };
    let tree = KdTree::build(&pts);
    Ok(bundle
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn: Vec<f64> = tree
                .k_nearest(&p.position, 4)
                .into_iter()
                .filter(|&(j, _)| j != i)
                .take(3)
                .map(|(_, d2)| d2.sqrt())
                .collect();
            let mut s = if nn.is_empty() {
                fallback
            } else {
                nn.iter().sum::<f64>() / nn.len() as f64
            };
            if !(s > 0.0) {
                s = fallback * 1e-2;
            }
            let color = Vec3::new(p.color[0] as f64, p.color[1] as f64, p.color[2] as f64) / 255.0;
            GaussianPrimitive::new(p.position, Vec3::repeat(s), Vector4::new(1.0, 0.0, 0.0, 0.0), INIT_OPACITY, color)
        })
        .collect())
}

/// Loads the image files referenced by the bundle's views.
pub fn load_images(bundle: &ColmapBundle) -> Result<Vec<TrainingImage>> {
    bundle
        .views
        .par_iter()
        .map(|v| {
            let path = v.image_path.as_ref().ok_or_else(|| Error::Config(format!("view {} has no image path", v.id)))?;
            let img = Image::load(path)?;
            TrainingImage::new(img, v.clone())
        })
        .collect()
}
