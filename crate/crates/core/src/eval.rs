//! Image metrics (PSNR, SSIM) and mesh-to-cloud accuracy.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::img::Image;
use crate::math::Vec3;
use crate::spatial::KdTree;

pub use crate::appearance::ssim;

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Mesh samples per squared mean reference spacing.
pub const SAMPLE_DENSITY: f64 = 10.0;
pub const MAX_SAMPLES: usize = 2_000_000;

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "mse shape mismatch");
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    let m = mse(a, b);
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoReport {
    pub mae: f64,
    pub rmse: f64,
    pub mae_x100: f64,
    pub rmse_x100: f64,
    pub samples: usize,
    /// (percentile, distance) pairs.
    pub percentiles: Vec<(f64, f64)>,
}

/// Mean nearest-neighbour distance over (a deterministic subset of) the cloud.
pub fn mean_spacing(tree: &KdTree) -> f64 {
    let pts = tree.points();
    if pts.len() < 2 {
        return 0.0;
    }
    let stride = (pts.len() / 4000).max(1);
    let d: Vec<f64> = pts
        .iter()
        .step_by(stride)
        .map(|p| tree.k_nearest(p, 2).get(1).map_or(0.0, |(_, d2)| d2.sqrt()))
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Distances from area-uniform mesh samples to the nearest reference point.
pub fn mesh_accuracy(mesh: &TriangleMesh, cloud: &[Vec3], seed: u64) -> Result<GeoReport> {
    mesh_accuracy_with(mesh, cloud, None, seed)
}

pub fn mesh_accuracy_with(mesh: &TriangleMesh, cloud: &[Vec3], samples: Option<usize>, seed: u64) -> Result<GeoReport> {
    if mesh.triangles.is_empty() || mesh.total_area() <= 0.0 {
        return Err(Error::EmptyMesh);
    }
    if cloud.is_empty() {
        return Err(Error::Config("reference point cloud is empty".into()));
    }
    let tree = KdTree::build(cloud);
    let count = samples.unwrap_or_else(|| {
        let s = mean_spacing(&tree);
        let n = if s > 0.0 {
            SAMPLE_DENSITY * mesh.total_area() / (s * s)
        } else {
            1e4
        };
        (n.ceil() as usize).clamp(1, MAX_SAMPLES)
    });
    let pts = mesh.sample_points(count, seed);
    let dist: Vec<f64> = pts
        .par_iter()
        .map(|p| tree.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .collect();
    Ok(report(dist))
}

pub fn report(mut dist: Vec<f64>) -> GeoReport {
    let n = dist.len().max(1) as f64;
    let mae = dist.iter().sum::<f64>() / n;
    let rmse = (dist.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    dist.sort_by(f64::total_cmp);
    let percentiles = [50.0, 75.0, 90.0, 95.0, 99.0]
        .iter()
        .map(|&p| {
            let idx = ((p / 100.0) * (dist.len().max(1) - 1) as f64).round() as usize;
            (p, dist.get(idx).copied().unwrap_or(0.0))
        })
        .collect();
    GeoReport {
        mae,
        rmse,
        mae_x100: mae * 100.0,
        rmse_x100: rmse * 100.0,
        samples: dist.len(),
        percentiles,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub geometry: Option<GeoReport>,
}

impl EvalReport {
    pub fn new(views: Vec<ViewMetrics>, geometry: Option<GeoReport>) -> Self {
        let n = views.len().max(1) as f64;
        Self {
            mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
            mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
            views,
            geometry,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::file(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        writeln!(f, "view,psnr,ssim")?;
        for v in &self.views {
            writeln!(f, "{},{},{}", v.view, v.psnr, v.ssim)?;
        }
        Ok(())
    }
}
