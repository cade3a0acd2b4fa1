//! The full reconstruction pipeline and its evaluation helpers.

use ::log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{psnr, ssim, ViewMetrics};
use crate::geometry::TriangleMesh;
use crate::img::Image;
use crate::mesher::{fuse_scene, MeshConfig};
use crate::partition::{build_partition, Partition, PartitionConfig};
use crate::raster::{render_with, RenderSettings};
use crate::scene::{CameraView, GaussianPrimitive, Scene, TrainingImage};
use crate::trainer::{camera_extent, merge_cells, refine_all, train_coarse, MergeReport, PhaseSummary, TrainConfig, TrainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub train: TrainConfig,
    pub partition: PartitionConfig,
    pub mesh: MeshConfig,
    /// Cells refined concurrently.
    pub jobs: usize,
    /// Every n-th image is held out for evaluation; 0 disables.
    pub holdout_every: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            partition: PartitionConfig::default(),
            mesh: MeshConfig::default(),
            jobs: 1,
            holdout_every: 8,
        }
    }
}

pub struct Reconstruction {
    pub coarse: TrainState,
    pub coarse_summary: PhaseSummary,
    pub partition: Partition,
    /// Refined state per kept leaf, in leaf order.
    pub cells: Vec<(TrainState, PhaseSummary)>,
    pub merged: Scene,
    pub merge: MergeReport,
    pub mesh: TriangleMesh,
}

/// (training, held-out) with every `every`-th image (0, every, 2·every, …) held out.
pub fn split_holdout(images: &[TrainingImage], every: usize) -> (Vec<TrainingImage>, Vec<TrainingImage>) {
    if every == 0 {
        return (images.to_vec(), Vec::new());
    }
    let (test, train): (Vec<_>, Vec<_>) = images.iter().cloned().enumerate().partition(|(i, _)| i % every == 0);
    (train.into_iter().map(|x| x.1).collect(), test.into_iter().map(|x| x.1).collect())
}

/// Coarse training, partitioning, per-cell refinement, merging and fusion.
/// `num_images` sizes the appearance embedding table (embedding ids index it).
pub fn reconstruct(
    images: &[TrainingImage],
    seeds: Vec<GaussianPrimitive>,
    num_images: usize,
    cfg: &ReconstructConfig,
) -> Result<Reconstruction> {
    let views: Vec<CameraView> = images.iter().map(|i| i.view.clone()).collect();
    let mut coarse = TrainState::new(Scene::new(seeds), num_images, &cfg.train);
    let coarse_summary = train_coarse(&mut coarse, images, &cfg.train)?;
    info!("coarse done: {} Gaussians", coarse.scene.len());
    let coarse_views: Vec<CameraView> = views
        .iter()
        .map(|v| v.downsampled(cfg.train.schedule.coarse_downsample))
        .collect();
    let partition = build_partition(&coarse.scene, &coarse_views, &cfg.partition)?;
    info!("partition: {} cells, {} removed", partition.leaves.len(), partition.removed.len());
    let cells = refine_all(&coarse, &partition.leaves, images, camera_extent(&views), &cfg.train, cfg.jobs)?;
    let pairs: Vec<_> = partition.leaves.iter().zip(&cells).map(|(c, (s, _))| (c, &s.scene)).collect();
    let (merged, merge) = merge_cells(&pairs);
    let states: Vec<&TrainState> = cells.iter().map(|(s, _)| s).collect();
    let masks = fusion_masks(&partition, &states, images);
    let (mesh, _) = fuse_scene(&merged, &views, &masks, &cfg.mesh)?;
    info!("mesh: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    Ok(Reconstruction {
        coarse,
        coarse_summary,
        partition,
        cells,
        merged,
        merge,
        mesh,
    })
}

/// Transient mask per image from the lowest-id cell containing it; empty when
/// no cell has a mask network.
pub fn fusion_masks(partition: &Partition, cells: &[&TrainState], images: &[TrainingImage]) -> Vec<Vec<f64>> {
    images
        .par_iter()
        .map(|img| {
            partition
                .leaves
                .iter()
                .zip(cells)
                .find(|(c, _)| c.images.binary_search(&img.view.id).is_ok())
                .and_then(|(_, s)| s.mask.as_ref())
                .map(|m| m.mask(&img.pixels))
                .unwrap_or_default()
        })
        .collect()
}

pub fn render_images(scene: &Scene, views: &[CameraView]) -> Vec<Image> {
    let settings = RenderSettings::default();
    views.iter().map(|v| render_with(scene, v, &settings).color).collect()
}

/// PSNR/SSIM of raw renders against each image.
pub fn evaluate_views(scene: &Scene, images: &[TrainingImage]) -> Vec<ViewMetrics> {
    let settings = RenderSettings::default();
    images
        .iter()
        .map(|img| {
            let r = render_with(scene, &img.view, &settings).color;
            ViewMetrics {
                view: img.view.id,
                psnr: psnr(&r, &img.pixels),
                ssim: ssim(&r, &img.pixels),
            }
        })
        .collect()
}

/// Number of jobs from the `TSPLAT_JOBS` environment variable, if set.
pub fn jobs_from_env() -> Result<Option<usize>> {
    match std::env::var("TSPLAT_JOBS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("TSPLAT_JOBS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}
