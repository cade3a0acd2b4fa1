//! End-to-end toy reconstruction and determinism: criteria 8 and 12.

use std::time::{Duration, Instant};

use tsplat::eval::mesh_accuracy;
use tsplat::ingestion::{init_gaussians, make_synthetic, SyntheticConfig, SyntheticScene};
use tsplat::pipeline::{evaluate_views, reconstruct, split_holdout, ReconstructConfig, Reconstruction};

use crate::Check;

/// Values observed on the reference run; the regression band is ±20%.
pub const PINNED_PSNR: f64 = 26.133;
pub const PINNED_MAE: f64 = 0.034679;
const BAND: f64 = 0.2;
const MIN_PSNR: f64 = 25.0;
const BUDGET: Duration = Duration::from_secs(30 * 60);

pub struct Run {
    pub syn: SyntheticScene,
    pub rec: Reconstruction,
    pub elapsed: Duration,
}

/// Plane and two boxes, 24 views at 128×128, 2k coarse and 2k fine iterations.
pub fn config(jobs: usize) -> ReconstructConfig {
    let mut cfg = ReconstructConfig::default();
    cfg.train.schedule.total_iterations = 4000;
    cfg.train.schedule.densify.grad_threshold = 2e-3;
    cfg.partition.max_images = 12;
    cfg.partition.min_length = 3.0;
    cfg.jobs = jobs;
    cfg
}

pub fn run(jobs: usize) -> Result<Run, String> {
    let syn = make_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let seeds = init_gaussians(&syn.bundle()).map_err(|e| e.to_string())?;
    let cfg = config(jobs);
    let (train, _) = split_holdout(&syn.images, cfg.holdout_every);
    let t = Instant::now();
    let rec = reconstruct(&train, seeds, syn.images.len(), &cfg).map_err(|e| e.to_string())?;
    Ok(Run {
        syn,
        rec,
        elapsed: t.elapsed(),
    })
}

fn within_band(value: f64, pinned: f64) -> bool {
    (value - pinned).abs() <= BAND * pinned
}

pub fn toy_reconstruction(run: &Run) -> Check {
    let cfg = config(1);
    let (_, test) = split_holdout(&run.syn.images, cfg.holdout_every);
    let metrics = evaluate_views(&run.rec.merged, &test);
    let psnr = metrics.iter().map(|m| m.psnr).sum::<f64>() / metrics.len() as f64;
    let (_, voxel) = cfg.mesh.resolve(&run.rec.merged).map_err(|e| e.to_string())?;
    let acc = mesh_accuracy(&run.rec.mesh, &run.syn.gt_points, 1).map_err(|e| e.to_string())?;
    let cells = run.rec.partition.leaves.len();
    let detail = format!(
        "{cells} cells, held-out PSNR {psnr:.2} dB (> {MIN_PSNR}, pinned {PINNED_PSNR} ±20%), \
         MAE {:.4} (< 2×voxel {:.4}, pinned {PINNED_MAE} ±20%), {:.0} s",
        acc.mae,
        2.0 * voxel,
        run.elapsed.as_secs_f64()
    );
    let ok = cells >= 2
        && psnr > MIN_PSNR
        && within_band(psnr, PINNED_PSNR)
        && acc.mae < 2.0 * voxel
        && within_band(acc.mae, PINNED_MAE)
        && run.elapsed < BUDGET;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// First differing item between two runs, if any.
fn first_difference(a: &Reconstruction, b: &Reconstruction) -> Option<String> {
    let bits = |s: &tsplat::scene::Scene| -> Vec<u64> {
        s.gaussians.iter().flat_map(|g| g.to_params()).map(f64::to_bits).collect()
    };
    if bits(&a.coarse.scene) != bits(&b.coarse.scene) {
        return Some("coarse scene".into());
    }
    if a.partition.leaves.len() != b.partition.leaves.len()
        || a.partition.leaves.iter().zip(&b.partition.leaves).any(|(x, y)| x.images != y.images || x.gaussians != y.gaussians)
    {
        return Some("partition".into());
    }
    for (k, ((x, _), (y, _))) in a.cells.iter().zip(&b.cells).enumerate() {
        if bits(&x.scene) != bits(&y.scene) {
            return Some(format!("cell {k}"));
        }
    }
    if bits(&a.merged) != bits(&b.merged) {
        return Some("merged scene".into());
    }
    let verts = |m: &tsplat::geometry::TriangleMesh| -> Vec<u64> {
        m.vertices.iter().flat_map(|v| v.iter().map(|c| c.to_bits()).collect::<Vec<_>>()).collect()
    };
    if verts(&a.mesh) != verts(&b.mesh) || a.mesh.triangles != b.mesh.triangles {
        return Some("mesh".into());
    }
    None
}

/// Reruns the pipeline with 4 workers and compares every stage bitwise with
/// the single-worker run.
pub fn determinism(reference: &Run) -> Check {
    let other = run(4)?;
    let detail = format!(
        "jobs 1 vs jobs 4: {} merged Gaussians, {} mesh triangles, rerun {:.0} s",
        reference.rec.merged.len(),
        reference.rec.mesh.triangles.len(),
        other.elapsed.as_secs_f64()
    );
    match first_difference(&reference.rec, &other.rec) {
        None if other.elapsed < BUDGET => Ok(format!("{detail}, bit-identical")),
        None => Err(format!("{detail}, bit-identical but over budget")),
        Some(what) => Err(format!("{detail}, {what} differs")),
    }
}
