//! A/B experiment harnesses on small synthetic scenes.

use tsplat::eval::psnr;
use tsplat::geometry::TriangleMesh;
use tsplat::img::Image;
use tsplat::ingestion::synthetic::{Exposure, FlatPatch, Transient};
use tsplat::ingestion::{init_gaussians, make_synthetic, SyntheticConfig, SyntheticScene};
use tsplat::math::Vec3;
use tsplat::mesher::{fuse_scene, MeshConfig};
use tsplat::pipeline::split_holdout;
use tsplat::raster::{render_with, RenderSettings};
use tsplat::scene::{CameraView, Scene, TrainingImage};
use tsplat::trainer::{train_coarse, TrainConfig, TrainState};

/// 24 ring views at 64×64.
pub fn small_scene() -> SyntheticConfig {
    SyntheticConfig {
        width: 64,
        height: 64,
        focal: 60.0,
        supersample: 2,
        gt_points: 20_000,
        seed_points: 2_000,
        ..Default::default()
    }
}

/// Single-phase training at full resolution of the given images.
pub fn train_config(iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.schedule.total_iterations = iterations;
    cfg.schedule.coarse_fraction = 1.0;
    cfg.schedule.coarse_downsample = 1;
    cfg.schedule.geometry_warmup = iterations / 5;
    cfg.schedule.densify.start = iterations / 10;
    cfg.schedule.densify.grad_threshold = 2e-3;
    cfg
}

pub fn train(syn: &SyntheticScene, images: &[TrainingImage], cfg: &TrainConfig, sh_degree: usize) -> TrainState {
    let mut scene = Scene::new(init_gaussians(&syn.bundle()).unwrap());
    scene.sh_degree = sh_degree;
    let mut state = TrainState::new(scene, syn.images.len(), cfg);
    train_coarse(&mut state, images, cfg).unwrap();
    state
}

/// World point seen at pixel (x, y) of the ground-truth depth map, if any.
pub fn gt_point(syn: &SyntheticScene, view: usize, x: usize, y: usize) -> Option<Vec3> {
    let v = &syn.images[view].view;
    let d = syn.depths[view][y * v.width + x];
    (d > 0.0).then(|| v.center + v.rotation_c2w * (v.pixel_ray(x, y) * d))
}

/// Whether `p` is the first surface along its pixel ray in `view`.
fn visible_pixel(syn: &SyntheticScene, view: &CameraView, p: &Vec3) -> Option<(usize, usize)> {
    let uv = view.project(p)?;
    let (x, y) = (uv.x.floor(), uv.y.floor());
    if x < 0.0 || y < 0.0 || x >= view.width as f64 || y >= view.height as f64 {
        return None;
    }
    let (x, y) = (x as usize, y as usize);
    let z = view.to_camera(p).z;
    let d = syn.depths[view.id][y * view.width + x];
    ((d - z).abs() < 0.01 * z).then_some((x, y))
}

/// Grid of points on the constant-color patch, where the clean images agree
/// across views.
pub fn patch_points() -> Vec<Vec3> {
    let m = 0.2;
    let (nx, ny) = (24, 6);
    let mut pts = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let x = FLAT_PATCH.min[0] + m + (FLAT_PATCH.max[0] - FLAT_PATCH.min[0] - 2.0 * m) * (i as f64 + 0.5) / nx as f64;
            let y = FLAT_PATCH.min[1] + m + (FLAT_PATCH.max[1] - FLAT_PATCH.min[1] - 2.0 * m) * (j as f64 + 0.5) / ny as f64;
            pts.push(Vec3::new(x, y, 0.0));
        }
    }
    pts
}

pub fn exposure_multipliers(n: usize) -> Vec<f64> {
    // evenly spread over [0.8, 1.3] in a scrambled order
    (0..n).map(|i| 0.8 + 0.5 * ((i * 7) % n) as f64 / (n - 1) as f64).collect()
}

pub struct ExposureResult {
    pub variance_on: f64,
    pub variance_off: f64,
    /// |(mean T_i / m_i) / mean_j(mean T_j / m_j) − 1| per image.
    pub ratio_errors: Vec<f64>,
}

impl ExposureResult {
    pub fn reduction(&self) -> f64 {
        1.0 - self.variance_on / self.variance_off
    }

    pub fn max_ratio_error(&self) -> f64 {
        self.ratio_errors.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn render_all(syn: &SyntheticScene, scene: &Scene) -> Vec<Image> {
    let settings = RenderSettings::default();
    syn.images.iter().map(|i| render_with(scene, &i.view, &settings).color).collect()
}

/// Mean over fixed surface points of the per-channel variance of raw render
/// colors across the views that see them.
pub fn cross_view_variance(syn: &SyntheticScene, renders: &[Image], points: &[Vec3]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for p in points {
        let samples: Vec<[f64; 3]> = syn
            .images
            .iter()
            .filter_map(|i| {
                let (x, y) = visible_pixel(syn, &i.view, p)?;
                let r = &renders[i.view.id];
                Some([r.get(x, y, 0), r.get(x, y, 1), r.get(x, y, 2)])
            })
            .collect();
        if samples.len() < 3 {
            continue;
        }
        let n = samples.len() as f64;
        for c in 0..3 {
            let mean = samples.iter().map(|s| s[c]).sum::<f64>() / n;
            total += samples.iter().map(|s| (s[c] - mean).powi(2)).sum::<f64>() / n;
        }
        count += 3;
    }
    total / count as f64
}

/// Per-image exposure in [0.8, 1.3]; appearance model on vs off.
pub fn exposure_ab(iterations: usize) -> ExposureResult {
    let mut sc = small_scene();
    sc.exposures = exposure_multipliers(sc.views)
        .into_iter()
        .enumerate()
        .map(|(image, multiplier)| Exposure { image, multiplier })
        .collect();
    sc.flat_patches = vec![FLAT_PATCH];
    let syn = make_synthetic(&sc).unwrap();
    let mut cfg = train_config(iterations);
    cfg.transient_mask = false;
    cfg.appearance = true;
    // view-dependent color lets the baseline bake exposure into the scene
    let on = train(&syn, &syn.images, &cfg, 2);
    cfg.appearance = false;
    let off = train(&syn, &syn.images, &cfg, 2);

    let points = patch_points();
    let app = on.appearance.as_ref().unwrap();
    let settings = RenderSettings::default();
    let fitted: Vec<f64> = syn
        .images
        .iter()
        .map(|i| {
            let r = render_with(&on.scene, &i.view, &settings).color;
            let t = app.transform(&r, i.view.embedding_id);
            t.mean() / syn.multiplier(i.view.id)
        })
        .collect();
    let mean = fitted.iter().sum::<f64>() / fitted.len() as f64;
    ExposureResult {
        variance_on: cross_view_variance(&syn, &render_all(&syn, &on.scene), &points),
        variance_off: cross_view_variance(&syn, &render_all(&syn, &off.scene), &points),
        ratio_errors: fitted.iter().map(|f| (f / mean - 1.0).abs()).collect(),
    }
}

pub struct TransientResult {
    /// Mean mask inside the quad of each affected image.
    pub inside: Vec<f64>,
    /// Mean mask over every pixel not covered by a quad.
    pub outside: f64,
    /// Fraction of quad pixels whose first mesh hit lies more than two voxels
    /// in front of the true surface: (mask on, mask off).
    pub artifact: (f64, f64),
    /// The same measure on unaffected views (mask on), as a noise reference.
    pub artifact_unaffected: f64,
    pub voxel: f64,
}

pub const TRANSIENT_IMAGES: [usize; 2] = [3, 15];

/// Fraction of the selected pixels whose first mesh hit lies more than two
/// voxels in front of the true surface. `pixels` pairs an image with the quad
/// mask to test in it.
fn artifact_fraction(syn: &SyntheticScene, mesh: &TriangleMesh, voxel: f64, pixels: &[(usize, &[bool])]) -> f64 {
    let mut bad = 0usize;
    let mut total = 0usize;
    for &(k, sel) in pixels {
        let v = &syn.images[k].view;
        for y in 0..v.height {
            for x in 0..v.width {
                let idx = y * v.width + x;
                if !sel[idx] {
                    continue;
                }
                total += 1;
                let dir = v.rotation_c2w * v.pixel_ray(x, y);
                let gt = syn.depths[k][idx];
                let Some(hit) = mesh.ray_cast(&v.center, &dir) else {
                    continue;
                };
                // dir has unit camera z, so t is camera depth
                let limit = if gt > 0.0 { gt } else { f64::INFINITY };
                if hit.t < limit - 2.0 * voxel {
                    bad += 1;
                }
            }
        }
    }
    bad as f64 / total.max(1) as f64
}

fn fused_mesh(syn: &SyntheticScene, state: &TrainState, mesh_cfg: &MeshConfig) -> (TriangleMesh, f64) {
    let masks: Vec<Vec<f64>> = match &state.mask {
        Some(m) => syn.images.iter().map(|i| m.mask(&i.pixels)).collect(),
        None => Vec::new(),
    };
    let (mesh, _) = fuse_scene(&state.scene, &syn.views(), &masks, mesh_cfg).unwrap();
    let (_, voxel) = mesh_cfg.resolve(&state.scene).unwrap();
    (mesh, voxel)
}

/// A moving checkered quad in two of 24 images; mask on vs off.
pub fn transient_ab(iterations: usize) -> TransientResult {
    let mut sc = small_scene();
    sc.transients = vec![Transient {
        images: TRANSIENT_IMAGES.to_vec(),
        rect: [20, 22, 40, 42],
        shift: [4, -3],
        colors: [[0.95, 0.1, 0.1], [0.1, 0.1, 0.95]],
    }];
    let syn = make_synthetic(&sc).unwrap();
    let mesh_cfg = MeshConfig::default();
    let mut cfg = train_config(iterations);
    cfg.transient_mask = true;
    let on = train(&syn, &syn.images, &cfg, 0);
    cfg.transient_mask = false;
    let off = train(&syn, &syn.images, &cfg, 0);

    let m = on.mask.as_ref().unwrap();
    let masks: Vec<Vec<f64>> = syn.images.iter().map(|i| m.mask(&i.pixels)).collect();
    let inside = TRANSIENT_IMAGES
        .iter()
        .map(|&k| {
            let sel: Vec<f64> = masks[k]
                .iter()
                .zip(&syn.transient_masks[k])
                .filter(|(_, &t)| t)
                .map(|(&v, _)| v)
                .collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        })
        .collect();
    let (sum, n) = masks
        .iter()
        .zip(&syn.transient_masks)
        .flat_map(|(m, t)| m.iter().zip(t))
        .filter(|(_, &t)| !t)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    let quads: Vec<(usize, &[bool])> = TRANSIENT_IMAGES.iter().map(|&k| (k, &syn.transient_masks[k][..])).collect();
    // same pixel sets in the next, unaffected views
    let clean: Vec<(usize, &[bool])> = TRANSIENT_IMAGES.iter().map(|&k| (k + 1, &syn.transient_masks[k][..])).collect();
    let (mesh_on, voxel) = fused_mesh(&syn, &on, &mesh_cfg);
    let (mesh_off, _) = fused_mesh(&syn, &off, &mesh_cfg);
    let a_on = artifact_fraction(&syn, &mesh_on, voxel, &quads);
    let a_off = artifact_fraction(&syn, &mesh_off, voxel, &quads);
    let a_clean = artifact_fraction(&syn, &mesh_on, voxel, &clean);
    TransientResult {
        inside,
        outside: sum / n as f64,
        artifact: (a_on, a_off),
        artifact_unaffected: a_clean,
        voxel,
    }
}

pub struct TexturelessResult {
    /// Mean squared depth-error gradient in the flat region: (L_gran on, off).
    pub energy: (f64, f64),
    /// Mean held-out PSNR: (on, off).
    pub psnr: (f64, f64),
}

impl TexturelessResult {
    pub fn reduction(&self) -> f64 {
        1.0 - self.energy.0 / self.energy.1
    }
}

pub const FLAT_PATCH: FlatPatch = FlatPatch {
    min: [-2.8, 1.3],
    max: [2.8, 2.8],
    color: [0.55, 0.5, 0.45],
};

/// Mean of |∇(D − D_gt)|² (forward differences) over pixels whose true
/// surface point and both forward neighbours lie inside the shrunk patch.
fn depth_error_energy(syn: &SyntheticScene, scene: &Scene, margin: f64) -> f64 {
    let inside = |p: Option<Vec3>| {
        p.is_some_and(|p| {
            p.z.abs() < 1e-6
                && p.x > FLAT_PATCH.min[0] + margin
                && p.x < FLAT_PATCH.max[0] - margin
                && p.y > FLAT_PATCH.min[1] + margin
                && p.y < FLAT_PATCH.max[1] - margin
        })
    };
    let settings = RenderSettings::default();
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, img) in syn.images.iter().enumerate() {
        let v = &img.view;
        let out = render_with(scene, v, &settings);
        let w = v.width;
        let err = |x: usize, y: usize| out.depth[y * w + x] - syn.depths[k][y * w + x];
        let ok = |x: usize, y: usize| out.depth_valid[y * w + x] && inside(gt_point(syn, k, x, y));
        for y in 0..v.height - 1 {
            for x in 0..w - 1 {
                if ok(x, y) && ok(x + 1, y) && ok(x, y + 1) {
                    let gx = err(x + 1, y) - err(x, y);
                    let gy = err(x, y + 1) - err(x, y);
                    total += gx * gx + gy * gy;
                    count += 1;
                }
            }
        }
    }
    total / count.max(1) as f64
}

/// Texture-less strip on the ground; L_gran on vs off.
pub fn textureless_ab(iterations: usize) -> TexturelessResult {
    let mut sc = small_scene();
    sc.flat_patches = vec![FLAT_PATCH];
    let syn = make_synthetic(&sc).unwrap();
    let (train_imgs, test) = split_holdout(&syn.images, 8);
    let mut cfg = train_config(iterations);
    let on = train(&syn, &train_imgs, &cfg, 0);
    cfg.weights.gran = 0.0;
    let off = train(&syn, &train_imgs, &cfg, 0);
    let settings = RenderSettings::default();
    let mean_psnr = |s: &Scene| {
        test.iter()
            .map(|i| psnr(&render_with(s, &i.view, &settings).color, &i.pixels))
            .sum::<f64>()
            / test.len() as f64
    };
    TexturelessResult {
        energy: (depth_error_energy(&syn, &on.scene, 0.1), depth_error_energy(&syn, &off.scene, 0.1)),
        psnr: (mean_psnr(&on.scene), mean_psnr(&off.scene)),
    }
}
