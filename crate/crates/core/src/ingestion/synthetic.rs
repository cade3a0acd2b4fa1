//! Ray-cast synthetic scenes with ground truth: a textured ground plane with
//! boxes, seen by a ring of cameras.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::colmap::{ColmapBundle, SeedPoint};
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::img::Image;
use crate::math::{look_at, Vec3};
use crate::scene::{CameraView, TrainingImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Constant-color rectangle painted on the ground plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatPatch {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exposure {
    pub image: usize,
    pub multiplier: f64,
}

/// Screen-space checkered quad covering `[x0, x1) × [y0, y1)` in the first
/// listed image, moved by `shift` pixels for each following one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transient {
    pub images: Vec<usize>,
    pub rect: [usize; 4],
    #[serde(default)]
    pub shift: [i64; 2],
    #[serde(default = "default_transient_colors")]
    pub colors: [[f64; 3]; 2],
}

fn default_transient_colors() -> [[f64; 3]; 2] {
    [[0.95, 0.1, 0.1], [0.1, 0.1, 0.95]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
    /// Alternating ± height offset between neighbouring ring cameras.
    pub height_jitter: f64,
    pub target: [f64; 3],
    pub ground_half_size: f64,
    pub texture_resolution: usize,
    pub boxes: Vec<BoxSpec>,
    pub flat_patches: Vec<FlatPatch>,
    pub exposures: Vec<Exposure>,
    pub transients: Vec<Transient>,
    /// Rays per pixel side.
    pub supersample: usize,
    pub background: [f64; 3],
    pub gt_points: usize,
    pub seed_points: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            views: 24,
            width: 128,
            height: 128,
            focal: 120.0,
            ring_radius: 3.0,
            ring_height: 3.2,
            height_jitter: 0.3,
            target: [0.0, 0.0, 0.0],
            ground_half_size: 3.0,
            texture_resolution: 64,
            boxes: vec![
                BoxSpec {
                    min: [-1.0, -0.6, 0.0],
                    max: [-0.2, 0.4, 0.6],
                },
                BoxSpec {
                    min: [0.4, -0.2, 0.0],
                    max: [1.1, 0.9, 0.4],
                },
            ],
            flat_patches: Vec::new(),
            exposures: Vec::new(),
            transients: Vec::new(),
            supersample: 3,
            background: [0.0; 3],
            gt_points: 40_000,
            seed_points: 3_000,
        }
    }
}

impl SyntheticConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views < 8 {
            return Err(Error::Config(format!("camera ring needs at least 8 views, got {}", self.views)));
        }
        if self.texture_resolution < 64 {
            return Err(Error::Config(format!(
                "texture resolution must be at least 64, got {}",
                self.texture_resolution
            )));
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) || self.supersample == 0 {
            return Err(Error::Config("image size, focal and supersample must be positive".into()));
        }
        for b in &self.boxes {
            if (0..3).any(|k| !(b.min[k] < b.max[k])) {
                return Err(Error::Config(format!("box {b:?} has min ≥ max")));
            }
        }
        for e in &self.exposures {
            if e.image >= self.views || !(e.multiplier > 0.0) {
                return Err(Error::Config(format!("bad exposure entry {e:?}")));
            }
        }
        for t in &self.transients {
            if t.images.iter().any(|&i| i >= self.views) || t.rect[0] >= t.rect[2] || t.rect[1] >= t.rect[3] {
                return Err(Error::Config(format!("bad transient entry {t:?}")));
            }
        }
        Ok(())
    }

    /// Ring cameras looking at the target.
    pub fn cameras(&self) -> Vec<CameraView> {
        let target = Vec3::from(self.target);
        (0..self.views)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / self.views as f64;
                let h = self.ring_height + if i % 2 == 0 { self.height_jitter } else { -self.height_jitter };
                let eye = target + Vec3::new(self.ring_radius * a.cos(), self.ring_radius * a.sin(), h);
                let r = look_at(&eye, &target, &Vec3::z());
                CameraView::pinhole(i, self.focal, self.width, self.height, r, eye)
            })
            .collect()
    }

    pub fn mesh(&self) -> TriangleMesh {
        let mut m = TriangleMesh::new();
        let s = self.ground_half_size;
        m.push_quad([
            Vec3::new(-s, -s, 0.0),
            Vec3::new(s, -s, 0.0),
            Vec3::new(s, s, 0.0),
            Vec3::new(-s, s, 0.0),
        ]);
        for b in &self.boxes {
            m.push_box(Vec3::from(b.min), Vec3::from(b.max));
        }
        m
    }
}

/// Rendered views plus ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub config: SyntheticConfig,
    pub images: Vec<TrainingImage>,
    /// Images before exposure and transients were applied.
    pub clean_images: Vec<Image>,
    /// Camera-z depth at each pixel center; 0 where the ray misses.
    pub depths: Vec<Vec<f64>>,
    /// Per-pixel flag, true where a transient covers the pixel.
    pub transient_masks: Vec<Vec<bool>>,
    pub mesh: TriangleMesh,
    pub gt_points: Vec<Vec3>,
    pub seeds: Vec<SeedPoint>,
}

impl SyntheticScene {
    pub fn views(&self) -> Vec<CameraView> {
        self.images.iter().map(|i| i.view.clone()).collect()
    }

    pub fn multiplier(&self, image: usize) -> f64 {
        self.config
            .exposures
            .iter()
            .filter(|e| e.image == image)
            .map(|e| e.multiplier)
            .product()
    }

    pub fn bundle(&self) -> ColmapBundle {
        ColmapBundle {
            views: self.views(),
            image_names: (0..self.images.len()).map(|i| format!("{i:04}.png")).collect(),
            image_ids: (1..=self.images.len() as u32).collect(),
            points: self.seeds.clone(),
        }
    }
}

struct Texture {
    res: usize,
    cell: f64,
    grids: [Vec<[f64; 3]>; 2],
}

impl Texture {
    fn new(res: usize, half: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e87_u64);
        let mut grid = || {
            (0..res * res)
                .map(|_| {
                    let base: f64 = rng.random_range(0.15..0.85);
                    let tint = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
                    [base + tint[0], base + tint[1], base + tint[2]]
                })
                .collect()
        };
        let grids = [grid(), grid()];
        Self {
            res,
            cell: 2.0 * half / res as f64,
            grids,
        }
    }

    /// Bilinear lookup with wrap-around.
    fn sample(&self, grid: usize, u: f64, v: f64) -> [f64; 3] {
        let n = self.res as i64;
        let (fu, fv) = (u / self.cell - 0.5, v / self.cell - 0.5);
        let (iu, iv) = (fu.floor(), fv.floor());
        let (tu, tv) = (fu - iu, fv - iv);
        let at = |a: i64, b: i64| self.grids[grid][(b.rem_euclid(n) * n + a.rem_euclid(n)) as usize];
        let (iu, iv) = (iu as i64, iv as i64);
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = (1.0 - tu) * (1.0 - tv) * at(iu, iv)[k]
                + tu * (1.0 - tv) * at(iu + 1, iv)[k]
                + (1.0 - tu) * tv * at(iu, iv + 1)[k]
                + tu * tv * at(iu + 1, iv + 1)[k];
        }
        out
    }
}

fn surface_color(cfg: &SyntheticConfig, tex: &Texture, p: &Vec3, normal: &Vec3, ground: bool) -> [f64; 3] {
    if ground {
        for f in &cfg.flat_patches {
            if p.x >= f.min[0] && p.x <= f.max[0] && p.y >= f.min[1] && p.y <= f.max[1] {
                return f.color;
            }
        }
        let h = cfg.ground_half_size;
        return tex.sample(0, p.x + h, p.y + h);
    }
    let (u, v) = match normal.iamax() {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    };
    tex.sample(1, u, v)
}

fn collinear(views: &[CameraView]) -> bool {
    let Some(first) = views.first() else { return true };
    let Some(far) = views
        .iter()
        .map(|v| v.center - first.center)
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
    else {
        return true;
    };
    if far.norm() < 1e-9 {
        return true;
    }
    let dir = far.normalize();
    views
        .iter()
        .all(|v| (v.center - first.center).cross(&dir).norm() < 1e-9 * (1.0 + far.norm()))
}

/// Renders every ring view by ray casting the ground-truth mesh.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let views = cfg.cameras();
    make_synthetic_with_views(cfg, views)
}

/// As `make_synthetic`, with caller-supplied cameras.
pub fn make_synthetic_with_views(cfg: &SyntheticConfig, views: Vec<CameraView>) -> Result<SyntheticScene> {
    if collinear(&views) {
        return Err(Error::DegenerateCameras("all camera centers are collinear".into()));
    }
    for v in &views {
        v.validate()?;
    }
    let mesh = cfg.mesh();
    let tex = Texture::new(cfg.texture_resolution, cfg.ground_half_size, cfg.seed);
    let ss = cfg.supersample;
    let mut images = Vec::with_capacity(views.len());
    let mut clean_images = Vec::with_capacity(views.len());
    let mut depths = Vec::with_capacity(views.len());
    let mut masks = Vec::with_capacity(views.len());
    for (idx, view) in views.iter().enumerate() {
        let (w, h) = (view.width, view.height);
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut color = vec![0.0; w * 3];
                let mut depth = vec![0.0; w];
                for x in 0..w {
                    let r = view.pixel_ray(x, y);
                    if let Some(hit) = mesh.ray_cast(&view.center, &(view.rotation_c2w * r)) {
                        depth[x] = hit.t;
                    }
                    let mut acc = [0.0; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = x as f64 + (sx as f64 + 0.5) / ss as f64;
                            let v = y as f64 + (sy as f64 + 0.5) / ss as f64;
                            let dir = view.rotation_c2w * view.ray_at(u, v);
                            let c = match mesh.ray_cast(&view.center, &dir) {
                                Some(hit) => {
                                    let p = view.center + dir * hit.t;
                                    surface_color(cfg, &tex, &p, &hit.normal, hit.triangle < 2)
                                }
                                None => cfg.background,
                            };
                            for k in 0..3 {
                                acc[k] += c[k];
                            }
                        }
                    }
                    for k in 0..3 {
                        color[x * 3 + k] = (acc[k] / (ss * ss) as f64).clamp(0.0, 1.0);
                    }
                }
                (color, depth)
            })
            .collect();
        let mut clean = Image::new(w, h, 3);
        let mut depth = vec![0.0; w * h];
        for (y, (c, d)) in rows.into_iter().enumerate() {
            clean.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&c);
            depth[y * w..(y + 1) * w].copy_from_slice(&d);
        }
        let mult: f64 = cfg.exposures.iter().filter(|e| e.image == idx).map(|e| e.multiplier).product();
        let mut img = clean.map(|v| (v * mult).clamp(0.0, 1.0));
        let mut mask = vec![false; w * h];
        for t in &cfg.transients {
            let Some(k) = t.images.iter().position(|&i| i == idx) else { continue };
            let dx = t.shift[0] * k as i64;
            let dy = t.shift[1] * k as i64;
            for y in t.rect[1] as i64 + dy..t.rect[3] as i64 + dy {
                for x in t.rect[0] as i64 + dx..t.rect[2] as i64 + dx {
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let (lx, ly) = (x - t.rect[0] as i64 - dx, y - t.rect[1] as i64 - dy);
                    let c = t.colors[((lx / 3 + ly / 3) % 2) as usize];
                    let i = y as usize * w + x as usize;
                    img.data[i * 3..i * 3 + 3].copy_from_slice(&c);
                    mask[i] = true;
                }
            }
        }
        images.push(TrainingImage::new(img, view.clone())?);
        clean_images.push(clean);
        depths.push(depth);
        masks.push(mask);
    }
    let gt_points = mesh.sample_points(cfg.gt_points, cfg.seed.wrapping_add(1));
    let seeds = seed_points(cfg, &views, &depths, &clean_images);
    Ok(SyntheticScene {
        config: cfg.clone(),
        images,
        clean_images,
        depths,
        transient_masks: masks,
        mesh,
        gt_points,
        seeds,
    })
}

/// Sparse "structure-from-motion" points: back-projected random pixels with hits.
fn seed_points(cfg: &SyntheticConfig, views: &[CameraView], depths: &[Vec<f64>], images: &[Image]) -> Vec<SeedPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut out = Vec::with_capacity(cfg.seed_points);
    let mut attempts = 0;
    while out.len() < cfg.seed_points && attempts < cfg.seed_points * 20 {
        attempts += 1;
        let v = rng.random_range(0..views.len());
        let view = &views[v];
        let x = rng.random_range(0..view.width);
        let y = rng.random_range(0..view.height);
        let d = depths[v][y * view.width + x];
        if d <= 0.0 {
            continue;
        }
        let p = view.center + view.rotation_c2w * view.pixel_ray(x, y) * d;
        let c = |k: usize| (images[v].get(x, y, k) * 255.0).round().clamp(0.0, 255.0) as u8;
        out.push(SeedPoint {
            position: p,
            color: [c(0), c(1), c(2)],
        });
    }
    out
}
