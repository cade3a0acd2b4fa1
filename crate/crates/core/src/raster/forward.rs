use std::path::Path;

use rayon::prelude::*;

use super::{project, Projected, Projection, RenderSettings};
use crate::error::Result;
use crate::img::Image;
use crate::math::Vec3;
use crate::scene::{CameraView, Scene};

/// Rendered maps for one view plus the state needed by the reverse pass.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub color: Image,
    pub alpha: Vec<f64>,
    /// Unit world-frame normal (zero where nothing was blended).
    pub normal: Image,
    /// α-blended plane distance, not divided by alpha.
    pub distance: Vec<f64>,
    /// Camera-frame depth of the ray / blended-plane intersection.
    pub depth: Vec<f64>,
    pub depth_valid: Vec<bool>,
    pub contributors: Vec<u32>,
    /// Gaussians skipped because their projection was not finite.
    pub non_finite: usize,
    pub(crate) state: RenderState,
}

#[derive(Clone, Debug)]
pub(crate) struct RenderState {
    pub projected: Vec<Projected>,
    pub tiles_x: usize,
    pub tiles: Vec<Vec<u32>>,
    /// Per pixel: number of tile-list entries walked before stopping.
    pub walked: Vec<u32>,
    pub normal_sum: Vec<Vec3>,
    pub denominator: Vec<f64>,
    pub settings: RenderSettings,
    pub sh_degree: usize,
}

impl RenderOutput {
    /// Writes color, alpha, normal, distance and depth as `<stem>_<map>.pfm`.
    pub fn save_pfm_maps(&self, dir: &Path, stem: &str) -> Result<()> {
        let (w, h) = (self.width, self.height);
        let depth = self
            .depth
            .iter()
            .zip(&self.depth_valid)
            .map(|(&d, &v)| if v { d } else { 0.0 })
            .collect();
        let maps = [
            ("color", self.color.clone()),
            ("alpha", Image::from_data(w, h, 1, self.alpha.clone())),
            ("normal", self.normal.clone()),
            ("distance", Image::from_data(w, h, 1, self.distance.clone())),
            ("depth", Image::from_data(w, h, 1, depth)),
        ];
        for (name, img) in maps {
            img.save_pfm(&dir.join(format!("{stem}_{name}.pfm")))?;
        }
        Ok(())
    }

    pub fn projected(&self) -> &[Projected] {
        &self.state.projected
    }

    /// Scene indices of Gaussians that touched at least one tile.
    pub fn visible(&self) -> Vec<usize> {
        let mut seen = vec![false; self.state.projected.len()];
        for t in &self.state.tiles {
            for &i in t {
                seen[i as usize] = true;
            }
        }
        self.state
            .projected
            .iter()
            .zip(seen)
            .filter(|(_, s)| *s)
            .map(|(p, _)| p.index)
            .collect()
    }

    /// Distance divided by alpha where alpha is positive.
    pub fn normalized_distance(&self) -> Vec<f64> {
        self.distance
            .iter()
            .zip(&self.alpha)
            .map(|(d, a)| if *a > 0.0 { d / a } else { 0.0 })
            .collect()
    }
}

pub fn render(scene: &Scene, view: &CameraView) -> RenderOutput {
    render_with(scene, view, &RenderSettings::default())
}

pub fn render_with(scene: &Scene, view: &CameraView, settings: &RenderSettings) -> RenderOutput {
    rasterize(scene, view, settings, false).0
}

/// Sum over all pixels of each Gaussian's blending weight in this view.
pub fn gaussian_weights(scene: &Scene, view: &CameraView, settings: &RenderSettings) -> Vec<f64> {
    rasterize(scene, view, settings, true).1
}

/// Blending contribution of one Gaussian at one pixel offset from its mean.
pub(crate) struct Sample {
    pub alpha: f64,
    pub gauss: f64,
    pub clamped: bool,
}

#[inline]
pub(crate) fn sample(p: &Projected, dx: f64, dy: f64, s: &RenderSettings) -> Option<Sample> {
    let [a, b, c] = p.conic;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    if !(q <= s.cutoff_sigma * s.cutoff_sigma) {
        return None;
    }
    let gauss = (-0.5 * q).exp();
    let raw = p.opacity * gauss;
    if raw < s.alpha_min {
        return None;
    }
    let clamped = raw > s.alpha_max;
    Some(Sample {
        alpha: if clamped { s.alpha_max } else { raw },
        gauss,
        clamped,
    })
}

pub(crate) fn project_all(scene: &Scene, view: &CameraView, settings: &RenderSettings) -> (Vec<Projected>, usize) {
    let mut non_finite = 0;
    let mut out = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        match project(g, i, view, scene.sh_degree, settings) {
            Projection::Visible(p) => out.push(*p),
            Projection::Culled => {}
            Projection::NonFinite => non_finite += 1,
        }
    }
    out.sort_by(|a, b| a.t.z.total_cmp(&b.t.z).then(a.index.cmp(&b.index)));
    (out, non_finite)
}

pub(crate) fn bin_tiles(projected: &[Projected], view: &CameraView, ts: usize) -> (usize, Vec<Vec<u32>>) {
    let tiles_x = view.width.div_ceil(ts);
    let tiles_y = view.height.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let (w, h) = (view.width as f64, view.height as f64);
    for (k, p) in projected.iter().enumerate() {
        let x0 = (p.mean[0] - p.radius - 0.5).floor();
        let x1 = (p.mean[0] + p.radius).ceil();
        let y0 = (p.mean[1] - p.radius - 0.5).floor();
        let y1 = (p.mean[1] + p.radius).ceil();
        if !(x1 >= 0.0 && y1 >= 0.0 && x0 < w && y0 < h) {
            continue;
        }
        let tx0 = x0.max(0.0) as usize / ts;
        let tx1 = (x1.min(w - 1.0) as usize) / ts;
        let ty0 = y0.max(0.0) as usize / ts;
        let ty1 = (y1.min(h - 1.0) as usize) / ts;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    (tiles_x, tiles)
}

struct TileResult {
    pixels: Vec<PixelResult>,
    weights: Vec<f64>,
}

#[derive(Clone, Copy, Default)]
struct PixelResult {
    color: [f64; 3],
    alpha: f64,
    normal: [f64; 3],
    distance: f64,
    walked: u32,
    count: u32,
}

fn rasterize(scene: &Scene, view: &CameraView, settings: &RenderSettings, want_weights: bool) -> (RenderOutput, Vec<f64>) {
    let (projected, non_finite) = project_all(scene, view, settings);
    let ts = settings.tile_size;
    let (tiles_x, tiles) = bin_tiles(&projected, view, ts);
    let (width, height) = (view.width, view.height);
    let k = &view.intrinsics;
    let (cx, cy) = (k[(0, 2)], k[(1, 2)]);

    let results: Vec<TileResult> = tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let xs = tx * ts..((tx + 1) * ts).min(width);
            let ys = ty * ts..((ty + 1) * ts).min(height);
            let mut pixels = Vec::with_capacity(xs.len() * ys.len());
            let mut weights = if want_weights { vec![0.0; list.len()] } else { Vec::new() };
            for y in ys {
                let by = (y as f64 + 0.5) - cy;
                for x in xs.clone() {
                    let bx = (x as f64 + 0.5) - cx;
                    let mut px = PixelResult::default();
                    let mut trans = 1.0;
                    for (j, &gi) in list.iter().enumerate() {
                        px.walked = j as u32 + 1;
                        let p = &projected[gi as usize];
                        let Some(s) = sample(p, bx - p.mean_rel[0], by - p.mean_rel[1], settings) else {
                            continue;
                        };
                        let w = s.alpha * trans;
                        for c in 0..3 {
                            px.color[c] += w * p.color[c];
                            px.normal[c] += w * p.normal[c];
                        }
                        px.alpha += w;
                        px.distance += w * p.distance;
                        px.count += 1;
                        if want_weights {
                            weights[j] += w;
                        }
                        trans *= 1.0 - s.alpha;
                        if trans < settings.transmittance_min {
                            break;
                        }
                    }
                    pixels.push(px);
                }
            }
            TileResult { pixels, weights }
        })
        .collect();

    let n = width * height;
    let mut color = Image::new(width, height, 3);
    let mut normal = Image::new(width, height, 3);
    let mut alpha = vec![0.0; n];
    let mut distance = vec![0.0; n];
    let mut depth = vec![0.0; n];
    let mut depth_valid = vec![false; n];
    let mut contributors = vec![0u32; n];
    let mut walked = vec![0u32; n];
    let mut normal_sum = vec![Vec3::zeros(); n];
    let mut denominator = vec![0.0; n];
    let mut weights = if want_weights { vec![0.0; scene.gaussians.len()] } else { Vec::new() };
    let rot = &view.rotation_c2w;

    for (ti, tr) in results.iter().enumerate() {
        let (tx, ty) = (ti % tiles_x, ti / tiles_x);
        let x0 = tx * ts;
        let tw = ((tx + 1) * ts).min(width) - x0;
        for (k, px) in tr.pixels.iter().enumerate() {
            let (x, y) = (x0 + k % tw, ty * ts + k / tw);
            let i = y * width + x;
            color.data[3 * i..3 * i + 3].copy_from_slice(&px.color);
            alpha[i] = px.alpha;
            distance[i] = px.distance;
            contributors[i] = px.count;
            walked[i] = px.walked;
            let ns = Vec3::from(px.normal);
            normal_sum[i] = ns;
            let len = ns.norm();
            if len > 1e-12 {
                normal.data[3 * i..3 * i + 3].copy_from_slice((ns / len).as_slice());
            }
            let ray = rot * view.pixel_ray(x, y);
            let den = -ray.dot(&ns);
            denominator[i] = den;
            if px.alpha >= settings.alpha_floor && den >= settings.depth_denominator_min {
                depth[i] = px.distance / den;
                depth_valid[i] = true;
            }
        }
        if want_weights {
            for (j, &gi) in tiles[ti].iter().enumerate() {
                weights[projected[gi as usize].index] += tr.weights[j];
            }
        }
    }

    let out = RenderOutput {
        width,
        height,
        color,
        alpha,
        normal,
        distance,
        depth,
        depth_valid,
        contributors,
        non_finite,
        state: RenderState {
            projected,
            tiles_x,
            tiles,
            walked,
            normal_sum,
            denominator,
            settings: settings.clone(),
            sh_degree: scene.sh_degree,
        },
    };
    (out, weights)
}
