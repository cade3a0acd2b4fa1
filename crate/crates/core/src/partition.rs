//! Binary-tree ground-plane partitioning with visibility-based image assignment.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::{gaussian_weights, RenderSettings};
use crate::scene::{CameraView, Scene, SceneBounds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub max_images: usize,
    pub min_length: f64,
    /// Growth of each side, as a fraction of the cell's extent along that axis.
    pub expansion: f64,
    pub area_threshold: f64,
    pub keep_min: usize,
    /// Minimum per-image accumulated blending weight for a Gaussian to join a cell.
    pub weight_threshold: f64,
    /// Root rectangle [xmin, ymin, xmax, ymax]; derived from the data when absent.
    pub root: Option<[f64; 4]>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            max_images: 500,
            min_length: 3.0,
            expansion: 0.1,
            area_threshold: 0.25,
            keep_min: 8,
            weight_threshold: 1e-3,
            root: None,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_images == 0
            || !(self.min_length > 0.0)
            || !(self.expansion > 0.0 && self.expansion < 1.0)
            || !(self.area_threshold > 0.0)
            || self.keep_min == 0
            || !(self.weight_threshold > 0.0)
        {
            return Err(Error::Config(format!("invalid partition config {self:?}")));
        }
        Ok(())
    }
}

/// Axis-aligned ground-plane rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Self { min, max }
    }

    pub fn lx(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn ly(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    /// Open-interval test; points on the boundary are outside.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.min[0] && x < self.max[0] && y > self.min[1] && y < self.max[1]
    }

    pub fn expanded(&self, ratio: f64) -> Rect {
        let (dx, dy) = (self.lx() * ratio, self.ly() * ratio);
        Rect {
            min: [self.min[0] - dx, self.min[1] - dy],
            max: [self.max[0] + dx, self.max[1] + dy],
        }
    }

    /// Halves the longer side (ties split x).
    pub fn split(&self) -> (Rect, Rect) {
        let axis = if self.ly() > self.lx() { 1 } else { 0 };
        let mid = 0.5 * (self.min[axis] + self.max[axis]);
        let mut a = *self;
        let mut b = *self;
        a.max[axis] = mid;
        b.min[axis] = mid;
        (a, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionCell {
    pub id: usize,
    pub rect: Rect,
    pub expanded: Rect,
    /// Expanded rectangle × robust z-range of the Gaussians inside it.
    pub bbox: Option<SceneBounds>,
    /// View ids, ascending.
    pub images: Vec<usize>,
    /// Gaussian indices, ascending.
    pub gaussians: Vec<usize>,
    pub depth: usize,
}

impl PartitionCell {
    pub fn satisfies_stop(&self, cfg: &PartitionConfig) -> bool {
        self.images.len() <= cfg.max_images || self.rect.lx().min(self.rect.ly()) <= cfg.min_length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub root: Rect,
    pub leaves: Vec<PartitionCell>,
    /// Leaves dropped for having fewer than `keep_min` images.
    pub removed: Vec<PartitionCell>,
    /// Gaussians assigned to no kept leaf.
    pub orphans: Vec<usize>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

/// Root rectangle: camera centers plus the 1st–99th percentile of Gaussian positions.
pub fn root_rect(scene: &Scene, views: &[CameraView]) -> Option<Rect> {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for v in views {
        for k in 0..2 {
            min[k] = min[k].min(v.center[k]);
            max[k] = max[k].max(v.center[k]);
        }
    }
    if !scene.is_empty() {
        for k in 0..2 {
            let mut c: Vec<f64> = scene.gaussians.iter().map(|g| g.position[k]).collect();
            c.sort_by(f64::total_cmp);
            min[k] = min[k].min(percentile(&c, 0.01));
            max[k] = max[k].max(percentile(&c, 0.99));
        }
    }
    (min[0] < max[0] && min[1] < max[1]).then_some(Rect { min, max })
}

/// Expanded rectangle × [1st, 99th] percentile z of the Gaussians inside it.
pub fn cell_box(expanded: &Rect, scene: &Scene) -> Option<SceneBounds> {
    let mut z: Vec<f64> = scene
        .gaussians
        .iter()
        .filter(|g| expanded.contains(g.position.x, g.position.y))
        .map(|g| g.position.z)
        .collect();
    if z.is_empty() {
        return None;
    }
    z.sort_by(f64::total_cmp);
    Some(SceneBounds {
        min: Vec3::new(expanded.min[0], expanded.min[1], percentile(&z, 0.01)),
        max: Vec3::new(expanded.max[0], expanded.max[1], percentile(&z, 0.99)),
    })
}

fn box_corners(b: &SceneBounds) -> [Vec3; 8] {
    let mut out = [Vec3::zeros(); 8];
    for (c, o) in out.iter_mut().enumerate() {
        *o = Vec3::new(
            if c & 1 == 0 { b.min.x } else { b.max.x },
            if c & 2 == 0 { b.min.y } else { b.max.y },
            if c & 4 == 0 { b.min.z } else { b.max.z },
        );
    }
    out
}

fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Sutherland–Hodgman clip of a counter-clockwise polygon to [0,w]×[0,h].
fn clip_to_image(poly: &[[f64; 2]], w: f64, h: f64) -> Vec<[f64; 2]> {
    let mut out = poly.to_vec();
    let planes: [(usize, f64, bool); 4] = [(0, 0.0, true), (0, w, false), (1, 0.0, true), (1, h, false)];
    for (axis, bound, keep_above) in planes {
        if out.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_above { p[axis] >= bound } else { p[axis] <= bound };
        let input = std::mem::take(&mut out);
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

fn polygon_area(p: &[[f64; 2]]) -> f64 {
    let mut a = 0.0;
    for i in 0..p.len() {
        let (x0, y0) = (p[i][0], p[i][1]);
        let (x1, y1) = (p[(i + 1) % p.len()][0], p[(i + 1) % p.len()][1]);
        a += x0 * y1 - x1 * y0;
    }
    0.5 * a.abs()
}

/// Area of the box's projection (clipped to the near plane and to the image)
/// as a fraction of the image area.
pub fn projected_area_ratio(b: &SceneBounds, view: &CameraView) -> f64 {
    const NEAR: f64 = 1e-6;
    let corners = box_corners(b).map(|c| view.to_camera(&c));
    let mut pts3 = Vec::new();
    for c in &corners {
        if c.z > NEAR {
            pts3.push(*c);
        }
    }
    for a in 0..8 {
        for axis in 0..3 {
            let bb = a | (1 << axis);
            if bb == a {
                continue;
            }
            let (p, q) = (corners[a], corners[bb]);
            if (p.z > NEAR) != (q.z > NEAR) {
                let t = (NEAR - p.z) / (q.z - p.z);
                pts3.push(p + (q - p) * t);
            }
        }
    }
    if pts3.len() < 3 {
        return 0.0;
    }
    let pts: Vec<[f64; 2]> = pts3
        .iter()
        .map(|p| {
            let uv = view.project_camera(p);
            [uv.x, uv.y]
        })
        .collect();
    let hull = convex_hull(pts);
    if hull.len() < 3 {
        return 0.0;
    }
    let clipped = clip_to_image(&hull, view.width as f64, view.height as f64);
    polygon_area(&clipped) / (view.width * view.height) as f64
}

/// Position rule (camera center strictly inside the expanded rectangle) ∪
/// projected-area rule; returns view ids in ascending order.
pub fn assign_images(expanded: &Rect, bbox: Option<&SceneBounds>, views: &[CameraView], area_threshold: f64) -> Vec<usize> {
    let mut ids: Vec<usize> = views
        .par_iter()
        .filter(|v| {
            expanded.contains_strict(v.center.x, v.center.y)
                || bbox.is_some_and(|b| projected_area_ratio(b, v) > area_threshold)
        })
        .map(|v| v.id)
        .collect();
    ids.sort_unstable();
    ids
}

fn make_cell(rect: Rect, depth: usize, scene: &Scene, views: &[CameraView], cfg: &PartitionConfig) -> PartitionCell {
    let expanded = rect.expanded(cfg.expansion);
    let bbox = cell_box(&expanded, scene);
    let images = assign_images(&expanded, bbox.as_ref(), views, cfg.area_threshold);
    PartitionCell {
        id: 0,
        rect,
        expanded,
        bbox,
        images,
        gaussians: Vec::new(),
        depth,
    }
}

/// Recursive midpoint splitting until every leaf meets the stopping rule,
/// followed by Gaussian assignment and removal of under-observed leaves.
pub fn build_partition(scene: &Scene, views: &[CameraView], cfg: &PartitionConfig) -> Result<Partition> {
    cfg.validate()?;
    let root = match cfg.root {
        Some([x0, y0, x1, y1]) => Rect::new([x0, y0], [x1, y1]),
        None => root_rect(scene, views).ok_or_else(|| Error::Config("cannot derive a partition root rectangle".into()))?,
    };
    let root_cell = make_cell(root, 0, scene, views, cfg);
    if root_cell.images.len() < cfg.keep_min {
        return Err(Error::TooFewImages {
            images: root_cell.images.len(),
            minimum: cfg.keep_min,
        });
    }
    let mut stack = vec![root_cell];
    let mut leaves = Vec::new();
    while let Some(cell) = stack.pop() {
        if cell.satisfies_stop(cfg) {
            leaves.push(cell);
            continue;
        }
        let (a, b) = cell.rect.split();
        // push right first so the left child is processed first
        stack.push(make_cell(b, cell.depth + 1, scene, views, cfg));
        stack.push(make_cell(a, cell.depth + 1, scene, views, cfg));
    }
    let (kept, mut removed): (Vec<_>, Vec<_>) = leaves.into_iter().partition(|c| c.images.len() >= cfg.keep_min);
    for (i, c) in removed.iter_mut().enumerate() {
        c.id = i;
    }
    let mut leaves = kept;
    for (i, c) in leaves.iter_mut().enumerate() {
        c.id = i;
    }
    assign_gaussians(&mut leaves, scene, views, cfg);
    let mut covered = vec![false; scene.len()];
    for c in &leaves {
        for &g in &c.gaussians {
            covered[g] = true;
        }
    }
    let orphans = (0..scene.len()).filter(|&g| !covered[g]).collect();
    Ok(Partition {
        root,
        leaves,
        removed,
        orphans,
    })
}

/// G_i = Gaussians inside the cell box ∪ Gaussians whose accumulated blending
/// weight in some image of I_i exceeds the threshold.
fn assign_gaussians(leaves: &mut [PartitionCell], scene: &Scene, views: &[CameraView], cfg: &PartitionConfig) {
    let settings = RenderSettings::default();
    let needed: std::collections::BTreeSet<usize> = leaves.iter().flat_map(|c| c.images.iter().copied()).collect();
    let by_id: std::collections::HashMap<usize, &CameraView> = views.iter().map(|v| (v.id, v)).collect();
    let visible: std::collections::HashMap<usize, Vec<bool>> = needed
        .into_iter()
        .map(|id| {
            let w = gaussian_weights(scene, by_id[&id], &settings);
            (id, w.into_iter().map(|x| x > cfg.weight_threshold).collect())
        })
        .collect();
    for cell in leaves.iter_mut() {
        let mut member = vec![false; scene.len()];
        if let Some(b) = &cell.bbox {
            for (i, g) in scene.gaussians.iter().enumerate() {
                let p = g.position;
                member[i] = (0..3).all(|k| p[k] >= b.min[k] && p[k] <= b.max[k]);
            }
        }
        for id in &cell.images {
            for (m, v) in member.iter_mut().zip(&visible[id]) {
                *m |= *v;
            }
        }
        cell.gaussians = (0..scene.len()).filter(|&i| member[i]).collect();
    }
}

impl Partition {
    /// Full state including Gaussian sets, for later pipeline stages.
    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Malformed {
            file: path.display().to_string(),
            location: format!("line {}", e.line()),
            reason: e.to_string(),
        })
    }

    /// Human-readable summary.
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let summary: Vec<serde_json::Value> = self
            .leaves
            .iter()
            .map(|c| {
                serde_json::json!({
                    "id": c.id,
                    "rect": [c.rect.min[0], c.rect.min[1], c.rect.max[0], c.rect.max[1]],
                    "expanded": [c.expanded.min[0], c.expanded.min[1], c.expanded.max[0], c.expanded.max[1]],
                    "depth": c.depth,
                    "image_count": c.images.len(),
                    "gaussian_count": c.gaussians.len(),
                    "images": c.images,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "root": [self.root.min[0], self.root.min[1], self.root.max[0], self.root.max[1]],
            "leaves": summary,
            "removed": self.removed.len(),
            "orphans": self.orphans.len(),
        });
        let s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::file(path, e))
    }

    /// Overhead plot: cameras as red dots, cell rectangles in blue.
    pub fn svg(&self, views: &[CameraView]) -> String {
        let r = self.root.expanded(0.15);
        let scale = 600.0 / r.lx().max(r.ly());
        let tx = |x: f64| (x - r.min[0]) * scale;
        // flip y so +y points up
        let ty = |y: f64| (r.max[1] - y) * scale;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
            r.lx() * scale,
            r.ly() * scale
        );
        for c in self.leaves.iter().chain(&self.removed) {
            let removed = self.removed.contains(c);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="blue" stroke-width="2"{}/>"#,
                tx(c.rect.min[0]),
                ty(c.rect.max[1]),
                c.rect.lx() * scale,
                c.rect.ly() * scale,
                if removed { r#" stroke-dasharray="6,4""# } else { "" }
            );
        }
        for v in views {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="red"/>"#, tx(v.center.x), ty(v.center.y));
        }
        s.push_str("</svg>\n");
        s
    }
}
