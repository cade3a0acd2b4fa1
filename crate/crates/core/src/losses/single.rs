use super::dual::{cross, dot, DVec3, Dual};
use crate::img::Image;
use crate::raster::MapGradients;
use crate::scene::CameraView;

/// (1 − g)⁵ per pixel, where g is the grayscale gradient magnitude (central
/// differences, clamped at the border) normalized by its image maximum.
pub fn edge_weight(gray: &Image) -> Vec<f64> {
    let (w, h) = (gray.width, gray.height);
    let at = |x: usize, y: usize| gray.data[y * w + x];
    let mut g = vec![0.0; w * h];
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) * 0.5;
            let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) * 0.5;
            let m = (gx * gx + gy * gy).sqrt();
            g[y * w + x] = m;
            max = max.max(m);
        }
    }
    g.iter()
        .map(|v| {
            let n = if max > 0.0 { v / max } else { 0.0 };
            (1.0 - n).powi(5)
        })
        .collect()
}

/// Pixels whose 4-neighbourhood lies inside the image with valid depth.
fn interior(valid: &[bool], w: usize, h: usize, x: usize, y: usize) -> bool {
    x > 0
        && y > 0
        && x + 1 < w
        && y + 1 < h
        && valid[y * w + x]
        && valid[y * w + x - 1]
        && valid[y * w + x + 1]
        && valid[(y - 1) * w + x]
        && valid[(y + 1) * w + x]
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Edge-weighted L1 norm of the central-difference depth gradient.
pub fn textureless_loss(gray: &Image, depth: &[f64], valid: &[bool]) -> (f64, Vec<f64>) {
    let (w, h) = (gray.width, gray.height);
    let weight = edge_weight(gray);
    let mut grad = vec![0.0; w * h];
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !interior(valid, w, h, x, y) {
                continue;
            }
            let i = y * w + x;
            let gx = 0.5 * (depth[i + 1] - depth[i - 1]);
            let gy = 0.5 * (depth[i + w] - depth[i - w]);
            let k = weight[i];
            sum += k * (gx.abs() + gy.abs());
            count += 1;
            let (sx, sy) = (0.5 * k * sign(gx), 0.5 * k * sign(gy));
            grad[i + 1] += sx;
            grad[i - 1] -= sx;
            grad[i + w] += sy;
            grad[i - w] -= sy;
        }
    }
    if count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / count as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (sum * inv, grad)
}

/// Camera-frame unit normal from the back-projected 4-neighbourhood of (x, y):
/// normalize((P_left − P_right) × (P_up − P_down)), flipped to face the camera.
pub fn depth_normal(view: &CameraView, depth: &[f64], x: usize, y: usize) -> [f64; 3] {
    let n = neighbour_normal::<1>(view, depth, x, y);
    [n[0].v, n[1].v, n[2].v]
}

fn neighbour_normal<const N: usize>(view: &CameraView, depth: &[f64], x: usize, y: usize) -> DVec3<N> {
    let w = view.width;
    let point = |px: usize, py: usize, slot: usize| -> DVec3<N> {
        let r = view.pixel_ray(px, py);
        let d = if slot < N {
            Dual::var(depth[py * w + px], slot)
        } else {
            Dual::constant(depth[py * w + px])
        };
        [d * r.x, d * r.y, d * r.z]
    };
    let p0 = point(x - 1, y, 0);
    let p1 = point(x + 1, y, 1);
    let p2 = point(x, y + 1, 2);
    let p3 = point(x, y - 1, 3);
    let a = [p0[0] - p1[0], p0[1] - p1[1], p0[2] - p1[2]];
    let b = [p3[0] - p2[0], p3[1] - p2[1], p3[2] - p2[2]];
    let c = cross(&a, &b);
    let len = dot(&c, &c).sqrt();
    let rc = view.pixel_ray(x, y);
    let facing = c[0].v * rc.x + c[1].v * rc.y + c[2].v * rc.z;
    let s = if facing > 0.0 { -1.0 } else { 1.0 };
    c.map(|v| v / len * s)
}

/// Edge-weighted L1 distance between depth-derived and rendered normals.
/// `normal` is the rendered world-frame normal map.
pub fn depth_normal_loss(view: &CameraView, depth: &[f64], valid: &[bool], normal: &[f64], gray: &Image) -> (f64, MapGradients) {
    let (w, h) = (view.width, view.height);
    let weight = edge_weight(gray);
    let w2c = view.w2c();
    let mut grad = MapGradients::geometry_zeros(w * h);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !interior(valid, w, h, x, y) {
                continue;
            }
            let i = y * w + x;
            let nd = neighbour_normal::<7>(view, depth, x, y);
            if !nd.iter().all(|v| v.v.is_finite()) {
                continue;
            }
            let nw: DVec3<7> = [0, 1, 2].map(|c| Dual::var(normal[3 * i + c], 4 + c));
            let mut l1 = Dual::constant(0.0);
            for r in 0..3 {
                let nc = nw[0] * w2c[(r, 0)] + nw[1] * w2c[(r, 1)] + nw[2] * w2c[(r, 2)];
                l1 = l1 + (nd[r] - nc).abs();
            }
            let k = weight[i];
            sum += k * l1.v;
            count += 1;
            for (slot, j) in [(0, i - 1), (1, i + 1), (2, i + w), (3, i - w)] {
                grad.depth[j] += k * l1.d[slot];
            }
            for c in 0..3 {
                grad.normal[3 * i + c] += k * l1.d[4 + c];
            }
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        sum *= inv;
        grad.scale(inv);
    }
    (sum, grad)
}
