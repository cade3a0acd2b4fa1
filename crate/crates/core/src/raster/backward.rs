use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;

use super::forward::{sample, RenderOutput};
use super::sh::{rest_count, sh_basis};
use crate::math::{quat_to_mat_backward, Mat3, Vec3};
use crate::scene::{slot, CameraView, Scene, PARAM_LEN};

/// Upstream gradients on each rendered map. An empty vector means zero.
#[derive(Clone, Debug, Default)]
pub struct MapGradients {
    /// 3 per pixel.
    pub color: Vec<f64>,
    pub alpha: Vec<f64>,
    /// On the unit normal, 3 per pixel.
    pub normal: Vec<f64>,
    pub distance: Vec<f64>,
    /// Only flows through pixels with a valid depth.
    pub depth: Vec<f64>,
}

impl MapGradients {
    pub fn zeros(pixels: usize) -> Self {
        Self {
            color: vec![0.0; 3 * pixels],
            alpha: vec![0.0; pixels],
            normal: vec![0.0; 3 * pixels],
            distance: vec![0.0; pixels],
            depth: vec![0.0; pixels],
        }
    }

    /// Zero depth and normal gradients; the other maps stay empty.
    pub fn geometry_zeros(pixels: usize) -> Self {
        Self {
            normal: vec![0.0; 3 * pixels],
            depth: vec![0.0; pixels],
            ..Default::default()
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in [&mut self.color, &mut self.alpha, &mut self.normal, &mut self.distance, &mut self.depth] {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// self += k · other, growing empty maps as needed.
    pub fn add_scaled(&mut self, other: &MapGradients, k: f64) {
        let pairs = [
            (&mut self.color, &other.color),
            (&mut self.alpha, &other.alpha),
            (&mut self.normal, &other.normal),
            (&mut self.distance, &other.distance),
            (&mut self.depth, &other.depth),
        ];
        for (a, b) in pairs {
            if b.is_empty() {
                continue;
            }
            if a.is_empty() {
                a.resize(b.len(), 0.0);
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianGradients {
    /// One flattened row per scene Gaussian, laid out like `GaussianPrimitive::to_params`.
    pub params: Vec<[f64; PARAM_LEN]>,
    /// Gradient with respect to the 2D pixel-space mean.
    pub mean2d: Vec<[f64; 2]>,
    /// Gaussians that were binned into at least one tile.
    pub visible: Vec<bool>,
}

impl GaussianGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAM_LEN]; n],
            mean2d: vec![[0.0; 2]; n],
            visible: vec![false; n],
        }
    }

    pub fn add(&mut self, other: &GaussianGradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.mean2d.iter_mut().zip(&other.mean2d) {
            a[0] += b[0];
            a[1] += b[1];
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= *b;
        }
    }
}

/// Screen-space gradient accumulated for one projected Gaussian.
#[derive(Clone, Copy, Default)]
struct Acc {
    color: [f64; 3],
    normal: [f64; 3],
    distance: f64,
    opacity_logit: f64,
    mean: [f64; 2],
    conic: [f64; 3],
}

impl Acc {
    fn add(&mut self, o: &Acc) {
        for c in 0..3 {
            self.color[c] += o.color[c];
            self.normal[c] += o.normal[c];
            self.conic[c] += o.conic[c];
        }
        self.distance += o.distance;
        self.opacity_logit += o.opacity_logit;
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
    }
}

#[inline]
fn at(v: &[f64], i: usize) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v[i]
    }
}

/// Reverse pass of `render`. `out` must come from rendering `scene` into `view`.
pub fn render_backward(scene: &Scene, view: &CameraView, out: &RenderOutput, up: &MapGradients) -> GaussianGradients {
    let st = &out.state;
    let settings = &st.settings;
    let ts = settings.tile_size;
    let (width, height) = (out.width, out.height);
    let k = &view.intrinsics;
    let (cx, cy) = (k[(0, 2)], k[(1, 2)]);
    let rot = &view.rotation_c2w;

    let per_tile: Vec<Vec<Acc>> = st
        .tiles
        .par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let mut acc = vec![Acc::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            let (tx, ty) = (ti % st.tiles_x, ti / st.tiles_x);
            for y in ty * ts..((ty + 1) * ts).min(height) {
                let by = (y as f64 + 0.5) - cy;
                for x in tx * ts..((tx + 1) * ts).min(width) {
                    let i = y * width + x;
                    let g_c = [at(&up.color, 3 * i), at(&up.color, 3 * i + 1), at(&up.color, 3 * i + 2)];
                    let g_a = at(&up.alpha, i);
                    let g_nhat = Vec3::new(at(&up.normal, 3 * i), at(&up.normal, 3 * i + 1), at(&up.normal, 3 * i + 2));
                    let mut g_dist = at(&up.distance, i);
                    let ns = st.normal_sum[i];
                    let len = ns.norm();
                    let mut g_ns = Vec3::zeros();
                    if len > 1e-12 {
                        let nhat = ns / len;
                        g_ns = (g_nhat - nhat * nhat.dot(&g_nhat)) / len;
                    }
                    if out.depth_valid[i] {
                        let g_d = at(&up.depth, i);
                        if g_d != 0.0 {
                            let den = st.denominator[i];
                            g_dist += g_d / den;
                            let ray = rot * view.pixel_ray(x, y);
                            g_ns += ray * (g_d * out.depth[i] / den);
                        }
                    }
                    if g_c == [0.0; 3] && g_a == 0.0 && g_ns == Vec3::zeros() && g_dist == 0.0 {
                        continue;
                    }
                    let col = &out.color.data[3 * i..3 * i + 3];
                    let total = g_c[0] * col[0]
                        + g_c[1] * col[1]
                        + g_c[2] * col[2]
                        + g_a * out.alpha[i]
                        + g_ns.dot(&ns)
                        + g_dist * out.distance[i];

                    let bx = (x as f64 + 0.5) - cx;
                    let mut trans = 1.0;
                    let mut prefix = 0.0;
                    for (j, &gi) in list.iter().take(st.walked[i] as usize).enumerate() {
                        let p = &st.projected[gi as usize];
                        let (dx, dy) = (bx - p.mean_rel[0], by - p.mean_rel[1]);
                        let Some(s) = sample(p, dx, dy, settings) else {
                            continue;
                        };
                        let w = s.alpha * trans;
                        let fg = g_c[0] * p.color[0]
                            + g_c[1] * p.color[1]
                            + g_c[2] * p.color[2]
                            + g_a
                            + g_ns.dot(&p.normal)
                            + g_dist * p.distance;
                        prefix += w * fg;
                        let rest = total - prefix;
                        let d_alpha = trans * fg - rest / (1.0 - s.alpha);
                        let a = &mut acc[j];
                        for c in 0..3 {
                            a.color[c] += w * g_c[c];
                            a.normal[c] += w * g_ns[c];
                        }
                        a.distance += w * g_dist;
                        if !s.clamped {
                            a.opacity_logit += d_alpha * s.gauss * p.opacity * (1.0 - p.opacity);
                            // a = o·exp(-q/2)
                            let d_q = -0.5 * s.alpha * d_alpha;
                            let [ca, cb, cc] = p.conic;
                            a.conic[0] += d_q * dx * dx;
                            a.conic[1] += d_q * 2.0 * dx * dy;
                            a.conic[2] += d_q * dy * dy;
                            a.mean[0] -= d_q * 2.0 * (ca * dx + cb * dy);
                            a.mean[1] -= d_q * 2.0 * (cb * dx + cc * dy);
                        }
                        trans *= 1.0 - s.alpha;
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![Acc::default(); st.projected.len()];
    let mut binned = vec![false; st.projected.len()];
    for (list, acc) in st.tiles.iter().zip(&per_tile) {
        for (&gi, a) in list.iter().zip(acc) {
            screen[gi as usize].add(a);
            binned[gi as usize] = true;
        }
    }

    let mut grads = GaussianGradients::zeros(scene.gaussians.len());
    let w2c = view.w2c();
    let (fx, skew, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    for ((p, a), &vis) in st.projected.iter().zip(&screen).zip(&binned) {
        if !vis {
            continue;
        }
        let g = &scene.gaussians[p.index];
        let row = &mut grads.params[p.index];
        grads.visible[p.index] = true;
        grads.mean2d[p.index] = a.mean;

        let mut d_mu = Vec3::zeros();
        let mut d_rot = Mat3::zeros();

        // color and view-dependent terms
        for c in 0..3 {
            row[slot::COLOR + c] += a.color[c];
        }
        let deg = st.sh_degree;
        if deg > 0 {
            let v = g.position - view.center;
            let vn = v.norm();
            let dir = v / vn;
            let (basis, jac) = sh_basis(deg, &dir);
            let mut d_dir = Vec3::zeros();
            for kk in 0..rest_count(deg) {
                for c in 0..3 {
                    row[slot::SH + 3 * kk + c] += a.color[c] * basis[kk];
                    let s = a.color[c] * g.sh_rest[kk][c];
                    for e in 0..3 {
                        d_dir[e] += s * jac[kk][e];
                    }
                }
            }
            d_mu += (d_dir - dir * dir.dot(&d_dir)) / vn;
        }

        row[slot::OPACITY] += a.opacity_logit;

        // d = n·(C − μ), n = sign·R[:, axis]
        let d_n = Vec3::from(a.normal) + (view.center - g.position) * a.distance;
        d_mu -= p.normal * a.distance;
        for r in 0..3 {
            d_rot[(r, p.axis)] += p.normal_sign * d_n[r];
        }

        // mean
        let t = &p.t;
        let iz = 1.0 / t.z;
        let d_xn = a.mean[0] * fx;
        let d_yn = a.mean[0] * skew + a.mean[1] * fy;
        let mut d_t = Vec3::new(d_xn * iz, d_yn * iz, -(d_xn * t.x + d_yn * t.y) * iz * iz);

        // conic -> 2D covariance
        let q = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
        let g_q = Matrix2::new(a.conic[0], 0.5 * a.conic[1], 0.5 * a.conic[1], a.conic[2]);
        let g_s2 = -(q * g_q * q);
        let m: Matrix2x3<f64> = p.jacobian * w2c;
        let g_s3 = m.transpose() * g_s2 * m;
        let g_m = 2.0 * g_s2 * m * p.cov3d;
        let g_j = g_m * w2c.transpose();

        let (x, y) = (t.x, t.y);
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        d_t.x += g_j[(0, 2)] * (-fx * iz2);
        d_t.y += g_j[(0, 2)] * (-skew * iz2) + g_j[(1, 2)] * (-fy * iz2);
        d_t.z += g_j[(0, 0)] * (-fx * iz2)
            + g_j[(0, 1)] * (-skew * iz2)
            + g_j[(0, 2)] * (2.0 * (fx * x + skew * y) * iz3)
            + g_j[(1, 1)] * (-fy * iz2)
            + g_j[(1, 2)] * (2.0 * fy * y * iz3);
        d_mu += w2c.transpose() * d_t;

        // Σ3 = R S² Rᵀ
        let s = g.scale();
        let s2 = s.component_mul(&s);
        let r = &p.rotation;
        d_rot += 2.0 * g_s3 * r * Mat3::from_diagonal(&s2);
        let inner = r.transpose() * g_s3 * r;
        for kk in 0..3 {
            row[slot::LOG_SCALE + kk] += 2.0 * s2[kk] * inner[(kk, kk)];
        }

        let qn = g.rotation.norm();
        let qu = g.rotation / qn;
        let d_qu = quat_to_mat_backward(&qu, &d_rot);
        let d_q = (d_qu - qu * qu.dot(&d_qu)) / qn;
        for kk in 0..4 {
            row[slot::ROTATION + kk] += d_q[kk];
        }
        for kk in 0..3 {
            row[slot::POSITION + kk] += d_mu[kk];
        }
    }
    grads
}
