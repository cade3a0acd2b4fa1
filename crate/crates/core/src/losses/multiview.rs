use log::warn;

use super::dual::{dot, DVec3, Dual};
use crate::img::Image;
use crate::math::{Mat3, Vec3};
use crate::raster::{MapGradients, RenderOutput};
use crate::scene::CameraView;

/// A source view and a reference view with the pose of the source camera frame
/// expressed in the reference camera frame: X_r = R_sr X_s + T_sr.
#[derive(Clone, Debug)]
pub struct ViewPair {
    pub source: CameraView,
    pub reference: CameraView,
    pub r_sr: Mat3,
    pub t_sr: Vec3,
}

impl ViewPair {
    pub fn new(source: &CameraView, reference: &CameraView) -> Self {
        let r_sr = reference.rotation_c2w.transpose() * source.rotation_c2w;
        let t_sr = reference.rotation_c2w.tr_mul(&(source.center - reference.center));
        Self {
            source: source.clone(),
            reference: reference.clone(),
            r_sr,
            t_sr,
        }
    }

    pub fn reversed(&self) -> Self {
        Self::new(&self.reference, &self.source)
    }
}

/// Plane-induced homography K_r (R_sr − T_sr nᵀ / d) K_s⁻¹ for a plane with
/// camera-facing unit normal `n` (source camera frame) at distance `d` from the
/// source center.
pub fn homography(pair: &ViewPair, n: &Vec3, d: f64) -> Mat3 {
    let k_s_inv = pair.source.intrinsics.try_inverse().expect("invertible intrinsics");
    pair.reference.intrinsics * (pair.r_sr - pair.t_sr * n.transpose() / d) * k_s_inv
}

/// Distance from the camera center to the plane through the pixel's depth point
/// with camera-frame normal `n_cam`: d = −D (n · K⁻¹p̃).
pub fn plane_distance(view: &CameraView, x: usize, y: usize, depth: f64, n_cam: &Vec3) -> f64 {
    -depth * n_cam.dot(&view.pixel_ray(x, y))
}

/// Depth and world normal maps of one rendered view.
#[derive(Clone, Copy, Debug)]
pub struct ViewMaps<'a> {
    pub view: &'a CameraView,
    pub depth: &'a [f64],
    pub valid: &'a [bool],
    /// World-frame unit normals, 3 per pixel.
    pub normal: &'a [f64],
}

impl<'a> ViewMaps<'a> {
    pub fn from_render(view: &'a CameraView, out: &'a RenderOutput) -> Self {
        Self {
            view,
            depth: &out.depth,
            valid: &out.depth_valid,
            normal: &out.normal.data,
        }
    }

    fn camera_normal<const N: usize>(&self, i: usize, slot: usize) -> DVec3<N> {
        let w2c = self.view.w2c();
        let nw: DVec3<N> = [0, 1, 2].map(|c| Dual::var(self.normal[3 * i + c], slot + c));
        [0, 1, 2].map(|r| nw[0] * w2c[(r, 0)] + nw[1] * w2c[(r, 1)] + nw[2] * w2c[(r, 2)])
    }
}

/// Applies the plane map to camera ray `v`: returns the pixel of the mapped point
/// in the target camera, or `None` behind it.
fn map_ray<const N: usize>(
    v: &DVec3<N>,
    n: &DVec3<N>,
    dist: Dual<N>,
    r: &Mat3,
    t: &Vec3,
    k: &Mat3,
) -> Option<[Dual<N>; 2]> {
    let s = dot(n, v) / dist;
    let x: DVec3<N> = [0, 1, 2].map(|i| v[0] * r[(i, 0)] + v[1] * r[(i, 1)] + v[2] * r[(i, 2)] - s * t[i]);
    if !(x[2].v > 1e-12) {
        return None;
    }
    let u = x[0] / x[2];
    let w = x[1] / x[2];
    Some([u * k[(0, 0)] + w * k[(0, 1)] + k[(0, 2)], w * k[(1, 1)] + k[(1, 2)]])
}

fn const_ray<const N: usize>(v: Vec3) -> DVec3<N> {
    [Dual::constant(v.x), Dual::constant(v.y), Dual::constant(v.z)]
}

#[derive(Clone, Debug, Default)]
pub struct MvGeoResult {
    pub value: f64,
    pub source_grad: MapGradients,
    pub reference_grad: MapGradients,
    pub kept: usize,
    pub filtered: usize,
}

impl MvGeoResult {
    pub fn filtered_fraction(&self) -> f64 {
        let n = self.kept + self.filtered;
        if n == 0 {
            0.0
        } else {
            self.filtered as f64 / n as f64
        }
    }
}

/// Round-trip reprojection error through each view's own rendered plane.
pub fn mv_geometric_loss(pair: &ViewPair, src: &ViewMaps, rf: &ViewMaps, threshold: f64) -> MvGeoResult {
    let (ws, hs) = (src.view.width, src.view.height);
    let (wr, hr) = (rf.view.width, rf.view.height);
    let mut out = MvGeoResult {
        source_grad: MapGradients::geometry_zeros(ws * hs),
        reference_grad: MapGradients::geometry_zeros(wr * hr),
        ..Default::default()
    };
    let back = pair.reversed();
    let kr = &rf.view.intrinsics;
    let mut sum = 0.0;
    for y in 0..hs {
        for x in 0..ws {
            let i = y * ws + x;
            if !src.valid[i] {
                continue;
            }
            let v = const_ray::<8>(src.view.pixel_ray(x, y));
            let ns = src.camera_normal::<8>(i, 1);
            let dist_s = -(Dual::var(src.depth[i], 0) * dot(&ns, &v));
            if !(dist_s.v > 0.0) {
                continue;
            }
            let Some(q) = map_ray(&v, &ns, dist_s, &pair.r_sr, &pair.t_sr, kr) else {
                continue;
            };
            let (qx, qy) = (q[0].v.floor(), q[1].v.floor());
            if !(qx >= 0.0 && qy >= 0.0 && qx < wr as f64 && qy < hr as f64) {
                continue;
            }
            let j = qy as usize * wr + qx as usize;
            if !rf.valid[j] {
                continue;
            }
            let nr = rf.camera_normal::<8>(j, 5);
            let vr = const_ray::<8>(rf.view.pixel_ray(qx as usize, qy as usize));
            let dist_r = -(Dual::var(rf.depth[j], 4) * dot(&nr, &vr));
            if !(dist_r.v > 0.0) {
                continue;
            }
            let uy = (q[1] - kr[(1, 2)]) / kr[(1, 1)];
            let ux = (q[0] - kr[(0, 2)] - uy * kr[(0, 1)]) / kr[(0, 0)];
            let u = [ux, uy, Dual::constant(1.0)];
            let Some(p) = map_ray(&u, &nr, dist_r, &back.r_sr, &back.t_sr, &src.view.intrinsics) else {
                continue;
            };
            let err = (p[0] - (x as f64 + 0.5)).abs() + (p[1] - (y as f64 + 0.5)).abs();
            if !(err.v <= threshold) {
                out.filtered += 1;
                continue;
            }
            out.kept += 1;
            sum += err.v;
            out.source_grad.depth[i] += err.d[0];
            out.reference_grad.depth[j] += err.d[4];
            for c in 0..3 {
                out.source_grad.normal[3 * i + c] += err.d[1 + c];
                out.reference_grad.normal[3 * j + c] += err.d[5 + c];
            }
        }
    }
    if out.kept == 0 {
        warn!(
            "multi-view geometric loss: no usable overlap between views {} and {}",
            pair.source.id, pair.reference.id
        );
        out.source_grad.scale(0.0);
        out.reference_grad.scale(0.0);
        return out;
    }
    let inv = 1.0 / out.kept as f64;
    out.value = sum * inv;
    out.source_grad.scale(inv);
    out.reference_grad.scale(inv);
    out
}

pub const ZNCC_RADIUS: isize = 3;

/// Sum of squared deviations below which a patch counts as constant.
const MIN_PATCH_ENERGY: f64 = 1e-12;

/// Zero-mean normalized cross-correlation of two equally sized patches, with
/// the denominator floored at 1e-6. `None` when either patch is constant.
pub fn zncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= MIN_PATCH_ENERGY || sbb <= MIN_PATCH_ENERGY {
        return None;
    }
    Some(sab / (saa * sbb).sqrt().max(1e-6))
}

/// Bilinear sample at a continuous pixel coordinate (centers at +0.5) with the
/// derivative with respect to that coordinate. `None` outside the image.
fn bilinear(img: &[f64], w: usize, h: usize, u: f64, v: f64) -> Option<(f64, f64, f64)> {
    let (fu, fv) = (u - 0.5, v - 0.5);
    let (x0, y0) = (fu.floor(), fv.floor());
    if !(x0 >= 0.0 && y0 >= 0.0 && x0 + 1.0 <= (w - 1) as f64 && y0 + 1.0 <= (h - 1) as f64) {
        return None;
    }
    let (tx, ty) = (fu - x0, fv - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let p = |x: usize, y: usize| img[y * w + x];
    let (a, b, c, d) = (p(x0, y0), p(x0 + 1, y0), p(x0, y0 + 1), p(x0 + 1, y0 + 1));
    let top = a + (b - a) * tx;
    let bot = c + (d - c) * tx;
    let val = top + (bot - top) * ty;
    let du = (b - a) * (1.0 - ty) + (d - c) * ty;
    let dv = bot - top;
    Some((val, du, dv))
}

#[derive(Clone, Debug, Default)]
pub struct ZnccResult {
    pub value: f64,
    pub source_grad: MapGradients,
    pub kept: usize,
    /// Patches skipped for low mask coverage or zero variance.
    pub skipped: usize,
}

/// Patch photometric consistency: 7×7 source patches against the reference
/// grayscale image warped through the source pixel's rendered plane.
pub fn mv_photometric_loss(
    pair: &ViewPair,
    src: &ViewMaps,
    gray_s: &Image,
    gray_r: &Image,
    mask_s: Option<&[f64]>,
    mask_r: Option<&[f64]>,
) -> ZnccResult {
    let (ws, hs) = (src.view.width, src.view.height);
    let (wr, hr) = (gray_r.width, gray_r.height);
    let mut out = ZnccResult {
        source_grad: MapGradients::geometry_zeros(ws * hs),
        ..Default::default()
    };
    let kr = &pair.reference.intrinsics;
    let rad = ZNCC_RADIUS;
    let n = ((2 * rad + 1) * (2 * rad + 1)) as usize;
    let mut a = vec![0.0; n];
    let mut b: Vec<Dual<4>> = vec![Dual::constant(0.0); n];
    let mut sum = 0.0;
    for y in rad as usize..hs.saturating_sub(rad as usize) {
        'pixel: for x in rad as usize..ws.saturating_sub(rad as usize) {
            let i = y * ws + x;
            if !src.valid[i] {
                continue;
            }
            let ns = src.camera_normal::<4>(i, 1);
            let vc = const_ray::<4>(src.view.pixel_ray(x, y));
            let dist = -(Dual::var(src.depth[i], 0) * dot(&ns, &vc));
            if !(dist.v > 0.0) {
                continue;
            }
            let mut ms = 0.0;
            let mut mr = 0.0;
            let mut k = 0;
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    let (px, py) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                    a[k] = gray_s.data[py * ws + px];
                    if let Some(m) = mask_s {
                        ms += m[py * ws + px];
                    }
                    let v = const_ray::<4>(src.view.pixel_ray(px, py));
                    let Some(q) = map_ray(&v, &ns, dist, &pair.r_sr, &pair.t_sr, kr) else {
                        continue 'pixel;
                    };
                    let Some((val, du, dv)) = bilinear(&gray_r.data, wr, hr, q[0].v, q[1].v) else {
                        continue 'pixel;
                    };
                    if let Some(m) = mask_r {
                        mr += bilinear(m, wr, hr, q[0].v, q[1].v).map_or(0.0, |s| s.0);
                    }
                    let mut s = Dual::constant(val);
                    for t in 0..4 {
                        s.d[t] = du * q[0].d[t] + dv * q[1].d[t];
                    }
                    b[k] = s;
                    k += 1;
                }
            }
            let nf = n as f64;
            if (mask_s.is_some() && ms / nf < 0.5) || (mask_r.is_some() && mr / nf < 0.5) {
                out.skipped += 1;
                continue;
            }
            let ma = a.iter().sum::<f64>() / nf;
            let mb = b.iter().fold(Dual::constant(0.0), |acc, v| acc + *v) / nf;
            let mut sab = Dual::constant(0.0);
            let mut saa = 0.0;
            let mut sbb = Dual::constant(0.0);
            for (av, bv) in a.iter().zip(&b) {
                let da = av - ma;
                let db = *bv - mb;
                sab = sab + db * da;
                saa += da * da;
                sbb = sbb + db * db;
            }
            if saa <= MIN_PATCH_ENERGY || sbb.v <= MIN_PATCH_ENERGY {
                out.skipped += 1;
                continue;
            }
            let den = (sbb * saa).sqrt().floor_at(1e-6);
            let loss = (-(sab / den) + 1.0).abs();
            out.kept += 1;
            sum += loss.v;
            out.source_grad.depth[i] += loss.d[0];
            for c in 0..3 {
                out.source_grad.normal[3 * i + c] += loss.d[1 + c];
            }
        }
    }
    if out.kept > 0 {
        let inv = 1.0 / out.kept as f64;
        out.value = sum * inv;
        out.source_grad.scale(inv);
    }
    out
}
