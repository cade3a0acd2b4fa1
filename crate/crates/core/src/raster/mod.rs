//! Differentiable tile-based rasterizer for planar Gaussians.
//!
//! Produces color, accumulated alpha, the α-blended world-frame normal, the
//! α-blended plane distance and the unbiased depth obtained by intersecting each
//! pixel ray with the blended plane, together with the exact reverse pass.

mod backward;
mod forward;
mod sh;

pub use backward::{render_backward, GaussianGradients, MapGradients};
pub use forward::{gaussian_weights, render, render_with, RenderOutput};
pub use sh::{sh_basis, SH_C1, SH_C2};

use nalgebra::{Matrix2, Matrix2x3};

use crate::math::{Mat3, Vec3};
use crate::scene::{CameraView, GaussianPrimitive};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub tile_size: usize,
    /// Camera-frame depth below which a Gaussian is culled.
    pub near: f64,
    /// Isotropic screen-space low-pass added to every 2D covariance (px²).
    pub blur: f64,
    /// Gaussians are ignored beyond this many standard deviations.
    pub cutoff_sigma: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Blending stops once transmittance falls below this.
    pub transmittance_min: f64,
    /// Depth is reported only where accumulated alpha reaches this.
    pub alpha_floor: f64,
    /// Minimum ray/normal denominator for a valid depth.
    pub depth_denominator_min: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            near: 0.01,
            blur: 0.3,
            cutoff_sigma: 3.0,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
            alpha_floor: 0.5,
            depth_denominator_min: 1e-6,
        }
    }
}

/// A Gaussian after projection into one view.
#[derive(Clone, Debug)]
pub struct Projected {
    /// Index into the scene's Gaussian list.
    pub index: usize,
    /// Camera-frame position.
    pub t: Vec3,
    /// 2D mean relative to the principal point: K·(x/z, y/z) without the offset.
    pub mean_rel: [f64; 2],
    /// 2D mean in pixel coordinates.
    pub mean: [f64; 2],
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`, stored as (a, b, c) for [[a, b], [b, c]].
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: Vec3,
    /// World-frame plane normal facing the camera.
    pub normal: Vec3,
    /// Distance from the camera center to the Gaussian plane (positive).
    pub distance: f64,
    /// Conservative screen radius in pixels.
    pub radius: f64,
    pub(crate) normal_sign: f64,
    pub(crate) axis: usize,
    pub(crate) jacobian: Matrix2x3<f64>,
    pub(crate) cov3d: Mat3,
    pub(crate) rotation: Mat3,
}

#[derive(Clone, Debug)]
pub enum Projection {
    Visible(Box<Projected>),
    /// Behind the near plane; not an error.
    Culled,
    /// Covariance or mean not finite; skipped and counted by the renderer.
    NonFinite,
}

/// Projects one Gaussian: screen mean, 2D covariance J·W·Σ·Wᵀ·Jᵀ + blur·I,
/// camera-facing plane normal and plane distance.
pub fn project(
    g: &GaussianPrimitive,
    index: usize,
    view: &CameraView,
    sh_degree: usize,
    settings: &RenderSettings,
) -> Projection {
    let w2c = view.w2c();
    let t = w2c * (g.position - view.center);
    if !t.iter().all(|v| v.is_finite()) {
        return Projection::NonFinite;
    }
    if t.z <= settings.near {
        return Projection::Culled;
    }
    let k = &view.intrinsics;
    let (fx, skew, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    let (xn, yn) = (t.x / t.z, t.y / t.z);
    let mean_rel = [fx * xn + skew * yn, fy * yn];
    let mean = [mean_rel[0] + k[(0, 2)], mean_rel[1] + k[(1, 2)]];
    let iz = 1.0 / t.z;
    let jacobian = Matrix2x3::new(
        fx * iz,
        skew * iz,
        -(fx * t.x + skew * t.y) * iz * iz,
        0.0,
        fy * iz,
        -fy * t.y * iz * iz,
    );
    let rotation = g.rotation_matrix();
    let cov3d = g.covariance();
    let m = jacobian * w2c;
    let cov2d = m * cov3d * m.transpose() + Matrix2::identity() * settings.blur;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) || !det.is_finite() || !cov2d.iter().all(|v| v.is_finite()) {
        return Projection::NonFinite;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = settings.cutoff_sigma * lambda_max.sqrt() + 1.0;

    let axis = g.min_axis();
    let raw_normal: Vec3 = rotation.column(axis).into_owned();
    let to_cam = view.center - g.position;
    let normal_sign = if raw_normal.dot(&to_cam) < 0.0 { -1.0 } else { 1.0 };
    let normal = raw_normal * normal_sign;
    let distance = normal.dot(&to_cam);

    let color = shade(g, sh_degree, &view.center);
    if !color.iter().all(|v| v.is_finite()) || !g.opacity_logit.is_finite() {
        return Projection::NonFinite;
    }
    Projection::Visible(Box::new(Projected {
        index,
        t,
        mean_rel,
        mean,
        cov2d,
        conic,
        opacity: g.opacity(),
        color,
        normal,
        distance,
        radius,
        normal_sign,
        axis,
        jacobian,
        cov3d,
        rotation,
    }))
}

/// View-dependent color: base color plus SH terms up to `sh_degree`.
pub fn shade(g: &GaussianPrimitive, sh_degree: usize, camera_center: &Vec3) -> Vec3 {
    let mut c = g.color;
    if sh_degree == 0 {
        return c;
    }
    let d = g.position - camera_center;
    let dir = d / d.norm();
    let (basis, _) = sh_basis(sh_degree, &dir);
    for (k, coef) in g.sh_rest.iter().enumerate().take(sh::rest_count(sh_degree)) {
        for ch in 0..3 {
            c[ch] += coef[ch] * basis[k];
        }
    }
    c
}
