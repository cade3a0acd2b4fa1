//! Scene representation: planar Gaussian primitives, cameras and training images.

mod checkpoint;
mod ply;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NetworkParams, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ply::write_gaussians_ply;

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::{logit, quat_to_mat, sigmoid, Mat3, Vec3};

/// Number of view-dependent SH coefficients beyond the base color (degree 2).
pub const SH_REST: usize = 8;

/// Length of the flattened optimizer row of one Gaussian.
pub const PARAM_LEN: usize = 14 + 3 * SH_REST;

/// Offsets of each parameter group inside a flattened row.
pub mod slot {
    pub const POSITION: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;
    pub const SH: usize = 14;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vec3,
    /// Natural log of the per-axis extents.
    pub log_scale: Vec3,
    /// Quaternion (w, x, y, z); kept unit length between optimizer steps.
    pub rotation: Vector4<f64>,
    /// Pre-sigmoid opacity.
    pub opacity_logit: f64,
    /// Base (degree 0) linear color.
    pub color: Vec3,
    /// Degree 1 and 2 SH coefficients per channel; unused when the scene is degree 0.
    pub sh_rest: [[f64; 3]; SH_REST],
}

impl GaussianPrimitive {
    pub fn new(position: Vec3, scale: Vec3, rotation: Vector4<f64>, opacity: f64, color: Vec3) -> Self {
        Self {
            position,
            log_scale: scale.map(f64::ln),
            rotation: rotation.normalize(),
            opacity_logit: logit(opacity),
            color,
            sh_rest: [[0.0; 3]; SH_REST],
        }
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn unit_rotation(&self) -> Vector4<f64> {
        self.rotation / self.rotation.norm()
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_mat(&self.unit_rotation())
    }

    /// Index of the smallest scale component; ties go to the lowest axis.
    pub fn min_axis(&self) -> usize {
        let s = &self.log_scale;
        let mut k = 0;
        for i in 1..3 {
            if s[i] < s[k] {
                k = i;
            }
        }
        k
    }

    /// R S Sᵀ Rᵀ.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s = self.scale();
        let d = Matrix3::from_diagonal(&s.component_mul(&s));
        r * d * r.transpose()
    }

    /// Rotated axis of the minimum scale (the Gaussian's plane normal), unsigned.
    pub fn plane_normal(&self) -> Vec3 {
        self.rotation_matrix().column(self.min_axis()).into_owned()
    }

    /// Plane normal flipped to face a camera at `camera_center`.
    pub fn plane_normal_facing(&self, camera_center: &Vec3) -> Vec3 {
        let n = self.plane_normal();
        if n.dot(&(camera_center - self.position)) < 0.0 {
            -n
        } else {
            n
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }

    pub fn to_params(&self) -> [f64; PARAM_LEN] {
        let mut p = [0.0; PARAM_LEN];
        p[slot::POSITION..slot::POSITION + 3].copy_from_slice(self.position.as_slice());
        p[slot::LOG_SCALE..slot::LOG_SCALE + 3].copy_from_slice(self.log_scale.as_slice());
        p[slot::ROTATION..slot::ROTATION + 4].copy_from_slice(self.rotation.as_slice());
        p[slot::OPACITY] = self.opacity_logit;
        p[slot::COLOR..slot::COLOR + 3].copy_from_slice(self.color.as_slice());
        for (k, c) in self.sh_rest.iter().enumerate() {
            p[slot::SH + 3 * k..slot::SH + 3 * k + 3].copy_from_slice(c);
        }
        p
    }

    pub fn from_params(p: &[f64; PARAM_LEN]) -> Self {
        let mut sh_rest = [[0.0; 3]; SH_REST];
        for (k, c) in sh_rest.iter_mut().enumerate() {
            c.copy_from_slice(&p[slot::SH + 3 * k..slot::SH + 3 * k + 3]);
        }
        Self {
            position: Vec3::new(p[0], p[1], p[2]),
            log_scale: Vec3::new(p[3], p[4], p[5]),
            rotation: Vector4::new(p[6], p[7], p[8], p[9]),
            opacity_logit: p[slot::OPACITY],
            color: Vec3::new(p[11], p[12], p[13]),
            sh_rest,
        }
    }
}

/// A set of Gaussians plus the SH degree used to shade them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<GaussianPrimitive>,
    pub sh_degree: usize,
}

impl Scene {
    pub fn new(gaussians: Vec<GaussianPrimitive>) -> Self {
        Self {
            gaussians,
            sh_degree: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn bounds(&self) -> Option<SceneBounds> {
        let first = self.gaussians.first()?;
        let mut min = first.position;
        let mut max = first.position;
        for g in &self.gaussians {
            min = min.inf(&g.position);
            max = max.sup(&g.position);
        }
        Some(SceneBounds { min, max })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl SceneBounds {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i])) {
            return Err(Error::Config(format!(
                "scene bounds min {min:?} must be below max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn expanded(&self, margin: f64) -> Self {
        let m = Vec3::repeat(margin);
        Self {
            min: self.min - m,
            max: self.max + m,
        }
    }
}

/// Pinhole camera. Pixel centers sit at half-integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub id: usize,
    /// Upper-triangular K; the principal point may be anywhere.
    pub intrinsics: Mat3,
    /// Camera-to-world rotation.
    pub rotation_c2w: Mat3,
    pub center: Vec3,
    pub width: usize,
    pub height: usize,
    pub image_path: Option<PathBuf>,
    pub embedding_id: usize,
    /// Offset of this (sub-)image inside its parent full image, in pixels.
    pub crop_origin: (usize, usize),
}

impl CameraView {
    pub fn new(id: usize, intrinsics: Mat3, rotation_c2w: Mat3, center: Vec3, width: usize, height: usize) -> Self {
        Self {
            id,
            intrinsics,
            rotation_c2w,
            center,
            width,
            height,
            image_path: None,
            embedding_id: id,
            crop_origin: (0, 0),
        }
    }

    pub fn pinhole(id: usize, focal: f64, width: usize, height: usize, rotation_c2w: Mat3, center: Vec3) -> Self {
        let k = Matrix3::new(
            focal,
            0.0,
            width as f64 / 2.0,
            0.0,
            focal,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(id, k, rotation_c2w, center, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation_c2w;
        let err = (r * r.transpose() - Mat3::identity()).abs().max();
        if !(err < 1e-9) {
            return Err(Error::Config(format!(
                "camera {}: rotation not orthonormal (error {err:e})",
                self.id
            )));
        }
        let k = &self.intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::Config(format!("camera {}: K must be upper triangular with K[2][2]=1", self.id)));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Config(format!("camera {}: focal lengths must be positive", self.id)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("camera {}: empty image", self.id)));
        }
        Ok(())
    }

    /// World-to-camera rotation.
    pub fn w2c(&self) -> Mat3 {
        self.rotation_c2w.transpose()
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_c2w.tr_mul(&(p - self.center))
    }

    /// Pixel coordinates of a camera-frame point (z must be positive).
    pub fn project_camera(&self, pc: &Vec3) -> Vector2<f64> {
        let k = &self.intrinsics;
        let xn = pc.x / pc.z;
        let yn = pc.y / pc.z;
        Vector2::new(k[(0, 0)] * xn + k[(0, 1)] * yn + k[(0, 2)], k[(1, 1)] * yn + k[(1, 2)])
    }

    pub fn project(&self, p: &Vec3) -> Option<Vector2<f64>> {
        let pc = self.to_camera(p);
        (pc.z > 0.0).then(|| self.project_camera(&pc))
    }

    /// K⁻¹ p̃ for pixel (x, y) at its center; the result has z = 1.
    ///
    /// The offset from the principal point is formed first so that a sub-view
    /// (principal point shifted by its crop origin) yields bit-identical rays.
    #[inline]
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        let k = &self.intrinsics;
        let bx = (x as f64 + 0.5) - k[(0, 2)];
        let by = (y as f64 + 0.5) - k[(1, 2)];
        let ry = by / k[(1, 1)];
        let rx = (bx - k[(0, 1)] * ry) / k[(0, 0)];
        Vec3::new(rx, ry, 1.0)
    }

    /// Ray for a continuous pixel coordinate (pixel centers at +0.5).
    pub fn ray_at(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        let ry = (v - k[(1, 2)]) / k[(1, 1)];
        let rx = (u - k[(0, 2)] - k[(0, 1)] * ry) / k[(0, 0)];
        Vec3::new(rx, ry, 1.0)
    }

    /// Same camera observed at 1/`factor` resolution.
    pub fn downsampled(&self, factor: usize) -> CameraView {
        if factor <= 1 {
            return self.clone();
        }
        let f = factor as f64;
        let mut k = self.intrinsics;
        for c in 0..3 {
            k[(0, c)] /= f;
            k[(1, c)] /= f;
        }
        CameraView {
            intrinsics: k,
            width: self.width.div_ceil(factor),
            height: self.height.div_ceil(factor),
            crop_origin: (self.crop_origin.0 / factor, self.crop_origin.1 / factor),
            ..self.clone()
        }
    }

    /// The window [x0, x0+w) × [y0, y0+h) of this view as a camera of its own.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> CameraView {
        let mut k = self.intrinsics;
        k[(0, 2)] -= x0 as f64;
        k[(1, 2)] -= y0 as f64;
        CameraView {
            intrinsics: k,
            width: w,
            height: h,
            crop_origin: (self.crop_origin.0 + x0, self.crop_origin.1 + y0),
            ..self.clone()
        }
    }

    /// Unit viewing direction (camera +z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation_c2w.column(2).into_owned()
    }
}

#[derive(Clone, Debug)]
pub struct TrainingImage {
    pub pixels: Image,
    pub view: CameraView,
    /// Power-of-two factor relative to the source image.
    pub downsample_level: usize,
}

impl TrainingImage {
    pub fn new(pixels: Image, view: CameraView) -> Result<Self> {
        let img = Self {
            pixels,
            view,
            downsample_level: 1,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.width != self.view.width || self.pixels.height != self.view.height {
            return Err(Error::Shape(format!(
                "image {}x{} does not match view {}x{}",
                self.pixels.width, self.pixels.height, self.view.width, self.view.height
            )));
        }
        if self.pixels.channels != 3 {
            return Err(Error::Shape("training images must be RGB".into()));
        }
        if let Some(v) = self.pixels.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Image(format!("pixel value {v} outside [0,1]")));
        }
        Ok(())
    }

    pub fn downsampled(&self, factor: usize) -> TrainingImage {
        TrainingImage {
            pixels: self.pixels.downsample(factor),
            view: self.view.downsampled(factor),
            downsample_level: self.downsample_level * factor.max(1),
        }
    }
}
