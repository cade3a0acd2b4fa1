//! Geometry regularization: multi-view geometric and photometric consistency,
//! texture-less damping, depth-normal consistency, flattening and the total
//! objective.

pub mod dual;
mod multiview;
mod single;

pub use multiview::{
    homography, mv_geometric_loss, mv_photometric_loss, plane_distance, zncc, MvGeoResult, ViewMaps, ViewPair,
    ZnccResult, ZNCC_RADIUS,
};
pub use single::{depth_normal, depth_normal_loss, edge_weight, textureless_loss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{CameraView, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoLossWeights {
    /// Depth-normal consistency.
    pub cons: f64,
    /// Multi-view geometric.
    pub mvgeo: f64,
    /// Multi-view photometric (ZNCC).
    pub zncc: f64,
    /// Texture-less depth damping.
    pub gran: f64,
    pub flatten: f64,
}

impl Default for GeoLossWeights {
    fn default() -> Self {
        Self {
            cons: 0.01,
            mvgeo: 0.2,
            zncc: 0.05,
            gran: 0.2,
            flatten: 100.0,
        }
    }
}

impl GeoLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cons", self.cons),
            ("mvgeo", self.mvgeo),
            ("zncc", self.zncc),
            ("gran", self.gran),
            ("flatten", self.flatten),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components of one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub rgb: f64,
    pub mask: f64,
    pub flatten: f64,
    pub cons: f64,
    pub mvgeo: f64,
    pub zncc: f64,
    pub gran: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 7] = ["rgb", "mask", "flatten", "cons", "mvgeo", "zncc", "gran"];

    pub fn values(&self) -> [f64; 7] {
        [self.rgb, self.mask, self.flatten, self.cons, self.mvgeo, self.zncc, self.gran]
    }

    pub fn geometry(&self, w: &GeoLossWeights) -> f64 {
        w.cons * self.cons + w.mvgeo * self.mvgeo + w.zncc * self.zncc + w.gran * self.gran
    }

    /// L_rgb + λ7 L_flatten + L_mask + L_geo; fails on the first non-finite term.
    pub fn total(&self, w: &GeoLossWeights) -> Result<f64> {
        for (name, v) in Self::NAMES.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term: name, value: v });
            }
        }
        Ok(self.rgb + w.flatten * self.flatten + self.mask + self.geometry(w))
    }
}

/// Mean over Gaussians of the smallest scale, and its gradient with respect to
/// each Gaussian's log-scales.
pub fn flatten_loss(scene: &Scene) -> (f64, Vec<[f64; 3]>) {
    let n = scene.gaussians.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    let grads = scene
        .gaussians
        .iter()
        .map(|g| {
            let k = g.min_axis();
            let s = g.log_scale[k].exp();
            sum += s;
            let mut d = [0.0; 3];
            d[k] = s * inv;
            d
        })
        .collect();
    (sum * inv, grads)
}

/// Up to `count` reference views for `source`: nearest camera centers among
/// views whose viewing directions differ by less than `max_angle_deg`.
pub fn select_reference_views(views: &[CameraView], source: usize, count: usize, max_angle_deg: f64) -> Vec<usize> {
    let s = &views[source];
    let cos_max = max_angle_deg.to_radians().cos();
    let mut cands: Vec<(f64, usize)> = views
        .iter()
        .enumerate()
        .filter(|(i, v)| *i != source && v.forward().dot(&s.forward()) > cos_max)
        .map(|(i, v)| ((v.center - s.center).norm(), i))
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands.into_iter().take(count).map(|(_, i)| i).collect()
}
