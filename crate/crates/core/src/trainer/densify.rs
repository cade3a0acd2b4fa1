use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::partition::Rect;
use crate::scene::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyPolicy {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    /// Densification stops after this fraction of the phase.
    pub stop_fraction: f64,
    /// Mean screen-space (NDC) gradient norm above which a Gaussian is densified.
    pub grad_threshold: f64,
    pub opacity_prune: f64,
    /// Gaussians whose largest world scale exceeds this fraction of the
    /// region diagonal are pruned.
    pub max_scale_fraction: f64,
    /// Clone below, split above this fraction of the scene extent.
    pub percent_dense: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 100,
            start: 500,
            stop_fraction: 0.8,
            grad_threshold: 2e-4,
            opacity_prune: 5e-3,
            max_scale_fraction: 0.1,
            percent_dense: 0.01,
            max_gaussians: 1_000_000,
        }
    }
}

impl DensifyPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0
            || !(self.grad_threshold > 0.0)
            || !(self.opacity_prune > 0.0)
            || !(self.max_scale_fraction > 0.0)
            || !(self.percent_dense > 0.0)
            || !(0.0..=1.0).contains(&self.stop_fraction)
        {
            return Err(Error::Config(format!("invalid densify policy {self:?}")));
        }
        Ok(())
    }

    /// Whether densification runs after `iteration` (1-based) of a phase of `total` iterations.
    pub fn due(&self, iteration: usize, total: usize) -> bool {
        self.enabled
            && iteration > self.start
            && iteration % self.interval == 0
            && (iteration as f64) <= self.stop_fraction * total as f64
    }
}

/// Running screen-space gradient statistics.
#[derive(Clone, Debug, Default)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }

    /// `mean2d` are pixel-space gradients; `half` converts them to NDC.
    pub fn add(&mut self, mean2d: &[[f64; 2]], visible: &[bool], half: [f64; 2]) {
        for i in 0..self.grad_sum.len() {
            if visible[i] {
                let g = [mean2d[i][0] * half[0], mean2d[i][1] * half[1]];
                self.grad_sum[i] += (g[0] * g[0] + g[1] * g[1]).sqrt();
                self.count[i] += 1;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clone small and split large high-gradient Gaussians, then prune transparent
/// or oversized ones. Returns the keep mask over [old rows ++ new rows] and the
/// number of appended rows, so optimizer state can follow.
pub fn densify_and_prune(
    scene: &mut Scene,
    stats: &DensifyStats,
    policy: &DensifyPolicy,
    extent: f64,
    diagonal: f64,
    region: Option<&Rect>,
    rng: &mut impl Rng,
) -> Result<(Vec<bool>, usize, DensifyReport)> {
    let n = scene.len();
    let mut cands: Vec<(f64, usize)> = (0..n)
        .filter(|&i| stats.count[i] > 0)
        .map(|i| (stats.grad_sum[i] / stats.count[i] as f64, i))
        .filter(|&(g, i)| {
            g >= policy.grad_threshold
                && region.is_none_or(|r| {
                    let p = scene.gaussians[i].position;
                    r.contains(p.x, p.y)
                })
        })
        .collect();
    // strongest first so a Gaussian cap keeps the most significant
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let room = policy.max_gaussians.saturating_sub(n);
    let mut report = DensifyReport::default();
    let mut added = Vec::new();
    let mut keep = vec![true; n];
    for &(_, i) in &cands {
        let g = &scene.gaussians[i];
        let smax = g.scale().max();
        if smax <= policy.percent_dense * extent {
            if added.len() + 1 > room {
                break;
            }
            added.push(g.clone());
            report.cloned += 1;
        } else {
            if added.len() + 1 > room {
                break;
            }
            let r = g.rotation_matrix();
            let s = g.scale();
            for _ in 0..2 {
                let z = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                let mut c = g.clone();
                c.position += r * s.component_mul(&z);
                c.log_scale -= Vec3::repeat(1.6f64.ln());
                added.push(c);
            }
            keep[i] = false;
            report.split += 1;
        }
    }
    let new_rows = added.len();
    scene.gaussians.extend(added);
    keep.resize(n + new_rows, true);
    for (k, g) in keep.iter_mut().zip(&scene.gaussians) {
        if !*k {
            continue;
        }
        if g.opacity() < policy.opacity_prune || g.scale().max() > policy.max_scale_fraction * diagonal {
            *k = false;
            report.pruned += 1;
        }
    }
    let mut it = keep.iter();
    scene.gaussians.retain(|_| *it.next().unwrap());
    if let Some(bad) = scene.gaussians.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            iteration: 0,
            reason: format!("non-finite Gaussian {bad} after densification"),
        });
    }
    Ok((keep, new_rows, report))
}
