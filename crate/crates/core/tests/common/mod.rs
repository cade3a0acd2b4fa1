#![allow(dead_code)]

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsplat::math::{Mat3, Vec3};
use tsplat::scene::{CameraView, GaussianPrimitive, Scene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Five large, well separated planar Gaussians in front of an identity camera
/// at 16×16, with every pixel well inside all cutoffs and away from the depth
/// validity threshold, so the rendered maps are smooth in every parameter.
pub fn gradient_scene(seed: u64, sh_degree: usize) -> (Scene, CameraView) {
    let view = CameraView::pinhole(0, 20.0, 16, 16, Mat3::identity(), Vec3::zeros());
    for attempt in 0..100 {
        let mut r = rng(seed * 1000 + attempt);
        let mut gs = Vec::new();
        for k in 0..5 {
            let z = 3.0 + 0.5 * k as f64 + r.random_range(-0.1..0.1);
            let pos = Vec3::new(r.random_range(-0.1..0.1) * z, r.random_range(-0.1..0.1) * z, z);
            let q = Vector4::new(
                1.0,
                r.random_range(-0.25..0.25),
                r.random_range(-0.25..0.25),
                r.random_range(-0.25..0.25),
            );
            let scale = Vec3::new(
                r.random_range(0.45..0.6) * z,
                r.random_range(0.35..0.42) * z,
                r.random_range(0.05..0.1) * z,
            );
            let color = Vec3::new(r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
            let mut g = GaussianPrimitive::new(pos, scale, q, r.random_range(0.5..0.75), color);
            // unnormalized on purpose: the renderer normalizes internally
            g.rotation = q * r.random_range(0.8..1.2);
            if sh_degree > 0 {
                for c in g.sh_rest.iter_mut() {
                    for v in c.iter_mut() {
                        *v = r.random_range(-0.2..0.2);
                    }
                }
            }
            gs.push(g);
        }
        let mut scene = Scene::new(gs);
        scene.sh_degree = sh_degree;
        let out = tsplat::raster::render(&scene, &view);
        let ok = out.alpha.iter().all(|a| (a - 0.5).abs() > 0.05)
            && out.depth_valid.iter().filter(|v| **v).count() > 0
            && out.contributors.iter().all(|&c| c == 5);
        if ok {
            return (scene, view);
        }
    }
    panic!("no smooth gradient scene for seed {seed}");
}

/// Maximum over entries of |a − n| / max(|n|, floor), where the floor is
/// 1e-3 of the largest numerical entry so that near-zero entries are judged
/// against the scale of the whole gradient.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn random_weights(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}
