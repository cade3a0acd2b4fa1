//! Analytic and finite-difference checks: criteria 1 to 7.

use nalgebra::Vector4;
use rand::Rng;

use crate::common::{gradient_scene, numeric_gradient, random_weights, relative_error, rng};
use crate::Check;
use tsplat::appearance::{mask_reg_loss, masked_rgb_loss, AppearanceModel, Network, Tensor, TransientMaskModel};
use tsplat::img::Image;
use tsplat::losses::{
    depth_normal_loss, flatten_loss, homography, mv_geometric_loss, mv_photometric_loss, textureless_loss, zncc,
    ViewMaps, ViewPair,
};
use tsplat::math::{look_at, mat_to_quat, Mat3, Vec3};
use tsplat::mesher::{edge_vertex, marching_cubes, TsdfVolume};
use tsplat::partition::{assign_images, build_partition, projected_area_ratio, PartitionConfig, Rect};
use tsplat::raster::{render, render_backward, MapGradients, RenderOutput};
use tsplat::scene::{CameraView, GaussianPrimitive, Scene, SceneBounds, PARAM_LEN};

const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

pub fn tilted_plane_depth() -> Check {
    const TOL: f64 = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, target) in [Vec3::new(0.4, -0.3, 1.0), Vec3::new(-0.6, 0.2, 1.0), Vec3::new(0.1, 0.7, 1.0)]
        .iter()
        .enumerate()
    {
        let view = CameraView::pinhole(k, 40.0, 48, 40, Mat3::identity(), Vec3::new(0.1, -0.2, 0.0));
        let q = mat_to_quat(&look_at(&Vec3::zeros(), target, &Vec3::new(0.0, -1.0, 0.0)));
        let g = GaussianPrimitive::new(Vec3::new(0.3, 0.1, 4.0), Vec3::new(2.0, 2.0, 0.001), q, 0.95, Vec3::repeat(0.5));
        let n = g.plane_normal_facing(&view.center);
        let d = n.dot(&(view.center - g.position));
        let out = render(&Scene::new(vec![g]), &view);
        for y in 0..view.height {
            for x in 0..view.width {
                let i = y * view.width + x;
                if out.alpha[i] <= 0.5 {
                    continue;
                }
                let ray = view.rotation_c2w * view.pixel_ray(x, y);
                let expect = d / (-n.dot(&ray));
                ensure(out.depth_valid[i], || format!("pixel ({x}, {y}) has alpha > 0.5 but no depth"))?;
                worst = worst.max((out.depth[i] - expect).abs());
                checked += 1;
            }
        }
    }
    ensure(checked > 300, || format!("only {checked} pixels with alpha > 0.5"))?;
    ensure(worst < TOL, || format!("max depth error {worst:.3e} ≥ {TOL:e}"))?;
    Ok(format!("{checked} pixels over 3 planes, max depth error {worst:.2e} < {TOL:e}"))
}

// ---------------------------------------------------------------- 2

const GRAD_TOL: f64 = 1e-3;
const NET_TOL: f64 = 1e-2;

fn weighted_sum(out: &RenderOutput, up: &MapGradients) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let depth: Vec<f64> = out
        .depth
        .iter()
        .zip(&out.depth_valid)
        .map(|(d, v)| if *v { *d } else { 0.0 })
        .collect();
    dot(&out.color.data, &up.color)
        + dot(&out.alpha, &up.alpha)
        + dot(&out.normal.data, &up.normal)
        + dot(&out.distance, &up.distance)
        + dot(&depth, &up.depth)
}

fn raster_error(seed: u64, map: usize, sh_degree: usize) -> f64 {
    let (scene, view) = gradient_scene(seed, sh_degree);
    let n = view.width * view.height;
    let mut up = MapGradients::zeros(n);
    let w = |len| random_weights(seed + 17, len);
    match map {
        0 => up.color = w(3 * n),
        1 => up.alpha = w(n),
        2 => up.normal = w(3 * n),
        3 => up.distance = w(n),
        _ => up.depth = w(n),
    }
    let out = render(&scene, &view);
    let grads = render_backward(&scene, &view, &out, &up);
    let x: Vec<f64> = scene.gaussians.iter().flat_map(|g| g.to_params()).collect();
    let analytic: Vec<f64> = grads.params.iter().flatten().copied().collect();
    let numeric = numeric_gradient(&x, 1e-6, |p| {
        let mut s = scene.clone();
        for (k, g) in s.gaussians.iter_mut().enumerate() {
            let row: [f64; PARAM_LEN] = p[k * PARAM_LEN..(k + 1) * PARAM_LEN].try_into().unwrap();
            *g = GaussianPrimitive::from_params(&row);
        }
        weighted_sum(&render(&s, &view), &up)
    });
    relative_error(&analytic, &numeric)
}

/// Plane z = 0 seen by two cameras above it.
fn stereo(w: usize, h: usize) -> (CameraView, CameraView) {
    let cs = Vec3::new(-0.3, -0.2, 3.0);
    let cr = Vec3::new(0.35, 0.1, 2.8);
    let s = CameraView::pinhole(0, 1.1 * w as f64, w, h, look_at(&cs, &Vec3::zeros(), &UP), cs);
    let mut r = CameraView::pinhole(1, 1.0 * w as f64, w, h, look_at(&cr, &Vec3::new(0.1, 0.0, 0.0), &UP), cr);
    r.intrinsics[(0, 2)] += 1.3;
    (s, r)
}

type Maps = (Vec<f64>, Vec<bool>, Vec<f64>);

/// Ray-cast depth and facing world normal of the plane n·X = c.
fn plane_maps(view: &CameraView, n: Vec3, c: f64) -> Maps {
    let facing = if n.dot(&view.center) - c > 0.0 { n } else { -n };
    let mut depth = Vec::new();
    let mut normal = Vec::new();
    for y in 0..view.height {
        for x in 0..view.width {
            let ray = view.rotation_c2w * view.pixel_ray(x, y);
            depth.push((c - n.dot(&view.center)) / n.dot(&ray));
            normal.extend_from_slice(facing.as_slice());
        }
    }
    let valid = depth.iter().map(|d| *d > 0.0).collect();
    (depth, valid, normal)
}

fn texture(p: &Vec3) -> f64 {
    0.5 + 0.2 * (7.0 * p.x).sin() * (5.0 * p.y).cos() + 0.15 * (11.0 * p.x + 3.0 * p.y).sin()
}

fn plane_gray(view: &CameraView, n: Vec3, c: f64) -> Image {
    let mut img = Image::new(view.width, view.height, 1);
    for y in 0..view.height {
        for x in 0..view.width {
            let ray = view.rotation_c2w * view.pixel_ray(x, y);
            let t = (c - n.dot(&view.center)) / n.dot(&ray);
            img.data[y * view.width + x] = texture(&(view.center + ray * t));
        }
    }
    img
}

fn perturbed(mut maps: Maps, seed: u64, amount: f64) -> Maps {
    let mut r = rng(seed);
    for d in maps.0.iter_mut() {
        *d *= 1.0 + r.random_range(-amount..amount);
    }
    for v in maps.2.iter_mut() {
        *v += r.random_range(-amount..amount);
    }
    maps
}

fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
    let mut r = rng(seed);
    Image::from_data(w, h, c, (0..w * h * c).map(|_| r.random::<f64>()).collect())
}

/// Largest per-loss relative error over the seeds, by loss name.
fn loss_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut r = rng(seed + 900);

    // masked RGB with D-SSIM: all three inputs
    let (w, h) = (16, 16);
    let ir = random_image(seed * 10 + 1, w, h, 3);
    let ia = random_image(seed * 10 + 2, w, h, 3);
    let gt = random_image(seed * 10 + 3, w, h, 3);
    let mask: Vec<f64> = (0..w * h).map(|_| r.random_range(0.1..1.0)).collect();
    let l = masked_rgb_loss(&ir, &ia, &gt, Some(&mask));
    let x = [ir.data.clone(), ia.data.clone(), mask.clone()].concat();
    let numeric = numeric_gradient(&x, 1e-6, |p| {
        let (a, rest) = p.split_at(w * h * 3);
        let (b, m) = rest.split_at(w * h * 3);
        masked_rgb_loss(&Image::from_data(w, h, 3, a.to_vec()), &Image::from_data(w, h, 3, b.to_vec()), &gt, Some(m)).value
    });
    let analytic = [l.d_rendered.data, l.d_transformed.data, l.d_mask].concat();
    out.push(("rgb", relative_error(&analytic, &numeric)));

    let (_, g) = mask_reg_loss(&mask);
    out.push(("mask_reg", relative_error(&g, &numeric_gradient(&mask, 1e-6, |m| mask_reg_loss(m).0))));

    // multi-view geometric
    let (s, rf) = stereo(16, 16);
    let n = Vec3::new(0.1, 0.2, 1.0).normalize();
    let (ds, vs, ns) = perturbed(plane_maps(&s, n, 0.0), seed, 0.004);
    let (dr, vr, nr) = perturbed(plane_maps(&rf, n, 0.0), seed + 100, 0.004);
    let pair = ViewPair::new(&s, &rf);
    let eval = |ds: &[f64], ns: &[f64], dr: &[f64], nr: &[f64]| {
        mv_geometric_loss(
            &pair,
            &ViewMaps { view: &s, depth: ds, valid: &vs, normal: ns },
            &ViewMaps { view: &rf, depth: dr, valid: &vr, normal: nr },
            1.0,
        )
    };
    let res = eval(&ds, &ns, &dr, &nr);
    let np = ds.len();
    let x = [ds.clone(), ns.clone(), dr.clone(), nr.clone()].concat();
    let numeric = numeric_gradient(&x, 1e-7, |p| {
        let (a, rest) = p.split_at(np);
        let (b, rest) = rest.split_at(3 * np);
        let (c, d) = rest.split_at(np);
        eval(a, b, c, d).value
    });
    let analytic = [
        res.source_grad.depth,
        res.source_grad.normal,
        res.reference_grad.depth,
        res.reference_grad.normal,
    ]
    .concat();
    let err = if res.kept > 50 { relative_error(&analytic, &numeric) } else { f64::INFINITY };
    out.push(("mv_geometric", err));

    // multi-view photometric
    let (s, rf) = stereo(24, 24);
    let n = Vec3::new(0.1, -0.1, 1.0).normalize();
    let gs = plane_gray(&s, n, 0.0);
    let gr = plane_gray(&rf, n, 0.0);
    let (ds, vs, ns) = perturbed(plane_maps(&s, n, 0.0), seed, 0.03);
    let pair = ViewPair::new(&s, &rf);
    let eval = |d: &[f64], nn: &[f64]| {
        mv_photometric_loss(&pair, &ViewMaps { view: &s, depth: d, valid: &vs, normal: nn }, &gs, &gr, None, None)
    };
    let res = eval(&ds, &ns);
    let np = ds.len();
    let x = [ds.clone(), ns.clone()].concat();
    let numeric = numeric_gradient(&x, 1e-7, |p| {
        let (a, b) = p.split_at(np);
        eval(a, b).value
    });
    let analytic = [res.source_grad.depth, res.source_grad.normal].concat();
    let err = if res.kept > 50 { relative_error(&analytic, &numeric) } else { f64::INFINITY };
    out.push(("mv_photometric", err));

    // texture-less
    let gray = random_image(seed * 10 + 4, 16, 16, 1);
    let depth: Vec<f64> = (0..256).map(|_| r.random_range(1.0..3.0)).collect();
    let valid: Vec<bool> = (0..256).map(|_| r.random::<f64>() > 0.1).collect();
    let (_, g) = textureless_loss(&gray, &depth, &valid);
    let numeric = numeric_gradient(&depth, 1e-6, |d| textureless_loss(&gray, d, &valid).0);
    out.push(("textureless", relative_error(&g, &numeric)));

    // depth-normal consistency
    let rot = look_at(&Vec3::new(0.0, 0.0, 3.0), &Vec3::new(0.2, 0.1, 0.0), &UP);
    let view = CameraView::pinhole(0, 20.0, 16, 16, rot, Vec3::new(0.0, 0.0, 3.0));
    let depth: Vec<f64> = (0..256).map(|_| r.random_range(2.5..3.0)).collect();
    let valid = vec![true; 256];
    let normal: Vec<f64> = (0..768).map(|_| r.random_range(-1.0..1.0)).collect();
    let (_, g) = depth_normal_loss(&view, &depth, &valid, &normal, &gray);
    let x = [depth.clone(), normal.clone()].concat();
    let numeric = numeric_gradient(&x, 1e-7, |p| depth_normal_loss(&view, &p[..256], &valid, &p[256..], &gray).0);
    out.push(("depth_normal", relative_error(&[g.depth, g.normal].concat(), &numeric)));

    // flattening
    let gs: Vec<GaussianPrimitive> = (0..5)
        .map(|_| {
            GaussianPrimitive::new(
                Vec3::zeros(),
                Vec3::new(r.random_range(0.05..1.0), r.random_range(0.05..1.0), r.random_range(0.05..1.0)),
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                0.5,
                Vec3::zeros(),
            )
        })
        .collect();
    let scene = Scene::new(gs);
    let (_, g) = flatten_loss(&scene);
    let x: Vec<f64> = scene.gaussians.iter().flat_map(|g| g.log_scale.iter().copied().collect::<Vec<_>>()).collect();
    let numeric = numeric_gradient(&x, 1e-6, |p| {
        let mut s = scene.clone();
        for (k, g) in s.gaussians.iter_mut().enumerate() {
            g.log_scale = Vec3::new(p[3 * k], p[3 * k + 1], p[3 * k + 2]);
        }
        flatten_loss(&s).0
    });
    out.push(("flatten", relative_error(&g.iter().flatten().copied().collect::<Vec<_>>(), &numeric)));
    out
}

fn net_params<N: Network>(net: &N) -> Vec<f64> {
    net.tensors().iter().flat_map(|t| t.data.clone()).collect()
}

fn set_net_params<N: Network>(net: &mut N, x: &[f64]) {
    let mut k = 0;
    for t in net.tensors_mut() {
        let n = t.len();
        t.data.copy_from_slice(&x[k..k + n]);
        k += n;
    }
}

fn perturb<N: Network>(net: &mut N, seed: u64) {
    let mut r = rng(seed);
    for t in net.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
}

fn flat_grad(g: &[Tensor]) -> Vec<f64> {
    g.iter().flat_map(|t| t.data.clone()).collect()
}

/// Central differences on a random sample of coordinates.
fn sampled_error(x: &[f64], analytic: &[f64], seed: u64, count: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut r = rng(seed);
    let (mut num, mut ana) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let i = r.random_range(0..x.len());
        let mut y = x.to_vec();
        let g = numeric_gradient(&[x[i]], 1e-3, |v| {
            y[i] = v[0];
            f(&y)
        });
        num.push(g[0]);
        ana.push(analytic[i]);
    }
    relative_error(&ana, &num)
}

fn network_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let img = random_image(seed * 7 + 1, 32, 32, 3);

    let mut m = AppearanceModel::new(2, seed);
    perturb(&mut m, seed + 1);
    let weights = random_image(seed * 7 + 2, 32, 32, 3);
    let objective = |m: &AppearanceModel, img: &Image| {
        let t = m.transform(img, 1);
        t.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let pass = m.forward(&img, 1);
    let (pg, ig) = m.backward(&pass, &weights);
    let app_params = sampled_error(&net_params(&m), &flat_grad(&pg), seed + 2, 60, |y| {
        let mut mm = m.clone();
        set_net_params(&mut mm, y);
        objective(&mm, &img)
    });
    let app_input = sampled_error(&img.data, &ig.data, seed + 3, 40, |y| {
        objective(&m, &Image::from_data(32, 32, 3, y.to_vec()))
    });

    let mut t = TransientMaskModel::new(seed + 4);
    perturb(&mut t, seed + 5);
    let weights = random_weights(seed + 6, 32 * 32);
    let pass = t.forward(&img);
    let g = t.backward(&pass, &weights);
    let mask = sampled_error(&net_params(&t), &flat_grad(&g), seed + 7, 60, |y| {
        let mut mm = t.clone();
        set_net_params(&mut mm, y);
        mm.mask(&img).iter().zip(&weights).map(|(a, b)| a * b).sum()
    });
    vec![("appearance", app_params.max(app_input)), ("mask", mask)]
}

pub fn gradient_suite() -> Check {
    const MAPS: [&str; 5] = ["color", "alpha", "normal", "distance", "depth"];
    let mut worst_raster = 0.0f64;
    let mut worst_loss = 0.0f64;
    let mut worst_net = 0.0f64;
    let mut failures = Vec::new();
    for seed in 1..=3u64 {
        for (map, name) in MAPS.iter().enumerate() {
            let e = raster_error(seed, map, 0);
            worst_raster = worst_raster.max(e);
            if !(e < GRAD_TOL) {
                failures.push(format!("raster {name} seed {seed}: {e:.2e}"));
            }
        }
        let e = raster_error(seed + 3, 0, 2);
        worst_raster = worst_raster.max(e);
        if !(e < GRAD_TOL) {
            failures.push(format!("raster color sh2 seed {seed}: {e:.2e}"));
        }
        for (name, e) in loss_errors(seed) {
            worst_loss = worst_loss.max(e);
            if !(e < GRAD_TOL) {
                failures.push(format!("{name} seed {seed}: {e:.2e}"));
            }
        }
        for (name, e) in network_errors(seed) {
            worst_net = worst_net.max(e);
            if !(e < NET_TOL) {
                failures.push(format!("{name} seed {seed}: {e:.2e}"));
            }
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!(
        "3 seeds: raster max {worst_raster:.1e}, losses max {worst_loss:.1e} (< {GRAD_TOL:e}), networks max {worst_net:.1e} (< {NET_TOL:e})"
    ))
}

// ---------------------------------------------------------------- 3

fn cam_normal(view: &CameraView, n_world: Vec3) -> Vec3 {
    let n = view.w2c() * n_world;
    if n.dot(&view.to_camera(&Vec3::zeros())) > 0.0 {
        -n
    } else {
        n
    }
}

pub fn homography_round_trip() -> Check {
    const TOL: f64 = 1e-6;
    let mut r = rng(5);
    let mut worst_h = 0.0f64;
    let mut worst_geo = 0.0f64;
    for _ in 0..20 {
        let (s, rf) = stereo(40, 32);
        let n = Vec3::new(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), 1.0).normalize();
        let c = r.random_range(-0.2..0.2);
        let pair = ViewPair::new(&s, &rf);
        let ns = cam_normal(&s, n);
        let (ds, vs, nms) = plane_maps(&s, n, c);
        let (x, y) = (r.random_range(0..40), r.random_range(0..32));
        let d = -ds[y * 40 + x] * ns.dot(&s.pixel_ray(x, y));
        let h = homography(&pair, &ns, d);
        let nr = pair.r_sr * ns;
        let hr = homography(&pair.reversed(), &nr, d - nr.dot(&pair.t_sr));
        let prod = hr * h;
        let prod = prod / prod[(2, 2)];
        worst_h = worst_h.max((prod - Mat3::identity()).abs().max());

        let (dr, vr, nmr) = plane_maps(&rf, n, c);
        let res = mv_geometric_loss(
            &pair,
            &ViewMaps { view: &s, depth: &ds, valid: &vs, normal: &nms },
            &ViewMaps { view: &rf, depth: &dr, valid: &vr, normal: &nmr },
            1.0,
        );
        ensure(res.kept > 300, || format!("only {} pixels kept", res.kept))?;
        worst_geo = worst_geo.max(res.value);
    }
    ensure(worst_h < TOL, || format!("|H_rs·H_sr − I| = {worst_h:.2e}"))?;
    ensure(worst_geo < TOL, || format!("geometric loss {worst_geo:.2e}"))?;
    Ok(format!("20 planes: max |H_rs·H_sr − I| {worst_h:.1e}, max geometric loss {worst_geo:.1e} (< {TOL:e})"))
}

// ---------------------------------------------------------------- 4

pub fn zncc_affine() -> Check {
    const TOL: f64 = 1e-9;
    let mut r = rng(4);
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..250 {
        let patch: Vec<f64> = (0..49).map(|_| r.random::<f64>()).collect();
        for a in [0.5, 2.0] {
            for b in [-0.2, 0.3] {
                let other: Vec<f64> = patch.iter().map(|v| a * v + b).collect();
                let z = zncc(&patch, &other).ok_or_else(|| "degenerate random patch".to_string())?;
                worst = worst.max((1.0 - z).abs());
                count += 1;
            }
        }
    }
    ensure(worst < TOL, || format!("max |1 − ZNCC| {worst:.2e}"))?;
    Ok(format!("{count} patch pairs, max |1 − ZNCC| {worst:.1e} < {TOL:e}"))
}

// ---------------------------------------------------------------- 5

fn nadir() -> Mat3 {
    Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
}

fn ground_scene(n: usize, extent: f64) -> Scene {
    let mut gs = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let p = Vec3::new((i as f64 + 0.5) * extent / n as f64, (j as f64 + 0.5) * extent / n as f64, 0.0);
            gs.push(GaussianPrimitive::new(
                p,
                Vec3::new(0.05, 0.05, 0.005),
                Vector4::new(1.0, 0.0, 0.0, 0.0),
                0.8,
                Vec3::repeat(0.5),
            ));
        }
    }
    Scene::new(gs)
}

/// 10×10 nadir cameras over [0,4]².
fn grid_views() -> Vec<CameraView> {
    let mut views = Vec::new();
    for j in 0..10 {
        for i in 0..10 {
            let c = Vec3::new((2 * i + 1) as f64 / 5.0, (2 * j + 1) as f64 / 5.0, 10.0);
            views.push(CameraView::pinhole(views.len(), 80.0, 64, 64, nadir(), c));
        }
    }
    views
}

fn slab_hit(o: &Vec3, d: &Vec3, b: &SceneBounds) -> bool {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < b.min[k] || o[k] > b.max[k] {
                return false;
            }
            continue;
        }
        let (a, c) = ((b.min[k] - o[k]) / d[k], (b.max[k] - o[k]) / d[k]);
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    t0 <= t1
}

fn raycast_ratio(b: &SceneBounds, v: &CameraView, n: usize) -> f64 {
    let mut hits = 0;
    for y in 0..n {
        for x in 0..n {
            let u = (x as f64 + 0.5) * v.width as f64 / n as f64;
            let w = (y as f64 + 0.5) * v.height as f64 / n as f64;
            if slab_hit(&v.center, &(v.rotation_c2w * v.ray_at(u, w)), b) {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * n) as f64
}

fn uniform_layout() -> Result<String, String> {
    let views = grid_views();
    let cfg = PartitionConfig {
        max_images: 30,
        min_length: 1.0,
        root: Some([0.0, 0.0, 4.0, 4.0]),
        ..Default::default()
    };
    let p = build_partition(&ground_scene(20, 4.0), &views, &cfg).map_err(|e| e.to_string())?;
    let expected = [
        Rect::new([0.0, 0.0], [2.0, 2.0]),
        Rect::new([0.0, 2.0], [2.0, 4.0]),
        Rect::new([2.0, 0.0], [4.0, 2.0]),
        Rect::new([2.0, 2.0], [4.0, 4.0]),
    ];
    let got: Vec<Rect> = p.leaves.iter().map(|c| c.rect).collect();
    ensure(got == expected, || format!("leaves {got:?}"))?;
    for cell in &p.leaves {
        let mut inside: Vec<usize> = views
            .iter()
            .filter(|v| cell.rect.contains_strict(v.center.x, v.center.y))
            .map(|v| v.id)
            .collect();
        inside.sort();
        ensure(cell.images == inside, || format!("cell {} images {:?}", cell.id, cell.images))?;
        ensure(cell.satisfies_stop(&cfg), || format!("cell {} violates the stopping rule", cell.id))?;
    }
    Ok("uniform layout gives the 4 quadrants with 25 images each".into())
}

fn strip_oracle() -> Result<String, String> {
    let mut r = rng(11);
    let views: Vec<CameraView> = (0..24)
        .map(|id| {
            let a = id as f64 * std::f64::consts::TAU / 24.0;
            let radius = if id % 2 == 0 { 1.4 } else { 2.2 };
            let eye = Vec3::new(1.5 + 1.2 * radius * a.cos(), 0.5 + radius * a.sin(), r.random_range(1.0..2.0));
            let target = Vec3::new(r.random_range(0.0..3.0), r.random_range(0.0..1.0), 0.0);
            CameraView::pinhole(id, 30.0, 64, 48, look_at(&eye, &target, &Vec3::z()), eye)
        })
        .collect();
    let thr = 0.25;
    let (mut checked, mut via_area) = (0, 0);
    for c in 0..3 {
        let expanded = Rect::new([c as f64, 0.0], [c as f64 + 1.0, 1.0]).expanded(0.1);
        let b = SceneBounds {
            min: Vec3::new(expanded.min[0], expanded.min[1], 0.0),
            max: Vec3::new(expanded.max[0], expanded.max[1], 0.5),
        };
        let got = assign_images(&expanded, Some(&b), &views, thr);
        for v in &views {
            let ratio = raycast_ratio(&b, v, 192);
            ensure((ratio - projected_area_ratio(&b, v)).abs() < 0.02, || {
                format!("view {} cell {c}: area {} vs ray cast {ratio}", v.id, projected_area_ratio(&b, v))
            })?;
            let pos = expanded.contains_strict(v.center.x, v.center.y);
            // ray-cast sampling cannot resolve ratios this close to the threshold
            if !pos && (ratio - thr).abs() < 0.02 {
                continue;
            }
            checked += 1;
            let oracle = pos || ratio > thr;
            ensure(got.contains(&v.id) == oracle, || format!("view {} cell {c} ratio {ratio}", v.id))?;
            via_area += (oracle && !pos) as usize;
        }
    }
    ensure(checked > 60 && via_area >= 3, || format!("weak oracle: {checked} checked, {via_area} by area"))?;
    Ok(format!("strip oracle agrees on {checked} (view, cell) pairs"))
}

fn order_independence() -> Result<String, String> {
    let scene = ground_scene(6, 4.0);
    let cfg = PartitionConfig {
        max_images: 10,
        min_length: 0.5,
        keep_min: 3,
        ..Default::default()
    };
    let key = |v: &Vec3| ((v.x * 1e6).round() as i64, (v.y * 1e6).round() as i64);
    let mut leaves = 0;
    for seed in 0..8u64 {
        let mut r = rng(seed);
        let views: Vec<CameraView> = (0..24)
            .map(|id| {
                let c = Vec3::new(r.random_range(0.0..4.0), r.random_range(0.0..4.0), r.random_range(3.0..6.0));
                CameraView::pinhole(id, 16.0, 16, 16, nadir(), c)
            })
            .collect();
        let p = build_partition(&scene, &views, &cfg).map_err(|e| e.to_string())?;
        ensure(p.leaves.iter().all(|c| c.satisfies_stop(&cfg)), || format!("seed {seed}: stopping rule"))?;
        let mut pv = views.clone();
        let mut gs = scene.gaussians.clone();
        for i in (1..pv.len()).rev() {
            pv.swap(i, r.random_range(0..=i));
        }
        for i in (1..gs.len()).rev() {
            gs.swap(i, r.random_range(0..=i));
        }
        let shuffled = Scene::new(gs);
        let q = build_partition(&shuffled, &pv, &cfg).map_err(|e| e.to_string())?;
        ensure(p.leaves.len() == q.leaves.len(), || format!("seed {seed}: leaf count differs"))?;
        for (a, b) in p.leaves.iter().zip(&q.leaves) {
            let mut ga: Vec<_> = a.gaussians.iter().map(|&i| key(&scene.gaussians[i].position)).collect();
            let mut gb: Vec<_> = b.gaussians.iter().map(|&i| key(&shuffled.gaussians[i].position)).collect();
            ga.sort();
            gb.sort();
            ensure(a.rect == b.rect && a.images == b.images && ga == gb, || format!("seed {seed}: cell {}", a.id))?;
        }
        leaves += p.leaves.len();
    }
    Ok(format!("{leaves} leaves over 8 shuffled inputs identical"))
}

pub fn partitioner() -> Check {
    Ok([uniform_layout()?, strip_oracle()?, order_independence()?].join("; "))
}

// ---------------------------------------------------------------- 6

fn random_scene(seed: u64) -> (Scene, CameraView) {
    let mut r = rng(seed);
    let (w, h) = (2 * r.random_range(12..40), 2 * r.random_range(12..40));
    let mut k = Mat3::identity();
    k[(0, 0)] = r.random_range(20.0..60.0);
    k[(1, 1)] = r.random_range(20.0..60.0);
    k[(0, 1)] = r.random_range(-0.5..0.5);
    k[(0, 2)] = r.random_range(0.25..0.75) * w as f64;
    k[(1, 2)] = r.random_range(0.25..0.75) * h as f64;
    let center = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), -4.0);
    let rot = look_at(&center, &Vec3::zeros(), &Vec3::new(0.0, -1.0, 0.0));
    let view = CameraView::new(0, k, rot, center, w, h);
    let gs = (0..r.random_range(20..60))
        .map(|_| {
            let q = Vector4::new(r.random(), r.random(), r.random(), r.random::<f64>() + 0.1);
            GaussianPrimitive::new(
                Vec3::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)),
                Vec3::new(r.random_range(0.02..0.4), r.random_range(0.02..0.4), r.random_range(0.005..0.05)),
                q,
                r.random_range(0.05..0.99),
                Vec3::new(r.random(), r.random(), r.random()),
            )
        })
        .collect();
    (Scene::new(gs), view)
}

pub fn sub_view_equivalence() -> Check {
    let mut pixels = 0;
    for seed in 0..10 {
        let (scene, view) = random_scene(seed);
        let full = render(&scene, &view);
        let (hw, hh) = (view.width / 2, view.height / 2);
        for (x0, y0) in [(0, 0), (hw, 0), (0, hh), (hw, hh)] {
            let sub = render(&scene, &view.crop(x0, y0, hw, hh));
            for y in 0..hh {
                for x in 0..hw {
                    let i = (y + y0) * view.width + x + x0;
                    let j = y * hw + x;
                    let mut same = sub.alpha[j].to_bits() == full.alpha[i].to_bits()
                        && sub.depth[j].to_bits() == full.depth[i].to_bits()
                        && sub.depth_valid[j] == full.depth_valid[i]
                        && sub.distance[j].to_bits() == full.distance[i].to_bits();
                    for c in 0..3 {
                        same &= sub.color.data[3 * j + c].to_bits() == full.color.data[3 * i + c].to_bits()
                            && sub.normal.data[3 * j + c].to_bits() == full.normal.data[3 * i + c].to_bits();
                    }
                    ensure(same, || format!("scene {seed}: sub-view ({x0}, {y0}) differs at ({x}, {y})"))?;
                    pixels += 1;
                }
            }
        }
    }
    Ok(format!("10 scenes, {pixels} pixels bit-identical across 2×2 sub-views"))
}

// ---------------------------------------------------------------- 7

fn sphere_rms() -> Result<(f64, usize), String> {
    let (voxel, radius): (f64, f64) = (0.05, 1.0);
    let n = ((2.0 * radius + 8.0 * voxel) / voxel).ceil() as usize + 1;
    let origin = Vec3::repeat(-radius - 4.0 * voxel);
    let mut vol = TsdfVolume::new(origin, voxel, [n, n, n], 4.0 * voxel).map_err(|e| e.to_string())?;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let p = vol.position(i, j, k);
                let idx = vol.index(i, j, k);
                vol.tsdf[idx] = ((p.norm() - radius) / vol.truncation).clamp(-1.0, 1.0);
                vol.weight[idx] = 1.0;
            }
        }
    }
    let mesh = marching_cubes(&vol);
    ensure(mesh.triangles.len() > 1000, || format!("{} triangles", mesh.triangles.len()))?;
    let ss: f64 = mesh.vertices.iter().map(|v| (v.norm() - radius).powi(2)).sum();
    Ok(((ss / mesh.vertices.len() as f64).sqrt(), mesh.vertices.len()))
}

fn plane_fusion(z0: f64, voxel: f64) -> Result<(f64, usize), String> {
    let bounds = SceneBounds::new(Vec3::new(-0.5, -0.5, 0.0), Vec3::new(0.5, 0.5, 0.6)).map_err(|e| e.to_string())?;
    let mut vol = TsdfVolume::covering(&bounds, voxel, 4.0 * voxel, 1 << 24).map_err(|e| e.to_string())?;
    for i in 0..20 {
        let a = i as f64 * 0.9;
        let eye = Vec3::new(0.6 * a.cos(), 0.6 * a.sin(), 2.5 + 0.05 * i as f64);
        let view = CameraView::pinhole(i, 60.0, 64, 64, look_at(&eye, &Vec3::new(0.1 * a.sin(), 0.0, 0.0), &Vec3::y()), eye);
        let mut depth = vec![0.0; 64 * 64];
        for y in 0..64 {
            for x in 0..64 {
                let dir = view.rotation_c2w * view.pixel_ray(x, y);
                let t = (z0 - view.center.z) / dir.z;
                if t > 0.0 {
                    depth[y * 64 + x] = t;
                }
            }
        }
        vol.integrate(&depth, &[], &view);
    }
    let [nx, ny, nz] = vol.dims;
    let mut worst = 0.0f64;
    let mut crossings = 0;
    for j in 0..ny {
        for i in 0..nx {
            for k in 0..nz - 1 {
                let (a, b) = (vol.index(i, j, k), vol.index(i, j, k + 1));
                if vol.weight[a] > 0.0 && vol.weight[b] > 0.0 && (vol.tsdf[a] < 0.0) != (vol.tsdf[b] < 0.0) {
                    worst = worst.max((edge_vertex(&vol, (i, j, k), (i, j, k + 1)).z - z0).abs());
                    crossings += 1;
                }
            }
        }
    }
    ensure(crossings > 100, || format!("only {crossings} zero crossings"))?;
    Ok((worst, crossings))
}

pub fn tsdf() -> Check {
    const RMS_TOL: f64 = 0.025;
    let (rms, verts) = sphere_rms()?;
    ensure(rms < RMS_TOL, || format!("sphere vertex RMS {rms:.4} ≥ {RMS_TOL}"))?;
    let voxel = 0.05;
    let (worst, crossings) = plane_fusion(0.313, voxel)?;
    ensure(worst < 0.5 * voxel, || format!("plane zero crossing off by {worst:.4} ≥ half voxel"))?;
    Ok(format!(
        "sphere RMS {rms:.4} < {RMS_TOL} ({verts} vertices); plane from 20 depth maps: max offset {worst:.4} < {:.3} over {crossings} crossings",
        0.5 * voxel
    ))
}
