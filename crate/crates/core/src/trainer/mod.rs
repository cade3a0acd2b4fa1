//! Coarse-to-fine optimization: coarse training on downsampled images,
//! per-cell refinement on full-resolution sub-images, densification and merging.

mod adam;
mod densify;
mod log;

pub use adam::{slot_rates, GaussianAdam, TensorAdam};
pub use densify::{densify_and_prune, DensifyPolicy, DensifyReport, DensifyStats};
pub use log::TrainLog;

use std::collections::HashMap;
use std::path::PathBuf;

use ::log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::appearance::{apply_transform, mask_reg_loss, masked_rgb_loss, AppearanceModel, Network, TransientMaskModel};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::losses::{
    depth_normal_loss, flatten_loss, mv_geometric_loss, mv_photometric_loss, select_reference_views, textureless_loss,
    GeoLossWeights, LossTerms, ViewMaps, ViewPair,
};
use crate::math::Vec3;
use crate::partition::{PartitionCell, Rect};
use crate::raster::{render_backward, render_with, MapGradients, RenderSettings};
use crate::scene::{slot, CameraView, Checkpoint, Scene, SceneBounds, TrainingImage, PARAM_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub position_init: f64,
    pub position_final: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    pub network: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            network: 1e-3,
        }
    }
}

impl LearningRates {
    /// Exponential (log-linear) position decay over a phase.
    pub fn position_at(&self, iteration: usize, total: usize, extent: f64) -> f64 {
        let t = if total <= 1 {
            0.0
        } else {
            (iteration as f64 / total as f64).clamp(0.0, 1.0)
        };
        (self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t).exp() * extent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Shared between the coarse and fine phases.
    pub total_iterations: usize,
    pub coarse_fraction: f64,
    pub coarse_downsample: usize,
    /// Sub-images per side in the fine phase.
    pub sub_grid: usize,
    /// Geometry losses start after this many iterations of each phase.
    pub geometry_warmup: usize,
    pub lr: LearningRates,
    pub densify: DensifyPolicy,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_iterations: 30_000,
            coarse_fraction: 0.5,
            coarse_downsample: 4,
            sub_grid: 2,
            geometry_warmup: 1000,
            lr: LearningRates::default(),
            densify: DensifyPolicy::default(),
        }
    }
}

impl TrainSchedule {
    pub fn coarse_iterations(&self) -> usize {
        (self.total_iterations as f64 * self.coarse_fraction).round() as usize
    }

    pub fn fine_iterations(&self) -> usize {
        self.total_iterations - self.coarse_iterations()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coarse_fraction)
            || !self.coarse_downsample.is_power_of_two()
            || !self.sub_grid.is_power_of_two()
        {
            return Err(Error::Config(format!(
                "schedule needs coarse_fraction in [0,1] and power-of-two downsample/sub_grid, got {} / {} / {}",
                self.coarse_fraction, self.coarse_downsample, self.sub_grid
            )));
        }
        self.densify.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub schedule: TrainSchedule,
    pub weights: GeoLossWeights,
    pub appearance: bool,
    pub transient_mask: bool,
    /// Candidate reference views per source; one is drawn per iteration.
    pub reference_views: usize,
    pub max_reference_angle: f64,
    /// Round-trip reprojection error (px) above which a pixel is filtered.
    pub reprojection_threshold: f64,
    /// Directory for per-phase CSV logs.
    pub log_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: TrainSchedule::default(),
            weights: GeoLossWeights::default(),
            appearance: true,
            transient_mask: true,
            reference_views: 2,
            max_reference_angle: 60.0,
            reprojection_threshold: 1.0,
            log_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.weights.validate()?;
        if !(self.reprojection_threshold > 0.0) {
            return Err(Error::Config("reprojection threshold must be positive".into()));
        }
        Ok(())
    }

    fn geometry_enabled(&self) -> bool {
        let w = &self.weights;
        w.cons > 0.0 || w.mvgeo > 0.0 || w.zncc > 0.0 || w.gran > 0.0
    }
}

/// Everything that is optimized: Gaussians plus the two networks.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub scene: Scene,
    pub appearance: Option<AppearanceModel>,
    pub mask: Option<TransientMaskModel>,
}

impl TrainState {
    pub fn new(scene: Scene, num_images: usize, cfg: &TrainConfig) -> Self {
        Self {
            scene,
            appearance: cfg.appearance.then(|| AppearanceModel::new(num_images, cfg.seed ^ 0xa11)),
            mask: cfg.transient_mask.then(|| TransientMaskModel::new(cfg.seed ^ 0x3a5c)),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            scene: self.scene.clone(),
            appearance: self.appearance.as_ref().map(|m| m.to_params()),
            transient: self.mask.as_ref().map(|m| m.to_params()),
        }
    }

    /// Networks enabled in `cfg` but missing from the checkpoint start fresh.
    pub fn from_checkpoint(ck: Checkpoint, num_images: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut state = Self::new(ck.scene, num_images, cfg);
        if let (Some(m), Some(p)) = (state.appearance.as_mut(), &ck.appearance) {
            m.load_params(p)?;
        }
        if let (Some(m), Some(p)) = (state.mask.as_mut(), &ck.transient) {
            m.load_params(p)?;
        }
        Ok(state)
    }
}

/// Inputs of one optimization phase.
pub struct Phase<'a> {
    pub name: String,
    /// Images sampled one per iteration (downsampled or sub-images).
    pub units: Vec<TrainingImage>,
    /// Index into `references` of each unit's source image.
    pub parents: Vec<usize>,
    /// Whole images used as multi-view references.
    pub references: Vec<TrainingImage>,
    pub iterations: usize,
    pub seed: u64,
    /// Position learning rate scale.
    pub extent: f64,
    /// Region diagonal for the oversized-Gaussian prune.
    pub diagonal: f64,
    /// Only Gaussians inside this rectangle densify.
    pub region: Option<Rect>,
    pub settings: &'a RenderSettings,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhaseSummary {
    pub iterations: usize,
    pub skipped: usize,
    /// L_rgb per iteration (NaN for skipped iterations).
    pub rgb: Vec<f64>,
    pub densify: Vec<DensifyReport>,
    pub gaussians: usize,
}

/// 3DGS-style extent: 1.1 × the largest camera distance from the mean center.
pub fn camera_extent(views: &[CameraView]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let c = views.iter().map(|v| v.center).sum::<Vec3>() / views.len() as f64;
    let r = views.iter().map(|v| (v.center - c).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Splits a view into a grid×grid set of sub-views in row-major order; with
/// odd sizes the trailing tile takes the extra row/column.
pub fn split_image(view: &CameraView, grid: usize) -> Vec<CameraView> {
    let edges = |n: usize| -> Vec<usize> { (0..=grid).map(|k| if k == grid { n } else { k * (n / grid) }).collect() };
    let xs = edges(view.width);
    let ys = edges(view.height);
    let mut out = Vec::with_capacity(grid * grid);
    for j in 0..grid {
        for i in 0..grid {
            out.push(view.crop(xs[i], ys[j], xs[i + 1] - xs[i], ys[j + 1] - ys[j]));
        }
    }
    out
}

pub fn split_training_image(img: &TrainingImage, grid: usize) -> Vec<TrainingImage> {
    let (ox, oy) = img.view.crop_origin;
    split_image(&img.view, grid)
        .into_iter()
        .map(|v| {
            let (x0, y0) = (v.crop_origin.0 - ox, v.crop_origin.1 - oy);
            TrainingImage {
                pixels: img.pixels.crop(x0, y0, v.width, v.height),
                view: v,
                downsample_level: img.downsample_level,
            }
        })
        .collect()
}

struct Cached {
    gray: Image,
}

/// Runs one phase in place. On a non-finite loss the state is restored to the
/// last good snapshot (taken every 500 iterations) and `Diverged` is returned.
pub fn run_phase(state: &mut TrainState, phase: &Phase, cfg: &TrainConfig) -> Result<PhaseSummary> {
    let mut summary = PhaseSummary::default();
    if phase.iterations == 0 || phase.units.is_empty() {
        summary.gaussians = state.scene.len();
        return Ok(summary);
    }
    let sched = &cfg.schedule;
    let w = &cfg.weights;
    let mut rng = ChaCha8Rng::seed_from_u64(phase.seed);
    let mut log = match &cfg.log_dir {
        Some(dir) => Some(TrainLog::create(&dir.join(format!("train_{}.csv", phase.name)))?),
        None => None,
    };
    let unit_cache: Vec<Cached> = phase.units.iter().map(|u| Cached { gray: u.pixels.to_gray() }).collect();
    let ref_gray: Vec<Image> = phase.references.iter().map(|r| r.pixels.to_gray()).collect();
    let ref_views: Vec<CameraView> = phase.references.iter().map(|r| r.view.clone()).collect();
    let pairs: Vec<Vec<usize>> = (0..ref_views.len())
        .map(|p| select_reference_views(&ref_views, p, cfg.reference_views, cfg.max_reference_angle))
        .collect();
    let mut ref_masks: HashMap<usize, Vec<f64>> = HashMap::new();

    let mut adam = GaussianAdam::new(state.scene.len(), 1e-15);
    let mut app_adam = state.appearance.as_ref().map(|m| TensorAdam::new(m.tensors(), sched.lr.network));
    let mut mask_adam = state.mask.as_ref().map(|m| TensorAdam::new(m.tensors(), sched.lr.network));
    let mut stats = DensifyStats::new(state.scene.len());
    let mut last_good = state.clone();
    let mut order: Vec<usize> = Vec::new();

    for it in 1..=phase.iterations {
        if order.is_empty() {
            order = (0..phase.units.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let u = order.pop().unwrap();
        let unit = &phase.units[u];
        let view = &unit.view;
        let npix = view.width * view.height;
        let out = render_with(&state.scene, view, phase.settings);
        if out.alpha.iter().fold(0.0f64, |a, &b| a.max(b)) < 1e-3 {
            warn!("{}: iteration {it}: view {} renders empty, skipping", phase.name, view.id);
            summary.skipped += 1;
            summary.rgb.push(f64::NAN);
            continue;
        }

        let mut terms = LossTerms::default();
        let mut up = MapGradients::zeros(npix);

        let mask_pass = state.mask.as_ref().map(|m| m.forward(&unit.pixels));
        let mask_vals = mask_pass.as_ref().map(|p| p.mask.as_slice());
        let app_pass = state.appearance.as_ref().map(|m| m.forward(&out.color, view.embedding_id));
        let transformed = match &app_pass {
            Some(p) => apply_transform(&p.transform, &out.color),
            None => out.color.clone(),
        };
        let rgb = masked_rgb_loss(&out.color, &transformed, &unit.pixels, mask_vals);
        terms.rgb = rgb.value;
        for (g, d) in up.color.iter_mut().zip(&rgb.d_rendered.data) {
            *g += d;
        }
        let mut app_grads = None;
        match (&app_pass, &state.appearance) {
            (Some(pass), Some(model)) => {
                let grad_t = apply_transform(&rgb.d_transformed, &out.color);
                let (pg, ig) = model.backward(pass, &grad_t);
                for k in 0..up.color.len() {
                    up.color[k] += pass.transform.data[k] * rgb.d_transformed.data[k] + ig.data[k];
                }
                app_grads = Some(pg);
            }
            _ => {
                for (g, d) in up.color.iter_mut().zip(&rgb.d_transformed.data) {
                    *g += d;
                }
            }
        }
        let mut mask_grads = None;
        if let (Some(pass), Some(model)) = (&mask_pass, &state.mask) {
            let (v, dm) = mask_reg_loss(&pass.mask);
            terms.mask = v;
            let total: Vec<f64> = rgb.d_mask.iter().zip(&dm).map(|(a, b)| a + b).collect();
            mask_grads = Some(model.backward(pass, &total));
        }

        let mut ref_backward = None;
        if it > sched.geometry_warmup && cfg.geometry_enabled() {
            let gray = &unit_cache[u].gray;
            if w.cons > 0.0 {
                let (v, g) = depth_normal_loss(view, &out.depth, &out.depth_valid, &out.normal.data, gray);
                terms.cons = v;
                up.add_scaled(&g, w.cons);
            }
            if w.gran > 0.0 {
                let (v, g) = textureless_loss(gray, &out.depth, &out.depth_valid);
                terms.gran = v;
                for (a, b) in up.depth.iter_mut().zip(&g) {
                    *a += w.gran * b;
                }
            }
            let cands = &pairs[phase.parents[u]];
            if (w.mvgeo > 0.0 || w.zncc > 0.0) && !cands.is_empty() {
                let r = cands[rng.random_range(0..cands.len())];
                let rview = &ref_views[r];
                let rout = render_with(&state.scene, rview, phase.settings);
                let pair = ViewPair::new(view, rview);
                let src = ViewMaps::from_render(view, &out);
                if w.mvgeo > 0.0 {
                    let rf = ViewMaps::from_render(rview, &rout);
                    let mv = mv_geometric_loss(&pair, &src, &rf, cfg.reprojection_threshold);
                    terms.mvgeo = mv.value;
                    up.add_scaled(&mv.source_grad, w.mvgeo);
                    let mut rg = mv.reference_grad;
                    rg.scale(w.mvgeo);
                    ref_backward = Some((r, rout, rg));
                }
                if w.zncc > 0.0 {
                    let mask_r = match &state.mask {
                        Some(m) => Some(
                            ref_masks
                                .entry(r)
                                .or_insert_with(|| m.mask(&phase.references[r].pixels))
                                .clone(),
                        ),
                        None => None,
                    };
                    let z = mv_photometric_loss(&pair, &src, gray, &ref_gray[r], mask_vals, mask_r.as_deref());
                    terms.zncc = z.value;
                    up.add_scaled(&z.source_grad, w.zncc);
                }
            }
        }
        let (flat, flat_grad) = flatten_loss(&state.scene);
        terms.flatten = flat;
        let total = match terms.total(w) {
            Ok(t) => t,
            Err(e) => {
                *state = last_good;
                return Err(Error::Diverged {
                    iteration: it,
                    reason: e.to_string(),
                });
            }
        };

        let mut grads = render_backward(&state.scene, view, &out, &up);
        stats.add(&grads.mean2d, &grads.visible, [view.width as f64 * 0.5, view.height as f64 * 0.5]);
        if let Some((r, rout, rg)) = &ref_backward {
            let rgrads = render_backward(&state.scene, &ref_views[*r], rout, rg);
            for (a, b) in grads.params.iter_mut().zip(&rgrads.params) {
                for k in 0..PARAM_LEN {
                    a[k] += b[k];
                }
            }
        }
        for (a, f) in grads.params.iter_mut().zip(&flat_grad) {
            for k in 0..3 {
                a[slot::LOG_SCALE + k] += w.flatten * f[k];
            }
        }

        let lr = slot_rates(
            sched.lr.position_at(it, phase.iterations, phase.extent),
            sched.lr.scale,
            sched.lr.rotation,
            sched.lr.opacity,
            sched.lr.color,
            sched.lr.color / 20.0,
        );
        let mut params: Vec<[f64; PARAM_LEN]> = state.scene.gaussians.iter().map(|g| g.to_params()).collect();
        let active = vec![true; params.len()];
        adam.step(&mut params, &grads.params, &active, &lr);
        for (g, p) in state.scene.gaussians.iter_mut().zip(&params) {
            *g = crate::scene::GaussianPrimitive::from_params(p);
        }
        if let (Some(a), Some(model), Some(pg)) = (&mut app_adam, &mut state.appearance, &app_grads) {
            a.step(model.tensors_mut(), pg);
        }
        if let (Some(a), Some(model), Some(pg)) = (&mut mask_adam, &mut state.mask, &mask_grads) {
            a.step(model.tensors_mut(), pg);
            ref_masks.clear();
        }

        if sched.densify.due(it, phase.iterations) {
            let (keep, added, rep) = densify_and_prune(
                &mut state.scene,
                &stats,
                &sched.densify,
                phase.extent,
                phase.diagonal,
                phase.region.as_ref(),
                &mut rng,
            )
            .map_err(|e| match e {
                Error::Diverged { reason, .. } => Error::Diverged { iteration: it, reason },
                e => e,
            })?;
            adam.grow(added);
            adam.retain(&keep);
            stats.reset(state.scene.len());
            summary.densify.push(rep);
        }

        summary.rgb.push(terms.rgb);
        if let Some(l) = &mut log {
            l.row(&phase.name, it, view.id, state.scene.len(), &terms, total)?;
        }
        if it % 500 == 0 {
            last_good = state.clone();
            info!("{}: iteration {it}/{} rgb {:.5} gaussians {}", phase.name, phase.iterations, terms.rgb, state.scene.len());
        }
    }
    if let Some(l) = &mut log {
        l.flush()?;
    }
    summary.iterations = phase.iterations;
    summary.gaussians = state.scene.len();
    Ok(summary)
}

fn views_bounds(views: &[CameraView]) -> Option<SceneBounds> {
    let mut it = views.iter().map(|v| v.center);
    let first = it.next()?;
    let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p)));
    Some(SceneBounds { min, max })
}

/// Global optimization on downsampled whole images.
pub fn train_coarse(state: &mut TrainState, images: &[TrainingImage], cfg: &TrainConfig) -> Result<PhaseSummary> {
    cfg.validate()?;
    let sched = &cfg.schedule;
    let units: Vec<TrainingImage> = images.iter().map(|i| i.downsampled(sched.coarse_downsample)).collect();
    let views: Vec<CameraView> = images.iter().map(|i| i.view.clone()).collect();
    let diagonal = match (state.scene.bounds(), views_bounds(&views)) {
        (Some(a), Some(b)) => SceneBounds {
            min: a.min.inf(&b.min),
            max: a.max.sup(&b.max),
        }
        .diagonal(),
        (Some(a), None) => a.diagonal(),
        (None, Some(b)) => b.diagonal(),
        (None, None) => 1.0,
    };
    let settings = RenderSettings::default();
    let phase = Phase {
        name: "coarse".into(),
        parents: (0..units.len()).collect(),
        references: units.clone(),
        units,
        iterations: sched.coarse_iterations(),
        seed: cfg.seed,
        extent: camera_extent(&views),
        diagonal,
        region: None,
        settings: &settings,
    };
    run_phase(state, &phase, cfg)
}

/// Gaussians G_i of a cell as a sub-scene.
pub fn extract_cell(scene: &Scene, cell: &PartitionCell) -> Scene {
    Scene {
        gaussians: cell.gaussians.iter().map(|&i| scene.gaussians[i].clone()).collect(),
        sh_degree: scene.sh_degree,
    }
}

/// Refines one cell on full-resolution sub-images of its images, starting from
/// the coarse state (networks are copied).
pub fn refine_cell(
    coarse: &TrainState,
    cell: &PartitionCell,
    images: &[TrainingImage],
    extent: f64,
    cfg: &TrainConfig,
) -> Result<(TrainState, PhaseSummary)> {
    cfg.validate()?;
    let sched = &cfg.schedule;
    let mut state = TrainState {
        scene: extract_cell(&coarse.scene, cell),
        appearance: coarse.appearance.clone(),
        mask: coarse.mask.clone(),
    };
    let by_id: HashMap<usize, &TrainingImage> = images.iter().map(|i| (i.view.id, i)).collect();
    let mut cell_images = Vec::with_capacity(cell.images.len());
    for id in &cell.images {
        let img = by_id
            .get(id)
            .ok_or_else(|| Error::Config(format!("cell {} references unknown image {id}", cell.id)))?;
        cell_images.push((*img).clone());
    }
    let mut units = Vec::new();
    let mut parents = Vec::new();
    for (p, img) in cell_images.iter().enumerate() {
        for s in split_training_image(img, sched.sub_grid) {
            units.push(s);
            parents.push(p);
        }
    }
    let references: Vec<TrainingImage> = cell_images.iter().map(|i| i.downsampled(sched.sub_grid)).collect();
    let diagonal = match &cell.bbox {
        Some(b) => b.diagonal(),
        None => (cell.expanded.lx().powi(2) + cell.expanded.ly().powi(2)).sqrt(),
    };
    let settings = RenderSettings::default();
    let phase = Phase {
        name: format!("cell{}", cell.id),
        units,
        parents,
        references,
        iterations: sched.fine_iterations(),
        seed: cfg.seed.wrapping_add(0x9e37_79b9).wrapping_add(cell.id as u64 * 7919),
        extent,
        diagonal,
        region: Some(cell.expanded),
        settings: &settings,
    };
    let summary = run_phase(&mut state, &phase, cfg)?;
    Ok((state, summary))
}

/// Refines every cell with at most `jobs` running concurrently; results come
/// back in cell order regardless of completion order.
pub fn refine_all(
    coarse: &TrainState,
    cells: &[PartitionCell],
    images: &[TrainingImage],
    extent: f64,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<(TrainState, PhaseSummary)>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|c| refine_cell(coarse, c, images, extent, cfg))
            .collect()
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    /// Gaussians contributed by each cell.
    pub kept: Vec<usize>,
    /// Gaussians outside their cell's base rectangle.
    pub dropped: usize,
}

/// Concatenates, per cell, the Gaussians inside its base rectangle; a Gaussian
/// on an edge shared with a lower-id cell belongs to that cell.
pub fn merge_cells(cells: &[(&PartitionCell, &Scene)]) -> (Scene, MergeReport) {
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by_key(|&k| cells[k].0.id);
    let mut merged = Scene::default();
    let mut report = MergeReport {
        kept: vec![0; cells.len()],
        dropped: 0,
    };
    for &k in &order {
        let (cell, scene) = cells[k];
        merged.sh_degree = merged.sh_degree.max(scene.sh_degree);
        for g in &scene.gaussians {
            let (x, y) = (g.position.x, g.position.y);
            let owned = cell.rect.contains(x, y)
                && !cells
                    .iter()
                    .any(|(o, _)| o.id < cell.id && o.rect.contains(x, y));
            if owned {
                merged.gaussians.push(g.clone());
                report.kept[k] += 1;
            } else {
                report.dropped += 1;
            }
        }
    }
    (merged, report)
}
