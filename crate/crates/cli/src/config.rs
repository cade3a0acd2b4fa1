use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use tsplat::geometry::TriangleMesh;
use tsplat::ingestion::{init_gaussians, load_colmap, load_images, make_synthetic, SyntheticConfig};
use tsplat::math::Vec3;
use tsplat::pipeline::{jobs_from_env, split_holdout, ReconstructConfig};
use tsplat::scene::{CameraView, GaussianPrimitive, TrainingImage};

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Directory for checkpoints, logs, reports and renders.
    pub output: PathBuf,
    /// COLMAP model directory.
    pub colmap: Option<PathBuf>,
    /// Generated scene, used when `colmap` is absent.
    pub synthetic: Option<SyntheticConfig>,
    /// Reference point cloud (.ply or whitespace-separated x y z lines).
    pub reference_cloud: Option<PathBuf>,
    /// Dump the five rendered maps as PFM with every render.
    pub debug_pfm: bool,
    pub pipeline: ReconstructConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            output: PathBuf::from("tsplat_out"),
            colmap: None,
            synthetic: None,
            reference_cloud: None,
            debug_pfm: false,
            pipeline: ReconstructConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    /// Parses the file, resolves relative paths against its directory and
    /// applies the `TSPLAT_JOBS` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        cfg.output = resolve(&cfg.output);
        cfg.colmap = cfg.colmap.as_deref().map(resolve);
        cfg.reference_cloud = cfg.reference_cloud.as_deref().map(resolve);
        if let Some(jobs) = jobs_from_env()? {
            cfg.pipeline.jobs = jobs;
        }
        if cfg.pipeline.train.log_dir.is_none() {
            cfg.pipeline.train.log_dir = Some(cfg.output.join("logs"));
        }
        if cfg.colmap.is_some() == cfg.synthetic.is_some() {
            bail!("the config must set exactly one of `colmap` or `[synthetic]`");
        }
        cfg.pipeline.train.validate()?;
        cfg.pipeline.partition.validate()?;
        Ok(cfg)
    }
}

pub struct Dataset {
    pub images: Vec<TrainingImage>,
    pub seeds: Vec<GaussianPrimitive>,
    pub reference: Option<Vec<Vec3>>,
}

impl Dataset {
    pub fn load(cfg: &Config) -> Result<Self> {
        let mut reference = match &cfg.reference_cloud {
            Some(p) => Some(read_cloud(p)?),
            None => None,
        };
        let (images, seeds) = if let Some(dir) = &cfg.colmap {
            let bundle = load_colmap(dir)?;
            (load_images(&bundle)?, init_gaussians(&bundle)?)
        } else {
            let syn = make_synthetic(cfg.synthetic.as_ref().expect("checked on load"))?;
            let seeds = init_gaussians(&syn.bundle())?;
            reference.get_or_insert(syn.gt_points);
            (syn.images, seeds)
        };
        Ok(Self { images, seeds, reference })
    }

    pub fn split(&self, cfg: &Config) -> (Vec<TrainingImage>, Vec<TrainingImage>) {
        split_holdout(&self.images, cfg.pipeline.holdout_every)
    }

    pub fn view(&self, id: usize) -> Result<&CameraView> {
        match self.images.iter().find(|i| i.view.id == id) {
            Some(i) => Ok(&i.view),
            None => bail!("no view with id {id} ({} views loaded)", self.images.len()),
        }
    }
}

fn read_cloud(path: &Path) -> Result<Vec<Vec3>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        return Ok(TriangleMesh::read_ply(path)?.vertices);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .take(3)
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: bad point", path.display(), n + 1))?;
        if v.len() < 3 {
            bail!("{}:{}: expected x y z", path.display(), n + 1);
        }
        pts.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(pts)
}
