use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use tsplat::eval::{mesh_accuracy, EvalReport};
use tsplat::geometry::TriangleMesh;
use tsplat::mesher::fuse_scene;
use tsplat::partition::{build_partition, Partition};
use tsplat::pipeline::{evaluate_views, fusion_masks};
use tsplat::raster::{render_with, RenderSettings};
use tsplat::scene::{load_checkpoint, save_checkpoint, write_gaussians_ply, CameraView, Checkpoint, Scene, TrainingImage};
use tsplat::trainer::{camera_extent, merge_cells, refine_all, refine_cell, train_coarse, TrainState};

use crate::config::{Config, Dataset};

/// File locations inside the output directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("cells")).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn coarse(&self) -> PathBuf {
        self.root.join("coarse.ckpt")
    }

    pub fn partition_state(&self) -> PathBuf {
        self.root.join("partition_state.json")
    }

    pub fn cell(&self, id: usize) -> PathBuf {
        self.root.join("cells").join(format!("cell_{id:03}.ckpt"))
    }

    pub fn merged(&self) -> PathBuf {
        self.root.join("merged.ckpt")
    }

    pub fn mesh(&self) -> PathBuf {
        self.root.join("mesh.ply")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

pub struct Stages<'a> {
    pub cfg: &'a Config,
    pub data: Dataset,
    pub layout: Layout,
    pub train: Vec<TrainingImage>,
    pub test: Vec<TrainingImage>,
}

impl<'a> Stages<'a> {
    pub fn new(cfg: &'a Config) -> Result<Self> {
        let data = Dataset::load(cfg)?;
        let layout = Layout::new(&cfg.output)?;
        let (train, test) = data.split(cfg);
        info!("{} training and {} held-out images", train.len(), test.len());
        Ok(Self { cfg, data, layout, train, test })
    }

    fn train_views(&self) -> Vec<CameraView> {
        self.train.iter().map(|i| i.view.clone()).collect()
    }

    fn load_state(&self, path: &Path, hint: &str) -> Result<TrainState> {
        let ck = load_checkpoint(path).with_context(|| format!("loading {} (run `tsplat {hint}` first)", path.display()))?;
        Ok(TrainState::from_checkpoint(ck, self.data.images.len(), &self.cfg.pipeline.train)?)
    }

    fn load_partition(&self) -> Result<Partition> {
        let p = self.layout.partition_state();
        Partition::load(&p).with_context(|| format!("loading {} (run `tsplat partition` first)", p.display()))
    }

    fn load_scene(&self, path: &Path, hint: &str) -> Result<Scene> {
        let ck = load_checkpoint(path).with_context(|| format!("loading {} (run `tsplat {hint}` first)", path.display()))?;
        Ok(ck.scene)
    }

    pub fn coarse(&self) -> Result<()> {
        let tc = &self.cfg.pipeline.train;
        let mut state = TrainState::new(Scene::new(self.data.seeds.clone()), self.data.images.len(), tc);
        let summary = train_coarse(&mut state, &self.train, tc)?;
        save_checkpoint(&self.layout.coarse(), &state.to_checkpoint())?;
        info!(
            "coarse: {} iterations ({} skipped), {} Gaussians -> {}",
            summary.iterations,
            summary.skipped,
            state.scene.len(),
            self.layout.coarse().display()
        );
        Ok(())
    }

    pub fn partition(&self) -> Result<()> {
        let coarse = self.load_state(&self.layout.coarse(), "coarse")?;
        let factor = self.cfg.pipeline.train.schedule.coarse_downsample;
        let views: Vec<CameraView> = self.train.iter().map(|i| i.view.downsampled(factor)).collect();
        let partition = build_partition(&coarse.scene, &views, &self.cfg.pipeline.partition)?;
        partition.save(&self.layout.partition_state())?;
        partition.write_json(&self.layout.file("partition.json"))?;
        let svg = self.layout.file("partition.svg");
        fs::write(&svg, partition.svg(&views)).with_context(|| format!("writing {}", svg.display()))?;
        for c in &partition.leaves {
            info!("cell {}: {} images, {} Gaussians", c.id, c.images.len(), c.gaussians.len());
        }
        info!("{} removed cells, {} orphan Gaussians", partition.removed.len(), partition.orphans.len());
        Ok(())
    }

    /// Refines one cell, or all of them (`jobs` at a time) when `cell` is None.
    pub fn refine(&self, cell: Option<usize>) -> Result<()> {
        let coarse = self.load_state(&self.layout.coarse(), "coarse")?;
        let partition = self.load_partition()?;
        let extent = camera_extent(&self.train_views());
        let tc = &self.cfg.pipeline.train;
        match cell {
            Some(id) => {
                let Some(c) = partition.leaves.iter().find(|c| c.id == id) else {
                    let ids: Vec<usize> = partition.leaves.iter().map(|c| c.id).collect();
                    bail!("no cell {id}; cells are {ids:?}");
                };
                let (state, summary) = refine_cell(&coarse, c, &self.train, extent, tc)?;
                save_checkpoint(&self.layout.cell(id), &state.to_checkpoint())?;
                info!("cell {id}: {} iterations, {} Gaussians", summary.iterations, state.scene.len());
            }
            None => {
                let out = refine_all(&coarse, &partition.leaves, &self.train, extent, tc, self.cfg.pipeline.jobs)?;
                for (c, (state, summary)) in partition.leaves.iter().zip(&out) {
                    save_checkpoint(&self.layout.cell(c.id), &state.to_checkpoint())?;
                    info!("cell {}: {} iterations, {} Gaussians", c.id, summary.iterations, state.scene.len());
                }
            }
        }
        Ok(())
    }

    fn cell_states(&self, partition: &Partition) -> Result<Vec<TrainState>> {
        partition
            .leaves
            .iter()
            .map(|c| self.load_state(&self.layout.cell(c.id), &format!("refine --cell {}", c.id)))
            .collect()
    }

    pub fn merge(&self) -> Result<()> {
        let partition = self.load_partition()?;
        let states = self.cell_states(&partition)?;
        let pairs: Vec<_> = partition.leaves.iter().zip(&states).map(|(c, s)| (c, &s.scene)).collect();
        let (merged, report) = merge_cells(&pairs);
        save_checkpoint(&self.layout.merged(), &Checkpoint::from_scene(merged.clone()))?;
        write_gaussians_ply(&self.layout.file("merged_gaussians.ply"), &merged)?;
        info!("merged {} Gaussians (kept per cell {:?}, dropped {})", merged.len(), report.kept, report.dropped);
        Ok(())
    }

    pub fn mesh(&self) -> Result<()> {
        let merged = self.load_scene(&self.layout.merged(), "merge")?;
        let partition = self.load_partition()?;
        let states = self.cell_states(&partition)?;
        let refs: Vec<&TrainState> = states.iter().collect();
        let masks = fusion_masks(&partition, &refs, &self.train);
        let (mesh, _) = fuse_scene(&merged, &self.train_views(), &masks, &self.cfg.pipeline.mesh)?;
        mesh.write_ply(&self.layout.mesh())?;
        info!("mesh: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
        Ok(())
    }

    pub fn eval(&self) -> Result<EvalReport> {
        let merged = self.load_scene(&self.layout.merged(), "merge")?;
        if self.test.is_empty() {
            warn!("no held-out views (holdout_every = 0); only geometry is evaluated");
        }
        let views = evaluate_views(&merged, &self.test);
        let geometry = match (&self.data.reference, self.layout.mesh().exists()) {
            (Some(cloud), true) => {
                let mesh = TriangleMesh::read_ply(&self.layout.mesh())?;
                Some(mesh_accuracy(&mesh, cloud, self.cfg.pipeline.train.seed)?)
            }
            (None, _) => None,
            (Some(_), false) => {
                warn!("no mesh yet; run `tsplat mesh` for geometry metrics");
                None
            }
        };
        let report = EvalReport::new(views, geometry);
        report.write_json(&self.layout.file("eval.json"))?;
        report.write_csv(&self.layout.file("eval.csv"))?;
        Ok(report)
    }

    pub fn render(&self, view: usize, checkpoint: Option<&Path>, pfm: bool) -> Result<PathBuf> {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| self.layout.merged());
        let scene = self.load_scene(&path, "merge")?;
        let v = self.data.view(view)?;
        let out = render_with(&scene, v, &RenderSettings::default());
        let dir = self.layout.file("renders");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let png = dir.join(format!("view_{view:04}.png"));
        out.color.save_png(&png)?;
        if pfm || self.cfg.debug_pfm {
            out.save_pfm_maps(&dir, &format!("view_{view:04}"))?;
        }
        Ok(png)
    }
}
