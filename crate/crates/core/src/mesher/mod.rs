//! Projective TSDF fusion of rendered depth maps and marching-cubes extraction.

mod tables;

pub use tables::{triangle_table, EDGES};

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::math::Vec3;
use crate::raster::{render_with, RenderSettings};
use crate::scene::{CameraView, Scene, SceneBounds};

#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    /// Grid points per axis; voxel (i, j, k) sits at origin + voxel_size·(i, j, k).
    pub dims: [usize; 3],
    pub truncation: f64,
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || truncation < 2.0 * voxel_size {
            return Err(Error::Config(format!(
                "truncation {truncation} must be at least twice the voxel size {voxel_size}"
            )));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Volume covering `bounds` grown by the truncation distance.
    pub fn covering(bounds: &SceneBounds, voxel_size: f64, truncation: f64, budget: usize) -> Result<Self> {
        let b = bounds.expanded(truncation);
        let ext = b.max - b.min;
        let dims = [0, 1, 2].map(|k| (ext[k] / voxel_size).ceil() as usize + 1);
        let voxels = dims.iter().product::<usize>();
        if voxels > budget {
            return Err(Error::VoxelBudget { voxels, budget });
        }
        Self::new(b.min, voxel_size, dims, truncation)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fuses one depth map (camera-z depths, row-major). Pixels flagged invalid
    /// are skipped; `valid` may be empty to accept every positive depth.
    pub fn integrate(&mut self, depth: &[f64], valid: &[bool], view: &CameraView) {
        let [nx, ny, _] = self.dims;
        let (w, h) = (view.width, view.height);
        let tau = self.truncation;
        let origin = self.origin;
        let vs = self.voxel_size;
        self.tsdf
            .par_chunks_mut(nx * ny)
            .zip(self.weight.par_chunks_mut(nx * ny))
            .enumerate()
            .for_each(|(k, (ts, ws))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vec3::new(i as f64, j as f64, k as f64) * vs;
                        let pc = view.to_camera(&p);
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let uv = view.project_camera(&pc);
                        let (u, v) = (uv.x.floor(), uv.y.floor());
                        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                            continue;
                        }
                        let pix = v as usize * w + u as usize;
                        let d = depth[pix];
                        if !(d > 0.0) || (!valid.is_empty() && !valid[pix]) {
                            continue;
                        }
                        let sdf = d - pc.z;
                        if sdf <= -tau {
                            continue;
                        }
                        let val = (sdf / tau).clamp(-1.0, 1.0);
                        let idx = j * nx + i;
                        let wt = ws[idx];
                        ts[idx] = (ts[idx] * wt + val) / (wt + 1.0);
                        ws[idx] = wt + 1.0;
                    }
                }
            });
    }

    /// Marching cubes over cells whose 8 corners all carry weight.
    pub fn extract_mesh(&self) -> TriangleMesh {
        marching_cubes(self)
    }
}

/// Global key of the grid edge starting at grid point (i, j, k) along `axis`.
fn edge_key(vol: &TsdfVolume, i: usize, j: usize, k: usize, axis: usize) -> usize {
    vol.index(i, j, k) * 3 + axis
}

pub fn marching_cubes(vol: &TsdfVolume) -> TriangleMesh {
    let [nx, ny, nz] = vol.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return TriangleMesh::new();
    }
    let table = triangle_table();
    // per slab: triangles as edge keys, with vertex positions keyed by edge
    let slabs: Vec<Vec<[(usize, Vec3); 3]>> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut tris = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let mut case = 0usize;
                    let mut vals = [0.0; 8];
                    let mut ok = true;
                    for c in 0..8 {
                        let (ci, cj, ck) = (i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                        let idx = vol.index(ci, cj, ck);
                        if vol.weight[idx] <= 0.0 {
                            ok = false;
                            break;
                        }
                        vals[c] = vol.tsdf[idx];
                        if vals[c] < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if !ok || case == 0 || case == 255 {
                        continue;
                    }
                    for tri in &table[case] {
                        let verts = tri.map(|e| {
                            let (a, b, axis) = EDGES[e as usize];
                            let (ai, aj, ak) = (i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
                            let (bi, bj, bk) = (i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                            let key = edge_key(vol, ai, aj, ak, axis);
                            (key, edge_vertex(vol, (ai, aj, ak), (bi, bj, bk)))
                        });
                        tris.push(verts);
                    }
                }
            }
            tris
        })
        .collect();
    let mut mesh = TriangleMesh::new();
    let mut ids: HashMap<usize, u32> = HashMap::new();
    for slab in slabs {
        for tri in slab {
            let t = tri.map(|(key, p)| {
                *ids.entry(key).or_insert_with(|| {
                    mesh.vertices.push(p);
                    (mesh.vertices.len() - 1) as u32
                })
            });
            mesh.triangles.push(t);
        }
    }
    mesh
}

/// Zero crossing on the grid edge between two points by linear interpolation.
pub fn edge_vertex(vol: &TsdfVolume, a: (usize, usize, usize), b: (usize, usize, usize)) -> Vec3 {
    let va = vol.tsdf[vol.index(a.0, a.1, a.2)];
    let vb = vol.tsdf[vol.index(b.0, b.1, b.2)];
    let t = va / (va - vb);
    let pa = vol.position(a.0, a.1, a.2);
    let pb = vol.position(b.0, b.1, b.2);
    pa + (pb - pa) * t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// World units; defaults to the bounds diagonal / 256.
    pub voxel_size: Option<f64>,
    pub truncation_voxels: f64,
    pub voxel_budget: usize,
    /// Pixels whose transient mask falls below this are not fused.
    pub mask_threshold: f64,
    /// Fusion region; defaults to the bounds of the Gaussian centers.
    pub bounds: Option<SceneBounds>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            voxel_size: None,
            truncation_voxels: 4.0,
            voxel_budget: 48_000_000,
            mask_threshold: 0.5,
            bounds: None,
        }
    }
}

impl MeshConfig {
    pub fn resolve(&self, scene: &Scene) -> Result<(SceneBounds, f64)> {
        let bounds = match self.bounds {
            Some(b) => b,
            None => scene.bounds().ok_or(Error::EmptyMesh)?,
        };
        let voxel = self.voxel_size.unwrap_or(bounds.diagonal() / 256.0);
        if !(voxel > 0.0) {
            return Err(Error::Config("voxel size must be positive".into()));
        }
        Ok((bounds, voxel))
    }
}

/// Renders depth for every view, fuses the valid pixels and extracts the mesh.
/// `masks` holds one per-pixel transient mask per view (1 = static) or is empty.
pub fn fuse_scene(scene: &Scene, views: &[CameraView], masks: &[Vec<f64>], cfg: &MeshConfig) -> Result<(TriangleMesh, TsdfVolume)> {
    let (bounds, voxel) = cfg.resolve(scene)?;
    let tau = cfg.truncation_voxels * voxel;
    let mut vol = TsdfVolume::covering(&bounds, voxel, tau, cfg.voxel_budget)?;
    let settings = RenderSettings::default();
    for (i, view) in views.iter().enumerate() {
        let out = render_with(scene, view, &settings);
        let mut valid = out.depth_valid.clone();
        if let Some(m) = masks.get(i).filter(|m| !m.is_empty()) {
            for (v, &mv) in valid.iter_mut().zip(m) {
                *v &= mv >= cfg.mask_threshold;
            }
        }
        vol.integrate(&out.depth, &valid, view);
    }
    let mesh = vol.extract_mesh();
    Ok((mesh, vol))
}
