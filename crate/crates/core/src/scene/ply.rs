use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Scene;
use crate::error::{Error, Result};

/// ASCII point cloud of Gaussian centers with plane normals and 8-bit colors.
pub fn write_gaussians_ply(path: &Path, scene: &Scene) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", scene.gaussians.len());
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    s.push_str("property float opacity\nend_header\n");
    for g in &scene.gaussians {
        let n = g.plane_normal();
        let c = g.color.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {}",
            g.position.x,
            g.position.y,
            g.position.z,
            n.x,
            n.y,
            n.z,
            c.x,
            c.y,
            c.z,
            g.opacity()
        );
    }
    fs::write(path, s).map_err(|e| Error::file(path, e))
}
