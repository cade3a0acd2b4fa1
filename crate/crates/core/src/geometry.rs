//! Triangle meshes: ray casting, area sampling and PLY/OBJ I/O.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

/// Ray hit: parameter t along the (not necessarily unit) direction and triangle index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    pub normal: Vec3,
}

/// Möller–Trumbore intersection; returns t > eps.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

impl TriangleMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Appends a quad (a, b, c, d in order) as two triangles.
    pub fn push_quad(&mut self, q: [Vec3; 4]) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&q);
        self.triangles.push([base, base + 1, base + 2]);
        self.triangles.push([base, base + 2, base + 3]);
    }

    /// Axis-aligned box without its bottom face, outward-facing.
    pub fn push_box(&mut self, min: Vec3, max: Vec3) {
        let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let (a, b) = (min, max);
        self.push_quad([v(a.x, a.y, b.z), v(b.x, a.y, b.z), v(b.x, b.y, b.z), v(a.x, b.y, b.z)]);
        self.push_quad([v(a.x, a.y, a.z), v(b.x, a.y, a.z), v(b.x, a.y, b.z), v(a.x, a.y, b.z)]);
        self.push_quad([v(b.x, a.y, a.z), v(b.x, b.y, a.z), v(b.x, b.y, b.z), v(b.x, a.y, b.z)]);
        self.push_quad([v(b.x, b.y, a.z), v(a.x, b.y, a.z), v(a.x, b.y, b.z), v(b.x, b.y, b.z)]);
        self.push_quad([v(a.x, b.y, a.z), v(a.x, a.y, a.z), v(a.x, a.y, b.z), v(a.x, b.y, b.z)]);
    }

    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    /// Closest hit along the ray; brute force over all triangles.
    pub fn ray_cast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            if let Some(s) = ray_triangle(origin, dir, &a, &b, &c) {
                if best.is_none_or(|h| s < h.t) {
                    best = Some(Hit {
                        t: s,
                        triangle: t,
                        normal: self.triangle_normal(t),
                    });
                }
            }
        }
        best
    }

    /// Area-weighted uniform samples.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec3> {
        if self.triangles.is_empty() || count == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut acc = 0.0;
        for t in 0..self.triangles.len() {
            acc += self.area(t);
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let r = rng.random::<f64>() * acc;
                let t = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
                let [a, b, c] = self.corners(t);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    /// Binary little-endian PLY with float positions and int indices.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )?;
        for v in &self.vertices {
            for k in 0..3 {
                w.write_all(&(v[k] as f32).to_le_bytes())?;
            }
        }
        for t in &self.triangles {
            w.write_all(&[3u8])?;
            for &i in t {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the PLY layout written by `write_ply` (float or double positions).
    pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut r = BufReader::new(f);
        let bad = |reason: &str| Error::Malformed {
            file: path.display().to_string(),
            location: "header".into(),
            reason: reason.into(),
        };
        let (mut nv, mut nf, mut double) = (0usize, 0usize, false);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim() != "ply" {
            return Err(bad("missing ply magic"));
        }
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("unterminated header"));
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            match t.as_slice() {
                ["format", fmt, _] if *fmt != "binary_little_endian" => return Err(bad("only binary_little_endian is supported")),
                ["element", "vertex", n] => nv = n.parse().map_err(|_| bad("vertex count"))?,
                ["element", "face", n] => nf = n.parse().map_err(|_| bad("face count"))?,
                ["property", "double", "x"] => double = true,
                ["end_header"] => break,
                _ => {}
            }
        }
        let mut mesh = TriangleMesh::new();
        let mut buf8 = [0u8; 8];
        let mut buf4 = [0u8; 4];
        for _ in 0..nv {
            let mut v = Vec3::zeros();
            for k in 0..3 {
                v[k] = if double {
                    r.read_exact(&mut buf8)?;
                    f64::from_le_bytes(buf8)
                } else {
                    r.read_exact(&mut buf4)?;
                    f32::from_le_bytes(buf4) as f64
                };
            }
            mesh.vertices.push(v);
        }
        for _ in 0..nf {
            let mut n = [0u8; 1];
            r.read_exact(&mut n)?;
            if n[0] != 3 {
                return Err(bad("only triangle faces are supported"));
            }
            let mut t = [0u32; 3];
            for ti in t.iter_mut() {
                r.read_exact(&mut buf4)?;
                *ti = i32::from_le_bytes(buf4) as u32;
            }
            if t.iter().any(|&i| i as usize >= nv) {
                return Err(bad("face index out of range"));
            }
            mesh.triangles.push(t);
        }
        Ok(mesh)
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut mesh = TriangleMesh::new();
        for (ln, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            let bad = |reason: &str| Error::Malformed {
                file: path.display().to_string(),
                location: format!("line {}", ln + 1),
                reason: reason.into(),
            };
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.take(3).map(|s| s.parse().map_err(|_| bad("vertex"))).collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|s| {
                            s.split('/')
                                .next()
                                .and_then(|i| i.parse::<u32>().ok())
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| bad("face index"))
                        })
                        .collect::<Result<_>>()?;
                    // fan-triangulate polygons
                    for k in 1..idx.len().saturating_sub(1) {
                        mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        if mesh.triangles.iter().flatten().any(|&i| i as usize >= mesh.vertices.len()) {
            return Err(Error::Malformed {
                file: path.display().to_string(),
                location: "faces".into(),
                reason: "face index out of range".into(),
            });
        }
        Ok(mesh)
    }
}
