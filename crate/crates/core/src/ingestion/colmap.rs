//! COLMAP sparse model reader/writer (text and binary layouts).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector4};

use crate::error::{Error, Result};
use crate::math::{mat_to_quat, quat_to_mat, Vec3};
use crate::scene::CameraView;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedPoint {
    pub position: Vec3,
    pub color: [u8; 3],
}

/// Registered images (sorted by COLMAP image id) and sparse seed points.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ColmapBundle {
    pub views: Vec<CameraView>,
    pub image_names: Vec<String>,
    pub image_ids: Vec<u32>,
    pub points: Vec<SeedPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColmapFormat {
    Text,
    Binary,
}

#[derive(Clone, Debug)]
struct Camera {
    width: usize,
    height: usize,
    k: Matrix3<f64>,
}

struct ImageRecord {
    id: u32,
    q: Vector4<f64>,
    t: Vec3,
    camera: u32,
    name: String,
}

const MODEL_NAMES: [(&str, usize); 11] = [
    ("SIMPLE_PINHOLE", 3),
    ("PINHOLE", 4),
    ("SIMPLE_RADIAL", 4),
    ("RADIAL", 5),
    ("OPENCV", 8),
    ("OPENCV_FISHEYE", 8),
    ("FULL_OPENCV", 12),
    ("FOV", 5),
    ("SIMPLE_RADIAL_FISHEYE", 4),
    ("RADIAL_FISHEYE", 5),
    ("THIN_PRISM_FISHEYE", 12),
];

fn intrinsics(model: &str, p: &[f64]) -> Result<Matrix3<f64>> {
    let (fx, fy, cx, cy) = match model {
        "SIMPLE_PINHOLE" => (p[0], p[0], p[1], p[2]),
        "PINHOLE" => (p[0], p[1], p[2], p[3]),
        other => return Err(Error::UnsupportedCameraModel(other.to_string())),
    };
    Ok(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
}

/// Finds the image directory next to a sparse model: `<dir>/images`,
/// `<dir>/../images` or `<dir>/../../images`; falls back to `<dir>`.
pub fn default_image_dir(dir: &Path) -> PathBuf {
    let mut cur = Some(dir);
    for _ in 0..3 {
        let Some(d) = cur else { break };
        let cand = d.join("images");
        if cand.is_dir() {
            return cand;
        }
        cur = d.parent();
    }
    dir.to_path_buf()
}

pub fn detect_format(dir: &Path) -> Option<ColmapFormat> {
    if dir.join("cameras.bin").is_file() {
        Some(ColmapFormat::Binary)
    } else if dir.join("cameras.txt").is_file() {
        Some(ColmapFormat::Text)
    } else {
        None
    }
}

/// Loads a sparse model, preferring the binary files when both layouts exist.
pub fn load_colmap(dir: &Path) -> Result<ColmapBundle> {
    match detect_format(dir) {
        Some(f) => load_colmap_as(dir, f),
        None => Err(Error::file(
            dir.join("cameras.txt"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no cameras.txt or cameras.bin"),
        )),
    }
}

pub fn load_colmap_as(dir: &Path, format: ColmapFormat) -> Result<ColmapBundle> {
    let (cameras, images, points) = match format {
        ColmapFormat::Text => (
            text::cameras(&dir.join("cameras.txt"))?,
            text::images(&dir.join("images.txt"))?,
            text::points(&dir.join("points3D.txt"))?,
        ),
        ColmapFormat::Binary => (
            binary::cameras(&dir.join("cameras.bin"))?,
            binary::images(&dir.join("images.bin"))?,
            binary::points(&dir.join("points3D.bin"))?,
        ),
    };
    assemble(dir, cameras, images, points)
}

fn assemble(
    dir: &Path,
    cameras: BTreeMap<u32, Camera>,
    mut images: Vec<ImageRecord>,
    points: Vec<SeedPoint>,
) -> Result<ColmapBundle> {
    images.sort_by_key(|r| r.id);
    let image_dir = default_image_dir(dir);
    let mut bundle = ColmapBundle {
        points,
        ..Default::default()
    };
    for (idx, rec) in images.into_iter().enumerate() {
        let cam = cameras.get(&rec.camera).ok_or_else(|| Error::Malformed {
            file: "images".into(),
            location: format!("image {}", rec.id),
            reason: format!("references missing camera {}", rec.camera),
        })?;
        let r_cw = quat_to_mat(&rec.q.normalize());
        let center = -(r_cw.transpose() * rec.t);
        let mut view = CameraView::new(idx, cam.k, r_cw.transpose(), center, cam.width, cam.height);
        view.image_path = Some(image_dir.join(&rec.name));
        bundle.views.push(view);
        bundle.image_names.push(rec.name);
        bundle.image_ids.push(rec.id);
    }
    if let Some(p) = bundle.points.iter().position(|p| !p.position.iter().all(|v| v.is_finite())) {
        return Err(Error::Malformed {
            file: "points3D".into(),
            location: format!("point {p}"),
            reason: "non-finite position".into(),
        });
    }
    Ok(bundle)
}

/// Per-image PINHOLE camera and pose as written by `write_colmap`.
fn export_records(bundle: &ColmapBundle) -> Result<Vec<(u32, [f64; 4], Vector4<f64>, Vec3, usize, usize, String)>> {
    bundle
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let k = v.intrinsics;
            if k[(0, 1)] != 0.0 {
                return Err(Error::Config("COLMAP export requires zero skew".into()));
            }
            let r_cw = v.w2c();
            let q = mat_to_quat(&r_cw);
            let t = -(r_cw * v.center);
            let id = bundle.image_ids.get(i).copied().unwrap_or(i as u32 + 1);
            let name = bundle
                .image_names
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("{i:04}.png"));
            Ok((id, [k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]], q, t, v.width, v.height, name))
        })
        .collect()
}

/// Writes one PINHOLE camera per image; points have empty tracks.
pub fn write_colmap(dir: &Path, bundle: &ColmapBundle, format: ColmapFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let recs = export_records(bundle)?;
    match format {
        ColmapFormat::Text => {
            let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
            let mut imgs = String::from("# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
            for (id, p, q, t, w, h, name) in &recs {
                cams.push_str(&format!("{id} PINHOLE {w} {h} {} {} {} {}\n", p[0], p[1], p[2], p[3]));
                imgs.push_str(&format!(
                    "{id} {} {} {} {} {} {} {} {id} {name}\n\n",
                    q[0], q[1], q[2], q[3], t.x, t.y, t.z
                ));
            }
            let mut pts = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
            for (i, p) in bundle.points.iter().enumerate() {
                let [r, g, b] = p.color;
                pts.push_str(&format!(
                    "{} {} {} {} {r} {g} {b} 0\n",
                    i + 1,
                    p.position.x,
                    p.position.y,
                    p.position.z
                ));
            }
            write_file(&dir.join("cameras.txt"), cams.as_bytes())?;
            write_file(&dir.join("images.txt"), imgs.as_bytes())?;
            write_file(&dir.join("points3D.txt"), pts.as_bytes())?;
        }
        ColmapFormat::Binary => {
            let mut cams = Vec::new();
            let mut imgs = Vec::new();
            cams.extend((recs.len() as u64).to_le_bytes());
            imgs.extend((recs.len() as u64).to_le_bytes());
            for (id, p, q, t, w, h, name) in &recs {
                cams.extend(id.to_le_bytes());
                cams.extend(1i32.to_le_bytes());
                cams.extend((*w as u64).to_le_bytes());
                cams.extend((*h as u64).to_le_bytes());
                p.iter().for_each(|v| cams.extend(v.to_le_bytes()));
                imgs.extend(id.to_le_bytes());
                q.iter().for_each(|v| imgs.extend(v.to_le_bytes()));
                t.iter().for_each(|v| imgs.extend(v.to_le_bytes()));
                imgs.extend(id.to_le_bytes());
                imgs.extend(name.as_bytes());
                imgs.push(0);
                imgs.extend(0u64.to_le_bytes());
            }
            let mut pts = Vec::new();
            pts.extend((bundle.points.len() as u64).to_le_bytes());
            for (i, p) in bundle.points.iter().enumerate() {
                pts.extend((i as u64 + 1).to_le_bytes());
                p.position.iter().for_each(|v| pts.extend(v.to_le_bytes()));
                pts.extend(p.color);
                pts.extend(0f64.to_le_bytes());
                pts.extend(0u64.to_le_bytes());
            }
            write_file(&dir.join("cameras.bin"), &cams)?;
            write_file(&dir.join("images.bin"), &imgs)?;
            write_file(&dir.join("points3D.bin"), &pts)?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(bytes).map_err(|e| Error::file(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

mod text {
    use super::*;

    fn file_name(path: &Path) -> String {
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
        Error::Malformed {
            file: file_name(path),
            location: format!("line {line}"),
            reason: reason.into(),
        }
    }

    fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
        let bytes = read_file(path)?;
        let s = String::from_utf8(bytes).map_err(|_| malformed(path, 0, "not UTF-8"))?;
        Ok(s.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
            .map(|(i, l)| (i + 1, l.to_string()))
            .collect())
    }

    fn field<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
        tok.ok_or_else(|| malformed(path, line, format!("missing {what}")))?
            .parse()
            .map_err(|_| malformed(path, line, format!("bad {what}")))
    }

    pub(super) fn cameras(path: &Path) -> Result<BTreeMap<u32, Camera>> {
        let mut out = BTreeMap::new();
        for (ln, l) in lines(path)? {
            if l.trim().is_empty() {
                continue;
            }
            let mut it = l.split_whitespace();
            let id: u32 = field(path, ln, it.next(), "camera id")?;
            let model = it.next().ok_or_else(|| malformed(path, ln, "missing model"))?.to_string();
            let width: usize = field(path, ln, it.next(), "width")?;
            let height: usize = field(path, ln, it.next(), "height")?;
            let params: Vec<f64> = it
                .map(|t| t.parse().map_err(|_| malformed(path, ln, "bad parameter")))
                .collect::<Result<_>>()?;
            let expected = MODEL_NAMES.iter().find(|(n, _)| *n == model).map(|(_, c)| *c);
            match expected {
                None => return Err(Error::UnsupportedCameraModel(model)),
                Some(c) if c != params.len() => {
                    return Err(malformed(path, ln, format!("{model} needs {c} parameters, got {}", params.len())))
                }
                _ => {}
            }
            let k = intrinsics(&model, &params)?;
            out.insert(id, Camera { width, height, k });
        }
        Ok(out)
    }

    pub(super) fn images(path: &Path) -> Result<Vec<ImageRecord>> {
        let all = lines(path)?;
        let mut out = Vec::new();
        let mut i = 0;
        while i < all.len() {
            let (ln, l) = &all[i];
            i += 1;
            if l.trim().is_empty() {
                continue;
            }
            let mut it = l.split_whitespace();
            let id: u32 = field(path, *ln, it.next(), "image id")?;
            let mut q = Vector4::zeros();
            for k in 0..4 {
                q[k] = field(path, *ln, it.next(), "quaternion")?;
            }
            let mut t = Vec3::zeros();
            for k in 0..3 {
                t[k] = field(path, *ln, it.next(), "translation")?;
            }
            let camera: u32 = field(path, *ln, it.next(), "camera id")?;
            let name = it.collect::<Vec<_>>().join(" ");
            if name.is_empty() {
                return Err(malformed(path, *ln, "missing image name"));
            }
            // the observation line follows every header, possibly empty
            i += 1;
            out.push(ImageRecord { id, q, t, camera, name });
        }
        Ok(out)
    }

    pub(super) fn points(path: &Path) -> Result<Vec<SeedPoint>> {
        let mut out = Vec::new();
        for (ln, l) in lines(path)? {
            if l.trim().is_empty() {
                continue;
            }
            let mut it = l.split_whitespace();
            let id: u64 = field(path, ln, it.next(), "point id")?;
            let mut p = Vec3::zeros();
            for k in 0..3 {
                p[k] = field(path, ln, it.next(), "position")?;
            }
            let mut c = [0u8; 3];
            for v in c.iter_mut() {
                *v = field(path, ln, it.next(), "color")?;
            }
            out.push((id, SeedPoint { position: p, color: c }));
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out.into_iter().map(|(_, p)| p).collect())
    }
}

mod binary {
    use super::*;

    struct Reader<'a> {
        file: String,
        bytes: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.pos + n > self.bytes.len() {
                return Err(self.error("unexpected end of file"));
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }
        fn error(&self, reason: impl Into<String>) -> Error {
            Error::Malformed {
                file: self.file.clone(),
                location: format!("byte {}", self.pos),
                reason: reason.into(),
            }
        }
        fn u8(&mut self) -> Result<u8> {
            Ok(self.take(1)?[0])
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        fn i32(&mut self) -> Result<i32> {
            Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn count(&mut self, elem: usize) -> Result<usize> {
            let n = self.u64()?;
            let remaining = (self.bytes.len() - self.pos) as u64;
            if n.saturating_mul(elem as u64) > remaining {
                return Err(self.error(format!("count {n} exceeds file size")));
            }
            Ok(n as usize)
        }
    }

    fn reader<'a>(path: &Path, bytes: &'a [u8]) -> Reader<'a> {
        Reader {
            file: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            bytes,
            pos: 0,
        }
    }

    pub(super) fn cameras(path: &Path) -> Result<BTreeMap<u32, Camera>> {
        let bytes = read_file(path)?;
        let mut r = reader(path, &bytes);
        let n = r.count(24)?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let id = r.u32()?;
            let model_id = r.i32()?;
            let width = r.u64()? as usize;
            let height = r.u64()? as usize;
            let (name, np) = usize::try_from(model_id)
                .ok()
                .and_then(|m| MODEL_NAMES.get(m).copied())
                .ok_or_else(|| Error::UnsupportedCameraModel(format!("model id {model_id}")))?;
            let params: Vec<f64> = (0..np).map(|_| r.f64()).collect::<Result<_>>()?;
            let k = intrinsics(name, &params)?;
            out.insert(id, Camera { width, height, k });
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        Ok(out)
    }

    pub(super) fn images(path: &Path) -> Result<Vec<ImageRecord>> {
        let bytes = read_file(path)?;
        let mut r = reader(path, &bytes);
        let n = r.count(64)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u32()?;
            let mut q = Vector4::zeros();
            for k in 0..4 {
                q[k] = r.f64()?;
            }
            let mut t = Vec3::zeros();
            for k in 0..3 {
                t[k] = r.f64()?;
            }
            let camera = r.u32()?;
            let mut name = Vec::new();
            loop {
                let c = r.u8()?;
                if c == 0 {
                    break;
                }
                name.push(c);
            }
            let name = String::from_utf8(name).map_err(|_| r.error("image name is not UTF-8"))?;
            let np = r.count(24)?;
            r.take(np * 24)?;
            out.push(ImageRecord { id, q, t, camera, name });
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        Ok(out)
    }

    pub(super) fn points(path: &Path) -> Result<Vec<SeedPoint>> {
        let bytes = read_file(path)?;
        let mut r = reader(path, &bytes);
        let n = r.count(51)?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.u64()?;
            let mut p = Vec3::zeros();
            for k in 0..3 {
                p[k] = r.f64()?;
            }
            let c = [r.u8()?, r.u8()?, r.u8()?];
            let _error = r.f64()?;
            let track = r.count(8)?;
            r.take(track * 8)?;
            out.push((id, SeedPoint { position: p, color: c }));
        }
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out.into_iter().map(|(_, p)| p).collect())
    }
}
