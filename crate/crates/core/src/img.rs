//! Floating point images and the file formats used for input and debug output
//! (8-bit PNG, binary PPM/PGM, PFM).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image with linear values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v;
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Luma with Rec. 601 weights; single-channel images are returned unchanged.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new(self.width, self.height, 1);
        for (o, px) in out.data.iter_mut().zip(self.data.chunks(self.channels)) {
            *o = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
        out
    }

    /// Box-filter downsampling by an integer factor. Trailing rows/columns that
    /// do not fill a whole block are averaged over the pixels they have.
    pub fn downsample(&self, factor: usize) -> Image {
        if factor <= 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut out = Image::new(w, h, self.channels);
        for oy in 0..h {
            for ox in 0..w {
                let y1 = ((oy + 1) * factor).min(self.height);
                let x1 = ((ox + 1) * factor).min(self.width);
                let mut n = 0.0;
                for y in oy * factor..y1 {
                    for x in ox * factor..x1 {
                        n += 1.0;
                        for c in 0..self.channels {
                            let v = self.get(x, y, c);
                            let i = out.idx(ox, oy) + c;
                            out.data[i] += v;
                        }
                    }
                }
                for c in 0..self.channels {
                    let i = out.idx(ox, oy) + c;
                    out.data[i] /= n;
                }
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        let mut out = Image::new(w, h, self.channels);
        for y in 0..h {
            let src = self.idx(x0, y0 + y);
            let dst = out.idx(0, y);
            out.data[dst..dst + w * self.channels]
                .copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn load(path: &Path) -> Result<Image> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "ppm" | "pgm" => read_pnm(path),
            "pfm" => read_pfm(path),
            _ => {
                let img = image::open(path)
                    .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
                    .to_rgb8();
                let (w, h) = img.dimensions();
                let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
                Ok(Image::from_data(w as usize, h as usize, 3, data))
            }
        }
    }

    /// Writes an 8-bit PNG (1 or 3 channels), clamping to [0,1].
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Image(format!("cannot write {c}-channel PNG"))),
        };
        image::save_buffer(path, &bytes, self.width as u32, self.height as u32, color)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Binary PPM (3 channels) or PGM (1 channel), 8-bit.
    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Image(format!("cannot write {c}-channel PNM"))),
        };
        let mut buf = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.data.iter().map(|&v| to_u8(v)));
        fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    /// Portable float map, little endian, rows stored bottom to top.
    pub fn save_pfm(&self, path: &Path) -> Result<()> {
        let magic = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::Image(format!("cannot write {c}-channel PFM"))),
        };
        let mut buf = format!("{magic}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            let row = self.idx(0, y);
            for &v in &self.data[row..row + self.width * self.channels] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        f.write_all(&buf).map_err(|e| Error::file(path, e))
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn read_header_tokens(r: &mut impl BufRead, n: usize) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < n {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Image("truncated header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    Ok(tokens)
}

fn read_pnm(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file);
    let t = read_header_tokens(&mut r, 4)?;
    let channels = match t[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(Error::Image(format!("{}: unsupported PNM magic {m}", path.display()))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Image(format!("{}: bad header value {s}", path.display())))
    };
    let (w, h, maxv) = (parse(&t[1])?, parse(&t[2])?, parse(&t[3])?);
    if maxv == 0 || maxv > 255 {
        return Err(Error::Image(format!("{}: only 8-bit PNM supported", path.display())));
    }
    let mut bytes = vec![0u8; w * h * channels];
    r.read_exact(&mut bytes)?;
    let data = bytes.iter().map(|&b| b as f64 / maxv as f64).collect();
    Ok(Image::from_data(w, h, channels, data))
}

fn read_pfm(path: &Path) -> Result<Image> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file);
    let t = read_header_tokens(&mut r, 4)?;
    let channels = match t[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        m => return Err(Error::Image(format!("{}: unsupported PFM magic {m}", path.display()))),
    };
    let w: usize = t[1].parse().map_err(|_| Error::Image("bad PFM width".into()))?;
    let h: usize = t[2].parse().map_err(|_| Error::Image("bad PFM height".into()))?;
    let scale: f64 = t[3].parse().map_err(|_| Error::Image("bad PFM scale".into()))?;
    let little = scale < 0.0;
    let mut bytes = vec![0u8; w * h * channels * 4];
    r.read_exact(&mut bytes)?;
    let mut img = Image::new(w, h, channels);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let arr = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        };
        let row = k / (w * channels);
        let rest = k % (w * channels);
        let y = h - 1 - row;
        img.data[y * w * channels + rest] = v as f64;
    }
    Ok(img)
}
