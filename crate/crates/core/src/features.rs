//! Feature channels: colour (hue/saturation histograms) and saliency vectors
//! built from extracted frames, plus ingestion of precomputed channels.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub const HIST_BINS: usize = 50;
pub const COLOR_DIM: usize = 2 * HIST_BINS;
pub const SALIENCY_SIDE: usize = 50;
pub const SALIENCY_DIM: usize = SALIENCY_SIDE * SALIENCY_SIDE;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad image {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },
    #[error("no frames")]
    NoFrames,
    #[error("frame has no pixels")]
    EmptyFrame,
    #[error("map size {got:?} differs from {want:?}")]
    SizeMismatch { want: (usize, usize), got: (usize, usize) },
    #[error("item {item}: dimension {got}, expected {want}")]
    DimensionMismatch { item: String, want: usize, got: usize },
    #[error("item {0}: non-finite value")]
    NonFinite(String),
    #[error("duplicate item id: {0}")]
    DuplicateItem(String),
    #[error("channel parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Named set of fixed-dimension vectors keyed by video or segment id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChannel {
    pub name: String,
    pub dim: usize,
    #[serde(deserialize_with = "unique_map")]
    pub vectors: BTreeMap<String, Vec<f64>>,
}

fn unique_map<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, Vec<f64>>, D::Error> {
    struct UniqueVisitor;
    impl<'de> Visitor<'de> for UniqueVisitor {
        type Value = BTreeMap<String, Vec<f64>>;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map of item id to vector")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((k, v)) = map.next_entry::<String, Vec<f64>>()? {
                if out.contains_key(&k) {
                    return Err(serde::de::Error::custom(format!("duplicate item id: {k}")));
                }
                out.insert(k, v);
            }
            Ok(out)
        }
    }
    d.deserialize_map(UniqueVisitor)
}

impl FeatureChannel {
    pub fn new(name: &str, dim: usize) -> Self {
        FeatureChannel { name: name.to_owned(), dim, vectors: BTreeMap::new() }
    }

    pub fn insert(&mut self, item: &str, v: Vec<f64>) -> Result<()> {
        check_vector(item, &v, self.dim)?;
        if self.vectors.insert(item.to_owned(), v).is_some() {
            return Err(FeatureError::DuplicateItem(item.to_owned()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(FeatureError::Parse("dim must be positive".into()));
        }
        for (k, v) in &self.vectors {
            check_vector(k, v, self.dim)?;
        }
        Ok(())
    }

    pub fn get(&self, item: &str) -> Option<&[f64]> {
        self.vectors.get(item).map(Vec::as_slice)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("channel serializes")
    }
}

fn check_vector(item: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(FeatureError::DimensionMismatch { item: item.to_owned(), want: dim, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FeatureError::NonFinite(item.to_owned()));
    }
    Ok(())
}

pub fn parse_channel(json: &str, expected_dim: Option<usize>) -> Result<FeatureChannel> {
    // NaN is not valid JSON, but a stray `NaN` token should read as non-finite data
    let ch: FeatureChannel = serde_json::from_str(json).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("duplicate item id: ") {
            Some(rest) => FeatureError::DuplicateItem(rest.split(" at line").next().unwrap_or(rest).to_owned()),
            None => FeatureError::Parse(msg),
        }
    })?;
    ch.validate()?;
    if let Some(want) = expected_dim {
        if want != ch.dim {
            return Err(FeatureError::DimensionMismatch { item: ch.name.clone(), want, got: ch.dim });
        }
    }
    Ok(ch)
}

/// Loads a channel file `{name, dim, vectors: {item_id: [..]}}`.
pub fn load_channel(path: &Path, expected_dim: Option<usize>) -> Result<FeatureChannel> {
    let text = fs::read_to_string(path).map_err(|source| FeatureError::Io { path: path.to_owned(), source })?;
    parse_channel(&text, expected_dim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

impl FrameImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width * height * 3).then_some(FrameImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        FrameImage { width, height, pixels: rgb.repeat(width * height) }
    }
}

/// Grayscale map with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GrayMap {
    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        GrayMap { width, height, values: vec![v; width * height] }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

struct Netpbm {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    samples: Vec<u32>,
}

fn parse_netpbm(bytes: &[u8], path: &Path) -> Result<Netpbm> {
    let bad = |reason: &str| FeatureError::BadImage { path: path.to_owned(), reason: reason.to_owned() };
    if bytes.len() < 2 {
        return Err(bad("truncated header"));
    }
    let magic = [bytes[0], bytes[1]];
    let channels = match &magic {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(bad("unsupported magic")),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    // exactly one whitespace byte before the raster
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    let n = width as usize * height as usize * channels;
    let wide = maxval > 255;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    let needed = if wide { 2 * n } else { n };
    if raster.len() < needed {
        return Err(bad("truncated raster"));
    }
    let samples = if wide {
        raster[..needed].chunks_exact(2).map(|c| u32::from(c[0]) << 8 | u32::from(c[1])).collect()
    } else {
        raster[..n].iter().map(|&b| u32::from(b)).collect()
    };
    Ok(Netpbm { magic, width: width as usize, height: height as usize, maxval, samples })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| FeatureError::Io { path: path.to_owned(), source })
}

/// Reads a binary PPM (P6) frame.
pub fn read_ppm(path: &Path) -> Result<FrameImage> {
    let img = parse_netpbm(&read_bytes(path)?, path)?;
    if &img.magic != b"P6" {
        return Err(FeatureError::BadImage { path: path.to_owned(), reason: "expected P6".into() });
    }
    let pixels = if img.maxval == 255 {
        img.samples.iter().map(|&s| s as u8).collect()
    } else {
        img.samples
            .iter()
            .map(|&s| ((f64::from(s) * 255.0 / f64::from(img.maxval)).round()) as u8)
            .collect()
    };
    Ok(FrameImage { width: img.width, height: img.height, pixels })
}

/// Reads a binary PGM (P5) map, normalized to `[0, 1]` by its maxval.
pub fn read_pgm(path: &Path) -> Result<GrayMap> {
    let img = parse_netpbm(&read_bytes(path)?, path)?;
    if &img.magic != b"P5" {
        return Err(FeatureError::BadImage { path: path.to_owned(), reason: "expected P5".into() });
    }
    let max = f64::from(img.maxval);
    Ok(GrayMap {
        width: img.width,
        height: img.height,
        values: img.samples.iter().map(|&s| f64::from(s) / max).collect(),
    })
}

pub fn write_ppm(path: &Path, frame: &FrameImage) -> std::io::Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    fs::write(path, out)
}

pub fn write_pgm(path: &Path, map: &GrayMap) -> std::io::Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out)
}

/// Indices of `k` uniformly spaced frames out of `n`: `floor(i * n / k)`.
pub fn sample_indices(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * n / k).collect()
}

pub fn sample_frames<P: AsRef<Path>>(frame_paths: &[P], k: usize) -> Result<Vec<FrameImage>> {
    if frame_paths.is_empty() {
        return Err(FeatureError::NoFrames);
    }
    sample_indices(frame_paths.len(), k)
        .into_iter()
        .map(|i| read_ppm(frame_paths[i].as_ref()))
        .collect()
}

/// RGB (0..=255) to (hue in degrees `[0, 360)`, saturation, value) with value in `[0, 1]`.
/// Achromatic pixels get hue 0.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (f64::from(r) / 255.0, f64::from(g) / 255.0, f64::from(b) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (if h >= 360.0 { h - 360.0 } else { h }, s, max)
}

fn bin(value: f64, range: f64) -> usize {
    ((value / range * HIST_BINS as f64).floor() as usize).min(HIST_BINS - 1)
}

/// 100-dim colour descriptor: mean 50-bin hue histogram followed by mean
/// 50-bin saturation histogram, each frame histogram normalized to sum 1.
pub fn color_feature(frames: &[FrameImage]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(FeatureError::NoFrames);
    }
    let mut out = vec![0.0; COLOR_DIM];
    for f in frames {
        let n = f.width * f.height;
        if n == 0 || f.pixels.len() != n * 3 {
            return Err(FeatureError::EmptyFrame);
        }
        let mut hue = [0usize; HIST_BINS];
        let mut sat = [0usize; HIST_BINS];
        for px in f.pixels.chunks_exact(3) {
            let (h, s, _) = rgb_to_hsv(px[0], px[1], px[2]);
            hue[bin(h, 360.0)] += 1;
            sat[bin(s, 1.0)] += 1;
        }
        let w = 1.0 / (n as f64 * frames.len() as f64);
        for b in 0..HIST_BINS {
            out[b] += hue[b] as f64 * w;
            out[HIST_BINS + b] += sat[b] as f64 * w;
        }
    }
    Ok(out)
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(map: &GrayMap, width: usize, height: usize) -> GrayMap {
    let sx = map.width as f64 / width as f64;
    let sy = map.height as f64 / height as f64;
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (map.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(map.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (map.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(map.width - 1);
            let tx = fx - x0 as f64;
            let top = map.at(x0, y0) * (1.0 - tx) + map.at(x1, y0) * tx;
            let bottom = map.at(x0, y1) * (1.0 - tx) + map.at(x1, y1) * tx;
            values.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    GrayMap { width, height, values }
}

/// 2500-dim saliency descriptor: pixel-wise mean map resized to 50x50.
pub fn saliency_feature(maps: &[GrayMap]) -> Result<Vec<f64>> {
    let first = maps.first().ok_or(FeatureError::NoFrames)?;
    if first.width == 0 || first.height == 0 {
        return Err(FeatureError::EmptyFrame);
    }
    let mut mean = vec![0.0; first.values.len()];
    for m in maps {
        if (m.width, m.height) != (first.width, first.height) {
            return Err(FeatureError::SizeMismatch { want: (first.width, first.height), got: (m.width, m.height) });
        }
        for (acc, v) in mean.iter_mut().zip(&m.values) {
            *acc += v;
        }
    }
    let n = maps.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    let avg = GrayMap { width: first.width, height: first.height, values: mean };
    Ok(resize_bilinear(&avg, SALIENCY_SIDE, SALIENCY_SIDE).values)
}

/// Files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|source| FeatureError::Io { path: dir.to_owned(), source })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

fn item_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(root).map_err(|source| FeatureError::Io { path: root.to_owned(), source })?;
    let mut dirs: Vec<(String, PathBuf)> = rd
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// COL channel over `root/<item_id>/*.ppm`.
pub fn color_channel(root: &Path, k: usize) -> Result<FeatureChannel> {
    let mut ch = FeatureChannel::new("COL", COLOR_DIM);
    for (item, dir) in item_dirs(root)? {
        let frames = sample_frames(&list_files(&dir, "ppm")?, k)?;
        ch.insert(&item, color_feature(&frames)?)?;
    }
    Ok(ch)
}

/// SAL channel over `root/<item_id>/*.pgm`.
pub fn saliency_channel(root: &Path) -> Result<FeatureChannel> {
    let mut ch = FeatureChannel::new("SAL", SALIENCY_DIM);
    for (item, dir) in item_dirs(root)? {
        let maps = list_files(&dir, "pgm")?
            .iter()
            .map(|p| read_pgm(p))
            .collect::<Result<Vec<_>>>()?;
        ch.insert(&item, saliency_feature(&maps)?)?;
    }
    Ok(ch)
}
