//! Synthetic HR image generation and a simplified degradation pipeline.
//!
//! Training pairs (x0, y0) are produced entirely from seeds: `gen_hr`
//! draws a clean grayscale image and `degrade` pushes it through
//! blur -> downsample -> noise -> bicubic upsample, so the degraded
//! observation lives at the same resolution as the clean image (the
//! residual y0 - x0 is well defined pixelwise). Every sample is a pure
//! function of (global_seed, split, index), which keeps the stream
//! reproducible and lets validation draw from an index range train can
//! never touch.
//!
//! Images are single-channel tensors in [0, 1] with shape (N, 1, H, W).
//! Blur uses replicate padding so constants are preserved exactly;
//! bicubic interpolation uses the Catmull-Rom kernel with per-phase
//! weight normalization so integer-factor upsampling of a constant is
//! exact and scale = 1 is the bitwise identity.

use std::fmt;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

/// Family of synthetic clean images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HrKind {
    /// Smoothed Gaussian random field, min-max normalized.
    Grf,
    /// Random-period checkerboard with random phase and levels.
    Checker,
    /// Anti-aliased rectangles and discs on a gradient background.
    Shapes,
}

impl HrKind {
    pub const ALL: [HrKind; 3] = [HrKind::Grf, HrKind::Checker, HrKind::Shapes];
}

impl FromStr for HrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grf" => Ok(HrKind::Grf),
            "checker" => Ok(HrKind::Checker),
            "shapes" => Ok(HrKind::Shapes),
            other => Err(Error::InvalidArgument(format!(
                "unknown image kind {other:?} (expected grf, checker or shapes)"
            ))),
        }
    }
}

impl fmt::Display for HrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HrKind::Grf => "grf",
            HrKind::Checker => "checker",
            HrKind::Shapes => "shapes",
        };
        f.write_str(s)
    }
}

/// Parameters of the degradation pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradeParams {
    /// Gaussian blur standard deviation in pixels; kernel radius ceil(3 sigma).
    pub blur_sigma: f32,
    /// Integer downsampling factor; must divide both image extents.
    pub scale: usize,
    /// Additive Gaussian noise standard deviation in [0,1] intensity units.
    pub noise_sigma: f32,
}

impl DegradeParams {
    pub fn new(blur_sigma: f32, scale: usize, noise_sigma: f32) -> Result<Self> {
        let p = DegradeParams {
            blur_sigma,
            scale,
            noise_sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.blur_sigma.is_finite() || self.blur_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "blur_sigma must be finite and >= 0, got {}",
                self.blur_sigma
            )));
        }
        if self.scale == 0 {
            return Err(Error::InvalidArgument("scale must be >= 1".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

const VALID_SIZES: [usize; 3] = [16, 32, 64];

/// Generate one clean image as a (1, 1, size, size) tensor in [0, 1].
/// Deterministic per (seed, size, kind).
pub fn gen_hr(seed: u64, size: usize, kind: HrKind) -> Result<Tensor> {
    if !VALID_SIZES.contains(&size) {
        return Err(Error::InvalidArgument(format!(
            "gen_hr: size must be one of {VALID_SIZES:?}, got {size}"
        )));
    }
    let mut r = rng::seeded(seed, streams::DATA_HR);
    let plane = match kind {
        HrKind::Grf => gen_grf(size, &mut r),
        HrKind::Checker => gen_checker(size, &mut r),
        HrKind::Shapes => gen_shapes(size, &mut r),
    };
    Tensor::from_vec(plane, &[1, 1, size, size])
}

fn gen_grf(size: usize, r: &mut impl Rng) -> Vec<f32> {
    let field: Vec<f32> = (0..size * size).map(|_| r.sample(StandardNormal)).collect();
    let smooth = blur_plane(&field, size, size, 2.0);
    let lo = smooth.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = smooth.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi - lo < 1e-12 {
        return vec![0.5; size * size];
    }
    smooth.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn gen_checker(size: usize, r: &mut impl Rng) -> Vec<f32> {
    let period = r.gen_range(2..=8usize);
    let phase_y = r.gen_range(0..2 * period);
    let phase_x = r.gen_range(0..2 * period);
    let low = r.gen_range(0.0..0.15f32);
    let high = r.gen_range(0.85..1.0f32);
    let mut plane = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let cell = (y + phase_y) / period + (x + phase_x) / period;
            plane[y * size + x] = if cell % 2 == 0 { low } else { high };
        }
    }
    plane
}

fn gen_shapes(size: usize, r: &mut impl Rng) -> Vec<f32> {
    let a = r.gen_range(0.0..1.0f32);
    let b = r.gen_range(0.0..1.0f32);
    let mix = r.gen_range(0.0..1.0f32);
    let denom = (size - 1) as f32;
    let mut plane = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let t = mix * y as f32 / denom + (1.0 - mix) * x as f32 / denom;
            plane[y * size + x] = a + (b - a) * t;
        }
    }
    let count = r.gen_range(2..=5usize);
    for _ in 0..count {
        let disc = r.gen_bool(0.5);
        let intensity = r.gen_range(0.0..1.0f32);
        let cy = r.gen_range(0.15..0.85f32) * size as f32;
        let cx = r.gen_range(0.15..0.85f32) * size as f32;
        if disc {
            let radius = r.gen_range(0.10..0.30f32) * size as f32;
            for y in 0..size {
                for x in 0..size {
                    let d = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt();
                    let cov = (radius - d + 0.5).clamp(0.0, 1.0);
                    let p = &mut plane[y * size + x];
                    *p = *p * (1.0 - cov) + intensity * cov;
                }
            }
        } else {
            let hy = r.gen_range(0.08..0.25f32) * size as f32;
            let hx = r.gen_range(0.08..0.25f32) * size as f32;
            for y in 0..size {
                for x in 0..size {
                    let cov_y = (hy - (y as f32 - cy).abs() + 0.5).clamp(0.0, 1.0);
                    let cov_x = (hx - (x as f32 - cx).abs() + 0.5).clamp(0.0, 1.0);
                    let cov = cov_y * cov_x;
                    let p = &mut plane[y * size + x];
                    *p = *p * (1.0 - cov) + intensity * cov;
                }
            }
        }
    }
    plane
}

/// Degrade a clean batch: Gaussian blur, average-pool downsample,
/// additive noise clipped to [0,1], bicubic upsample back to the input
/// resolution. Output shape equals the input shape. With
/// blur_sigma = 0, scale = 1, noise_sigma = 0 the output is bitwise
/// equal to the input; with noise_sigma = 0 the seed is unused.
pub fn degrade(hr: &Tensor, p: &DegradeParams, seed: u64) -> Result<Tensor> {
    p.validate()?;
    let shape = hr.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::InvalidShape(format!(
            "degrade expects (N, 1, H, W), got {shape:?}"
        )));
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    if h % p.scale != 0 || w % p.scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "scale {} does not divide image extent {}x{}",
            p.scale, h, w
        )));
    }
    let mut r = rng::seeded(seed, streams::DATA_DEGRADE);
    let data = hr.data();
    let mut out = Vec::with_capacity(data.len());
    for i in 0..n {
        let plane = &data[i * h * w..(i + 1) * h * w];
        let blurred = blur_plane(plane, h, w, p.blur_sigma);
        let mut lr = avg_pool_plane(&blurred, h, w, p.scale);
        if p.noise_sigma > 0.0 {
            for v in &mut lr {
                let z: f32 = r.sample(StandardNormal);
                *v = (*v + p.noise_sigma * z).clamp(0.0, 1.0);
            }
        }
        let up = bicubic_upsample_plane(&lr, h / p.scale, w / p.scale, p.scale);
        out.extend(up.iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Tensor::from_vec(out, shape)
}

/// Normalized 1-D Gaussian taps with radius ceil(3 sigma); sigma = 0
/// yields the identity kernel [1].
fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / s2).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur with replicate (clamp-to-edge) padding, so
/// constant images pass through unchanged and the output range never
/// leaves the input range.
fn blur_plane(plane: &[f32], h: usize, w: usize, sigma: f32) -> Vec<f32> {
    let taps = gaussian_kernel(sigma);
    if taps.len() == 1 {
        return plane.to_vec();
    }
    let radius = (taps.len() / 2) as i64;
    let mut pass_x = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (j, tap) in taps.iter().enumerate() {
                let xx = (x as i64 + j as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += *tap as f64 * plane[y * w + xx] as f64;
            }
            pass_x[y * w + x] = acc as f32;
        }
    }
    let mut pass_y = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (j, tap) in taps.iter().enumerate() {
                let yy = (y as i64 + j as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += *tap as f64 * pass_x[yy * w + x] as f64;
            }
            pass_y[y * w + x] = acc as f32;
        }
    }
    pass_y
}

/// Exact mean over scale x scale blocks.
fn avg_pool_plane(plane: &[f32], h: usize, w: usize, scale: usize) -> Vec<f32> {
    if scale == 1 {
        return plane.to_vec();
    }
    let (oh, ow) = (h / scale, w / scale);
    let inv = 1.0 / (scale * scale) as f64;
    let mut out = vec![0.0f32; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0f64;
            for dy in 0..scale {
                for dx in 0..scale {
                    acc += plane[(oy * scale + dy) * w + ox * scale + dx] as f64;
                }
            }
            out[oy * ow + ox] = (acc * inv) as f32;
        }
    }
    out
}

/// Catmull-Rom cubic convolution kernel (a = -1/2).
fn cubic_weight(d: f64) -> f64 {
    let a = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        (a + 2.0) * d * d * d - (a + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        a * d * d * d - 5.0 * a * d * d + 8.0 * a * d - 4.0 * a
    } else {
        0.0
    }
}

/// Per-phase 4-tap weights for integer-factor upsampling with the
/// half-pixel-center convention: src = (dst + 0.5)/scale - 0.5. Weights
/// are normalized to sum to one so constants are preserved; phase 0 at
/// scale 1 reduces to (0, 1, 0, 0), the exact identity.
fn bicubic_phase_weights(scale: usize) -> Vec<(i64, [f64; 4])> {
    (0..scale)
        .map(|phase| {
            let src = (phase as f64 + 0.5) / scale as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut w = [
                cubic_weight(frac + 1.0),
                cubic_weight(frac),
                cubic_weight(frac - 1.0),
                cubic_weight(frac - 2.0),
            ];
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            (base as i64 - 1, w)
        })
        .collect()
}

/// Separable bicubic upsampling by an integer factor with clamped tap
/// indices at the borders.
fn bicubic_upsample_plane(plane: &[f32], h: usize, w: usize, scale: usize) -> Vec<f32> {
    if scale == 1 {
        return plane.to_vec();
    }
    let phases = bicubic_phase_weights(scale);
    let (oh, ow) = (h * scale, w * scale);

    let mut rows = vec![0.0f32; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            let (offset, weights) = &phases[ox % scale];
            let base = (ox / scale) as i64 + offset;
            let mut acc = 0.0f64;
            for (j, wt) in weights.iter().enumerate() {
                let xx = (base + j as i64).clamp(0, w as i64 - 1) as usize;
                acc += wt * plane[y * w + xx] as f64;
            }
            rows[y * ow + ox] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; oh * ow];
    for oy in 0..oh {
        let (offset, weights) = &phases[oy % scale];
        let base = (oy / scale) as i64 + offset;
        for ox in 0..ow {
            let mut acc = 0.0f64;
            for (j, wt) in weights.iter().enumerate() {
                let yy = (base + j as i64).clamp(0, h as i64 - 1) as usize;
                acc += wt * rows[yy * ow + ox] as f64;
            }
            out[oy * ow + ox] = acc as f32;
        }
    }
    out
}

/// Dataset split. Validation samples draw from an index range train can
/// never reach, so the two streams are disjoint by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// First index of the validation range; train uses [0, VAL_INDEX_BASE).
pub const VAL_INDEX_BASE: u64 = 1 << 40;

/// Global sample index for the k-th sample of a split.
pub fn sample_index(split: Split, k: u64) -> u64 {
    match split {
        Split::Train => k,
        Split::Val => VAL_INDEX_BASE + k,
    }
}

/// splitmix64 finalizer; a stable stateless mixer so per-sample seeds
/// do not depend on any library's hasher internals.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-sample seed from (global_seed, split, index).
pub fn sample_seed(global_seed: u64, split: Split, k: u64) -> u64 {
    let index = sample_index(split, k);
    mix64(
        global_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(index),
    )
}

/// Configuration of the synthetic data stream.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Image edge length; one of 16, 32, 64.
    pub size: usize,
    /// Downsampling factor of the degradation.
    pub scale: usize,
    /// Per-sample uniform range for blur_sigma.
    pub blur_sigma: (f32, f32),
    /// Per-sample uniform range for noise_sigma.
    pub noise_sigma: (f32, f32),
    /// Fixed image kind, or None for a uniform per-sample mix.
    pub kind: Option<HrKind>,
    /// Samples per emitted batch.
    pub batch_size: usize,
    /// Seed from which all per-sample seeds are derived.
    pub global_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            size: 32,
            scale: 4,
            blur_sigma: (0.5, 1.5),
            noise_sigma: (0.01, 0.05),
            kind: None,
            batch_size: 8,
            global_seed: 42,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !VALID_SIZES.contains(&self.size) {
            return Err(Error::Config(format!(
                "data size must be one of {VALID_SIZES:?}, got {}",
                self.size
            )));
        }
        if self.scale == 0 || self.size % self.scale != 0 {
            return Err(Error::Config(format!(
                "scale {} must be >= 1 and divide size {}",
                self.scale, self.size
            )));
        }
        for (name, (lo, hi)) in [
            ("blur_sigma", self.blur_sigma),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
                return Err(Error::Config(format!(
                    "{name} range must satisfy 0 <= lo <= hi, got ({lo}, {hi})"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One (x0, y0) pair drawn from the deterministic stream.
fn gen_sample(cfg: &DataConfig, split: Split, k: u64) -> (Tensor, Tensor) {
    let seed = sample_seed(cfg.global_seed, split, k);
    let mut params = rng::seeded(seed, streams::BATCH);
    let kind = cfg.kind.unwrap_or_else(|| {
        HrKind::ALL[params.gen_range(0..HrKind::ALL.len())]
    });
    let blur = if cfg.blur_sigma.1 > cfg.blur_sigma.0 {
        params.gen_range(cfg.blur_sigma.0..cfg.blur_sigma.1)
    } else {
        cfg.blur_sigma.0
    };
    let noise = if cfg.noise_sigma.1 > cfg.noise_sigma.0 {
        params.gen_range(cfg.noise_sigma.0..cfg.noise_sigma.1)
    } else {
        cfg.noise_sigma.0
    };
    let hr = gen_hr(seed, cfg.size, kind).expect("gen_sample: size validated by DataConfig");
    let p = DegradeParams {
        blur_sigma: blur,
        scale: cfg.scale,
        noise_sigma: noise,
    };
    let y0 = degrade(&hr, &p, seed).expect("gen_sample: params validated by DataConfig");
    (hr, y0)
}

/// One (x0, y0) pair by split index, for probes that address instances
/// directly rather than through the batch iterator.
pub fn sample(cfg: &DataConfig, split: Split, k: u64) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    Ok(gen_sample(cfg, split, k))
}

/// Endless deterministic iterator of (x0, y0) batches with shape
/// (batch_size, 1, size, size); restarting it replays the same batches.
pub struct BatchStream {
    cfg: DataConfig,
    split: Split,
    next_k: u64,
}

impl Iterator for BatchStream {
    type Item = (Tensor, Tensor);

    fn next(&mut self) -> Option<Self::Item> {
        let b = self.cfg.batch_size;
        let plane = self.cfg.size * self.cfg.size;
        let mut hr = Vec::with_capacity(b * plane);
        let mut lr = Vec::with_capacity(b * plane);
        for slot in 0..b {
            let (x0, y0) = gen_sample(&self.cfg, self.split, self.next_k + slot as u64);
            hr.extend_from_slice(x0.data());
            lr.extend_from_slice(y0.data());
        }
        self.next_k += b as u64;
        let shape = [b, 1, self.cfg.size, self.cfg.size];
        Some((
            Tensor::from_vec(hr, &shape).expect("batch assembly shape is exact"),
            Tensor::from_vec(lr, &shape).expect("batch assembly shape is exact"),
        ))
    }
}

impl BatchStream {
    /// First sample index the next batch will use.
    pub fn position(&self) -> u64 {
        self.next_k
    }
}

/// Build the deterministic batch stream for a split.
pub fn batch_stream(cfg: &DataConfig, split: Split) -> Result<BatchStream> {
    cfg.validate()?;
    Ok(BatchStream {
        cfg: cfg.clone(),
        split,
        next_k: 0,
    })
}

/// Write a single-image tensor (1, 1, H, W) as binary PGM (P5, 8-bit).
pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    let shape = img.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 1 {
        return Err(Error::InvalidShape(format!(
            "write_pgm expects (1, 1, H, W), got {shape:?}"
        )));
    }
    let (h, w) = (shape[2], shape[3]);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        img.data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    file.write_all(&bytes)
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

/// Read a binary PGM (P5) into a (1, 1, H, W) tensor scaled to [0, 1].
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
    let err = |msg: &str| Error::Image(format!("{}: {msg}", path.display()));

    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        // Skip whitespace and '#' comments between header tokens.
        loop {
            match bytes.get(*pos) {
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(b'#') => {
                    while let Some(b) = bytes.get(*pos) {
                        *pos += 1;
                        if *b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = *pos;
        while let Some(b) = bytes.get(*pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            *pos += 1;
        }
        String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| err("non-ASCII header"))
    };

    if token(&mut pos)? != "P5" {
        return Err(err("not a binary PGM (expected magic P5)"));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| err(&format!("bad header integer {s:?}")))
    };
    let w = parse(token(&mut pos)?)?;
    let h = parse(token(&mut pos)?)?;
    let maxval = parse(token(&mut pos)?)?;
    if w == 0 || h == 0 {
        return Err(err("zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(&format!("unsupported maxval {maxval} (need 1..=255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing raster separator")),
    }
    let raster = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| err("truncated raster"))?;
    let data: Vec<f32> = raster.iter().map(|b| *b as f32 / maxval as f32).collect();
    Tensor::from_vec(data, &[1, 1, h, w])
}

/// Generate `count` paired PGM files hr_%06d.pgm / lr_%06d.pgm in
/// `out_dir` (created if missing) plus a manifest with one
/// "hr lr" line per pair. Samples follow the train-split seed rule, so
/// the files match what the stream would feed training. Returns the
/// manifest path.
pub fn generate_dataset(out_dir: &Path, count: usize, cfg: &DataConfig) -> Result<PathBuf> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("create {}", out_dir.display()), e))?;
    let mut manifest = String::new();
    for k in 0..count {
        let (x0, y0) = gen_sample(cfg, Split::Train, k as u64);
        let hr_name = format!("hr_{k:06}.pgm");
        let lr_name = format!("lr_{k:06}.pgm");
        write_pgm(&out_dir.join(&hr_name), &x0)?;
        write_pgm(&out_dir.join(&lr_name), &y0)?;
        manifest.push_str(&format!("{hr_name} {lr_name}\n"));
    }
    let manifest_path = out_dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest)
        .map_err(|e| Error::io(format!("write {}", manifest_path.display()), e))?;
    Ok(manifest_path)
}
