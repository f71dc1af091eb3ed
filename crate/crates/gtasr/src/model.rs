//! Conditional predictor f(x_t, y0, t) and the online / reference /
//! target parameter lifecycle.
//!
//! The network is a small two-level encoder–decoder with one skip
//! connection, SiLU activations and nearest-neighbour upsampling.
//! Conditioning is by channel concatenation of [x_t, y0, t/T plane].
//! The output is predicted as a residual on top of x_t.
//!
//! Parameter stores are immutable snapshots: "copying" a network for
//! the reference or target role just clones the tensors (shared,
//! immutable buffers), which by construction carries no tape nodes and
//! therefore can never receive gradients.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pfode::Predictor;
use crate::rng;
use crate::tensor::{Tape, Tensor};

/// Architecture hyperparameters. Parameter shapes are a pure function
/// of this struct.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Channel width of the full-resolution trunk; the half-resolution
    /// trunk uses twice this.
    pub base_width: usize,
    /// Number of conv blocks at half resolution.
    pub depth: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_width: 16,
            depth: 3,
        }
    }
}

struct LayerSpec {
    name: String,
    shape: Vec<usize>,
    init_std: f64,
}

fn kaiming(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

fn layer_specs(config: &NetConfig) -> Result<Vec<LayerSpec>> {
    if config.base_width == 0 || config.depth == 0 {
        return Err(Error::InvalidArgument(
            "net config: base_width and depth must be >= 1".into(),
        ));
    }
    let w = config.base_width;
    let mut specs = Vec::new();
    let mut conv = |name: &str, o: usize, i: usize, std_scale: f64| {
        let fan_in = i * 9;
        specs.push(LayerSpec {
            name: format!("{name}.w"),
            shape: vec![o, i, 3, 3],
            init_std: kaiming(fan_in) * std_scale,
        });
        specs.push(LayerSpec {
            name: format!("{name}.b"),
            shape: vec![o],
            init_std: 0.0,
        });
    };
    conv("enc1", w, 3, 1.0);
    conv("enc2", w, w, 1.0);
    conv("down", 2 * w, w, 1.0);
    for i in 0..config.depth {
        conv(&format!("mid{i}"), 2 * w, 2 * w, 1.0);
    }
    conv("up", w, 2 * w, 1.0);
    conv("dec", w, 2 * w, 1.0);
    // Small output init keeps the untrained net near the identity map.
    conv("out", 1, w, 0.01);
    Ok(specs)
}

/// Named immutable parameter store plus its architecture config.
#[derive(Clone)]
pub struct PredictorNet {
    config: NetConfig,
    params: Vec<(String, Tensor)>,
}

impl PredictorNet {
    /// Fresh network with Kaiming-style seeded initialization.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let specs = layer_specs(&config)?;
        let mut r = rng::seeded(seed, rng::streams::WEIGHT_INIT);
        let params = specs
            .into_iter()
            .map(|s| {
                let t = if s.init_std == 0.0 {
                    Tensor::zeros(&s.shape)
                } else {
                    rng::randn(&s.shape, &mut r).scale(s.init_std as f32).unwrap()
                };
                (s.name, t)
            })
            .collect();
        Ok(PredictorNet { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replace parameter `idx` with new values (same shape).
    pub fn set_param(&mut self, idx: usize, values: Vec<f32>) -> Result<()> {
        let (_, old) = &self.params[idx];
        if values.len() != old.numel() {
            return Err(Error::ShapeMismatch {
                context: "set_param",
                lhs: old.shape().to_vec(),
                rhs: vec![values.len()],
            });
        }
        let shape = old.shape().to_vec();
        self.params[idx].1 = Tensor::from_vec(values, &shape)?;
        Ok(())
    }

    /// Forward pass with parameter `idx` spliced out for `values`,
    /// which may be tape-attached. This is the probe entry point for
    /// finite-difference gradient checks: the substituted tensor keeps
    /// its tape node, so the same closure serves both the analytic and
    /// the numeric side of the comparison.
    pub fn predict_with_param(
        &self,
        idx: usize,
        values: &Tensor,
        x_t: &Tensor,
        y0: &Tensor,
        t: u32,
        t_total: u32,
    ) -> Result<Tensor> {
        let old = &self.params[idx].1;
        if values.shape() != old.shape() {
            return Err(Error::ShapeMismatch {
                context: "predict_with_param",
                lhs: old.shape().to_vec(),
                rhs: values.shape().to_vec(),
            });
        }
        let tensors: Vec<Tensor> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, (_, t))| if i == idx { values.clone() } else { t.clone() })
            .collect();
        forward(&self.config, &tensors, x_t, y0, t, t_total)
    }

    /// Index of a named parameter, for probing and optimizer plumbing.
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|(n, _)| n == name)
    }

    /// Attach every parameter to `tape` as a gradient-requiring leaf.
    pub fn attach(&self, tape: &Tape) -> LiveNet {
        LiveNet {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), tape.var(t)))
                .collect(),
        }
    }

    /// Rebuild a network from checkpoint arrays, inferring the config
    /// from the parameter shapes.
    pub fn from_arrays(arrays: &[(String, Tensor)]) -> Result<Self> {
        let enc1 = arrays
            .iter()
            .find(|(n, _)| n == "enc1.w")
            .ok_or_else(|| Error::Checkpoint("missing parameter enc1.w".into()))?;
        if enc1.1.shape().len() != 4 {
            return Err(Error::Checkpoint("enc1.w is not a conv kernel".into()));
        }
        let base_width = enc1.1.shape()[0];
        let depth = arrays
            .iter()
            .filter(|(n, _)| n.starts_with("mid") && n.ends_with(".w"))
            .count();
        let config = NetConfig { base_width, depth };
        let specs = layer_specs(&config)?;
        let mut params = Vec::with_capacity(specs.len());
        for s in &specs {
            let found = arrays
                .iter()
                .find(|(n, _)| *n == s.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", s.name)))?;
            if found.1.shape() != s.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    found.1.shape(),
                    s.shape
                )));
            }
            params.push((s.name.clone(), found.1.clone()));
        }
        Ok(PredictorNet { config, params })
    }
}

impl Predictor for PredictorNet {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: u32, t_total: u32) -> Result<Tensor> {
        let tensors: Vec<Tensor> = self.params.iter().map(|(_, t)| t.clone()).collect();
        forward(&self.config, &tensors, x_t, y0, t, t_total)
    }
}

/// Tape-attached view of a network for one training iteration.
pub struct LiveNet {
    config: NetConfig,
    params: Vec<(String, Tensor)>,
}

impl LiveNet {
    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }
}

impl Predictor for LiveNet {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: u32, t_total: u32) -> Result<Tensor> {
        let tensors: Vec<Tensor> = self.params.iter().map(|(_, t)| t.clone()).collect();
        forward(&self.config, &tensors, x_t, y0, t, t_total)
    }
}

/// Predictor view of a network with one parameter overridden, so loss
/// functions taking `&dyn Predictor` can be probed parameter-wise by
/// the gradient-check harness without special-case entry points.
pub struct PatchedPredictor<'a> {
    pub net: &'a PredictorNet,
    pub idx: usize,
    pub values: Tensor,
}

impl Predictor for PatchedPredictor<'_> {
    fn predict(&self, x_t: &Tensor, y0: &Tensor, t: u32, t_total: u32) -> Result<Tensor> {
        self.net
            .predict_with_param(self.idx, &self.values, x_t, y0, t, t_total)
    }
}

fn forward(
    config: &NetConfig,
    params: &[Tensor],
    x_t: &Tensor,
    y0: &Tensor,
    t: u32,
    t_total: u32,
) -> Result<Tensor> {
    if x_t.shape() != y0.shape() {
        return Err(Error::ShapeMismatch {
            context: "predict x_t/y0",
            lhs: x_t.shape().to_vec(),
            rhs: y0.shape().to_vec(),
        });
    }
    let shape = x_t.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::InvalidShape(format!(
            "predict expects (N,1,H,W) inputs, got {shape:?}"
        )));
    }
    if shape[2] % 2 != 0 || shape[3] % 2 != 0 || shape[2] < 4 || shape[3] < 4 {
        return Err(Error::InvalidShape(format!(
            "predict needs even H,W >= 4 for the down/up path, got {shape:?}"
        )));
    }
    if t == 0 || t > t_total {
        return Err(Error::InvalidArgument(format!(
            "predict needs 1 <= t <= {t_total}, got {t}"
        )));
    }

    let mut it = params.iter();
    let mut next = || it.next().expect("parameter list matches layer specs");

    let t_plane = Tensor::full(shape, t as f32 / t_total as f32);
    let h = x_t.concat_c(y0)?.concat_c(&t_plane)?;

    let block = |h: &Tensor, w: &Tensor, b: &Tensor, stride: usize| -> Result<Tensor> {
        h.conv2d(w, stride, 1)?.bias_add_c(b)?.silu()
    };

    let h = block(&h, next(), next(), 1)?;
    let skip = block(&h, next(), next(), 1)?;
    let mut h = block(&skip, next(), next(), 2)?;
    for _ in 0..config.depth {
        h = block(&h, next(), next(), 1)?;
    }
    let h = block(&h, next(), next(), 1)?.upsample_nearest_2x()?;
    let h = block(&h.concat_c(&skip)?, next(), next(), 1)?;
    let residual = h.conv2d(next(), 1, 1)?.bias_add_c(next())?;
    x_t.add(&residual)
}

/// The three parameter sets of the training loop: online (trained),
/// reference (per-step stop-gradient copy), target (hard-synced copy).
pub struct NetworkTriplet {
    pub online: PredictorNet,
    pub reference: PredictorNet,
    pub target: PredictorNet,
}

impl NetworkTriplet {
    pub fn new(online: PredictorNet) -> Self {
        let reference = online.clone();
        let target = online.clone();
        NetworkTriplet {
            online,
            reference,
            target,
        }
    }

    /// reference <- value copy of online (every iteration).
    pub fn copy_reference(&mut self) {
        self.reference = self.online.clone();
    }

    /// target <- value copy of online (at sync iterations only).
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

// --- checkpoint I/O ------------------------------------------------------

const MAGIC: &[u8; 4] = b"GTCK";
const VERSION: u32 = 1;

/// Trailer metadata carried by every checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub iteration: u32,
    pub stage: u8,
}

/// Serialize named arrays: magic, version, count; per array: u16 name
/// length + UTF-8 name, u8 rank, u32 extents, f32 little-endian data;
/// trailer: u32 iteration, u8 stage.
pub fn save_checkpoint(
    path: &Path,
    arrays: &[(String, &Tensor)],
    meta: CheckpointMeta,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, tensor) in arrays {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("array name too long: {name}")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Checkpoint(format!("rank too large for {name}")));
        }
        buf.push(shape.len() as u8);
        for &d in shape {
            if d > u32::MAX as usize {
                return Err(Error::Checkpoint(format!("extent too large for {name}")));
            }
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&meta.iteration.to_le_bytes());
    buf.push(meta.stage);

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Inverse of [`save_checkpoint`]; validates magic, version and exact
/// length.
pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;

    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated (needed {n} bytes at offset {pos:?})",
                path.display(),
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic (not a checkpoint)",
            path.display()
        )));
    }
    let version = take_u32(&mut pos)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let count = take_u32(&mut pos)? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: non-UTF-8 name", path.display())))?;
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut pos)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push((name, Tensor::from_vec(data, &shape)?));
    }
    let iteration = take_u32(&mut pos)?;
    let stage = take(&mut pos, 1)?[0];
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} trailing bytes after checkpoint end",
            path.display(),
            bytes.len() - pos
        )));
    }
    Ok((arrays, CheckpointMeta { iteration, stage }))
}
