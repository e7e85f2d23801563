//! Saving and loading trained models, optimizer state and the SGLD replay
//! buffer.
//!
//! The binary layout is little-endian throughout:
//!
//! ```text
//! b"GEDICKPT"  u32 version
//! u8 model kind (0 = clustering model, 1 = SwAV-style model)
//! architecture: u32 input_dim, u32 k, k × u32 encoder widths, u32 latent_dim,
//!               u32 k, k × u32 head widths, u32 clusters,
//!               u8 activation (0 relu, 1 leaky relu + f64 slope), f64 tau
//! u32 tensor count, then per tensor: u32 rank, rank × u32 dims, f64 data
//! u8 has_adam  [f64 lr, beta1, beta2, eps, u64 step, u32 count, m tensors, v tensors]
//! u8 has_buffer [tensor]
//! ```
//!
//! Decoding never panics: malformed input yields [`Error::Format`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ebm::ReplayBuffer;
use crate::error::{Error, Result};
use crate::nets::{Activation, Architecture, Linear, Mlp, ModelParams, Parameters, SwavParams};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GEDICKPT";
pub const VERSION: u32 = 1;

const MAX_RANK: usize = 4;

/// A trained network of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Model {
    Gedi(ModelParams),
    Swav(SwavParams),
}

impl Model {
    pub fn arch(&self) -> &Architecture {
        match self {
            Model::Gedi(p) => &p.arch,
            Model::Swav(p) => &p.arch,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            Model::Gedi(p) => p.tensors(),
            Model::Swav(p) => p.tensors(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Gedi(p) => p.validate(),
            Model::Swav(p) => p.validate(),
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        match self {
            Model::Gedi(p) => p.predict(x),
            Model::Swav(p) => p.predict(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: Model,
    #[serde(default)]
    pub adam: Option<AdamState>,
    #[serde(default)]
    pub buffer: Option<ReplayBuffer>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Checkpoint {
    pub fn model_only(model: Model) -> Self {
        Self {
            model,
            adam: None,
            buffer: None,
        }
    }

    /// Shape consistency between model, optimizer moments and buffer.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let params = self.model.tensors();
        if let Some(adam) = &self.adam {
            adam.config.validate()?;
            if adam.m.len() != params.len() || adam.v.len() != params.len() {
                return Err(fmt_err("optimizer state does not match the model"));
            }
            for ((p, m), v) in params.iter().zip(&adam.m).zip(&adam.v) {
                if !p.same_shape(m) || !p.same_shape(v) {
                    return Err(fmt_err("optimizer moment shape does not match its parameter"));
                }
            }
        }
        if let Some(buf) = &self.buffer {
            if buf.entries().rank() != 2 || buf.dim() != self.model.arch().input_dim {
                return Err(fmt_err("replay buffer dimension does not match the model"));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u8(match self.model {
            Model::Gedi(_) => 0,
            Model::Swav(_) => 1,
        });
        w.arch(self.model.arch());
        let params = self.model.tensors();
        w.len(params.len());
        for t in params {
            w.tensor(t);
        }
        match &self.adam {
            Some(a) => {
                w.u8(1);
                for v in [a.config.lr, a.config.beta1, a.config.beta2, a.config.eps] {
                    w.f64(v);
                }
                w.0.extend_from_slice(&a.step.to_le_bytes());
                w.len(a.m.len());
                for t in a.m.iter().chain(&a.v) {
                    w.tensor(t);
                }
            }
            None => w.u8(0),
        }
        match &self.buffer {
            Some(b) => {
                w.u8(1);
                w.tensor(b.entries());
            }
            None => w.u8(0),
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let kind = r.u8()?;
        let arch = r.arch()?;
        arch.validate().map_err(|e| fmt_err(e.to_string()))?;
        let count = r.len()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        let model = build_model(kind, arch, tensors)?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let step = u64::from_le_bytes(r.array()?);
                let k = r.len()?;
                let mut m = Vec::new();
                for _ in 0..k {
                    m.push(r.tensor()?);
                }
                let mut v = Vec::new();
                for _ in 0..k {
                    v.push(r.tensor()?);
                }
                Some(AdamState { config, step, m, v })
            }
            f => return Err(fmt_err(format!("bad optimizer flag {f}"))),
        };
        let buffer = match r.u8()? {
            0 => None,
            1 => Some(ReplayBuffer::from_entries(r.tensor()?).map_err(|e| fmt_err(e.to_string()))?),
            f => return Err(fmt_err(format!("bad buffer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(fmt_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Self { model, adam, buffer };
        ckpt.validate().map_err(|e| match e {
            Error::Format(_) => e,
            other => fmt_err(other.to_string()),
        })?;
        Ok(ckpt)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| fmt_err(e.to_string()))?;
        ckpt.validate().map_err(|e| match e {
            Error::Format(_) => e,
            other => fmt_err(other.to_string()),
        })?;
        Ok(ckpt)
    }

    /// Writes JSON when the extension is `.json`, binary otherwise.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if is_json(path) {
            std::fs::write(path, self.to_json())
        } else {
            std::fs::write(path, self.to_bytes())
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        if is_json(path) {
            let text = std::str::from_utf8(&bytes).map_err(|e| fmt_err(e.to_string()))?;
            Self::from_json(text)
        } else {
            Self::from_bytes(&bytes)
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn take_mlp(dims: &[usize], activation: Activation, it: &mut std::vec::IntoIter<Tensor>) -> Result<Mlp> {
    let mut layers = Vec::new();
    for _ in 1..dims.len() {
        let (Some(weight), Some(bias)) = (it.next(), it.next()) else {
            return Err(fmt_err("too few parameter tensors"));
        };
        layers.push(Linear { weight, bias });
    }
    let mlp = Mlp { layers, activation };
    mlp.check_dims(dims).map_err(|e| fmt_err(e.to_string()))?;
    Ok(mlp)
}

fn build_model(kind: u8, arch: Architecture, tensors: Vec<Tensor>) -> Result<Model> {
    let mut it = tensors.into_iter();
    let model = match kind {
        0 => {
            let encoder = take_mlp(&arch.encoder_dims(), arch.activation, &mut it)?;
            let head = take_mlp(&arch.head_dims(), arch.activation, &mut it)?;
            Model::Gedi(ModelParams { arch, encoder, head })
        }
        1 => {
            let encoder = take_mlp(&arch.encoder_dims(), arch.activation, &mut it)?;
            let projector = take_mlp(&arch.projector_dims(), arch.activation, &mut it)?;
            let prototypes = it.next().ok_or_else(|| fmt_err("missing prototypes"))?;
            Model::Swav(SwavParams {
                arch,
                encoder,
                projector,
                prototypes,
            })
        }
        k => return Err(fmt_err(format!("unknown model kind {k}"))),
    };
    if it.next().is_some() {
        return Err(fmt_err("too many parameter tensors"));
    }
    model.validate().map_err(|e| fmt_err(e.to_string()))?;
    Ok(model)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn widths(&mut self, w: &[usize]) {
        self.len(w.len());
        for &d in w {
            self.len(d);
        }
    }

    fn arch(&mut self, a: &Architecture) {
        self.len(a.input_dim);
        self.widths(&a.encoder_hidden);
        self.len(a.latent_dim);
        self.widths(&a.head_hidden);
        self.len(a.clusters);
        match a.activation {
            Activation::Relu => self.u8(0),
            Activation::LeakyRelu { slope } => {
                self.u8(1);
                self.f64(slope);
            }
        }
        self.f64(a.tau);
    }

    fn tensor(&mut self, t: &Tensor) {
        self.len(t.rank());
        for &d in t.shape() {
            self.len(d);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.remaining() {
            return Err(fmt_err("unexpected end of input"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u32()?).map_err(|_| fmt_err("length overflow"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let k = self.len()?;
        if k.saturating_mul(4) > self.remaining() {
            return Err(fmt_err("layer count exceeds input"));
        }
        (0..k).map(|_| self.len()).collect()
    }

    fn arch(&mut self) -> Result<Architecture> {
        let input_dim = self.len()?;
        let encoder_hidden = self.widths()?;
        let latent_dim = self.len()?;
        let head_hidden = self.widths()?;
        let clusters = self.len()?;
        let activation = match self.u8()? {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu { slope: self.f64()? },
            a => return Err(fmt_err(format!("unknown activation {a}"))),
        };
        let tau = self.f64()?;
        Ok(Architecture {
            input_dim,
            encoder_hidden,
            latent_dim,
            head_hidden,
            clusters,
            activation,
            tau,
        })
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.len()?;
        if rank > MAX_RANK {
            return Err(fmt_err(format!("tensor rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = self.len()?;
            numel = numel.checked_mul(d).ok_or_else(|| fmt_err("tensor size overflow"))?;
            shape.push(d);
        }
        let bytes = numel.checked_mul(8).ok_or_else(|| fmt_err("tensor size overflow"))?;
        if bytes > self.remaining() {
            return Err(fmt_err("tensor data exceeds input"));
        }
        let data = self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Tensor::new(shape, data).map_err(|e| fmt_err(e.to_string()))
    }
}
