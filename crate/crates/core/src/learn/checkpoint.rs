//! Binary checkpoint format.
//!
//! ```text
//! magic            8 bytes  "WLEGCKPT"
//! version          u32
//! morphology       u8       (1 flores, 2 baseline)
//! seed             u64
//! iteration        u64
//! tensor count     u32
//! per tensor       u16 name length, name (utf-8), u32 rows, u32 cols
//! parameters       f32, every tensor row-major in table order
//! config length    u32
//! config           utf-8 JSON run echo
//! ```
//! All integers and floats are little-endian. Weight tensors are stored
//! `inputs x outputs`.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::morphology::{MorphologyParams, MorphologyTag};

use super::mlp::{Layer, Mlp};
use super::model::ActorCritic;
use super::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WLEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Configuration echo stored with every artifact; enough to rerun it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub build: String,
    pub morphology: MorphologyTag,
    pub morphology_params: MorphologyParams,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub morphology: MorphologyTag,
    pub seed: u64,
    pub iteration: u64,
    pub tensors: Vec<Tensor>,
    pub config_json: String,
}

fn push_mlp(out: &mut Vec<Tensor>, prefix: &str, net: &Mlp<f32>) {
    for (i, l) in net.layers.iter().enumerate() {
        out.push(Tensor {
            name: format!("{prefix}.{i}.weight"),
            rows: l.inputs(),
            cols: l.outputs(),
            data: l.w.iter().copied().collect(),
        });
        out.push(Tensor { name: format!("{prefix}.{i}.bias"), rows: 1, cols: l.outputs(), data: l.b.to_vec() });
    }
}

fn vector(name: &str, data: Vec<f32>) -> Tensor {
    Tensor { name: name.into(), rows: 1, cols: data.len(), data }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
                Error::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &ActorCritic<f32>, echo: &RunEcho, iteration: u64) -> Self {
        let mut tensors = Vec::new();
        push_mlp(&mut tensors, "encoder", &model.encoder);
        push_mlp(&mut tensors, "actor", &model.actor);
        tensors.push(vector("log_std", model.log_std.to_vec()));
        push_mlp(&mut tensors, "critic", &model.critic);
        push_mlp(&mut tensors, "target", &model.target);
        tensors.push(vector("obs_scale", model.obs_scale.to_vec()));
        tensors.push(vector("partial_scale", model.partial_scale.to_vec()));
        tensors.push(vector("velocity_scale", vec![model.velocity_scale]));
        Self {
            morphology: echo.morphology,
            seed: echo.train.seed,
            iteration,
            tensors,
            config_json: serde_json::to_string(echo).expect("run echo serializes"),
        }
    }

    pub fn echo(&self) -> Result<RunEcho> {
        serde_json::from_str(&self.config_json).map_err(|e| Error::CheckpointFormat(format!("config echo: {e}")))
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing tensor {name}")))
    }

    fn fill_mlp(&self, prefix: &str, net: &mut Mlp<f32>) -> Result<()> {
        for (i, l) in net.layers.iter_mut().enumerate() {
            let w = self.tensor(&format!("{prefix}.{i}.weight"))?;
            let b = self.tensor(&format!("{prefix}.{i}.bias"))?;
            if (w.rows, w.cols) != (l.inputs(), l.outputs()) || b.cols != l.outputs() {
                return Err(Error::CheckpointFormat(format!(
                    "{prefix}.{i} is {}x{}, model expects {}x{}",
                    w.rows,
                    w.cols,
                    l.inputs(),
                    l.outputs()
                )));
            }
            *l = Layer {
                w: Array2::from_shape_vec((w.rows, w.cols), w.data.clone()).expect("checked shape"),
                b: Array1::from(b.data.clone()),
            };
        }
        if self.tensors.iter().any(|t| t.name == format!("{prefix}.{}.weight", net.layers.len())) {
            return Err(Error::CheckpointFormat(format!("{prefix} has more layers than the configured model")));
        }
        Ok(())
    }

    /// Rebuilds the model described by the config echo.
    pub fn to_model(&self) -> Result<ActorCritic<f32>> {
        let echo = self.echo()?;
        let mut rng = crate::seed::rng_for(0, "checkpoint", 0);
        let mut m = ActorCritic::<f32>::new(echo.train.model.clone(), 1.0, &mut rng)?;
        self.fill_mlp("encoder", &mut m.encoder)?;
        self.fill_mlp("actor", &mut m.actor)?;
        self.fill_mlp("critic", &mut m.critic)?;
        self.fill_mlp("target", &mut m.target)?;
        let vec_into = |name: &str, dst: &mut Array1<f32>| -> Result<()> {
            let t = self.tensor(name)?;
            if t.data.len() != dst.len() {
                return Err(Error::CheckpointFormat(format!("{name} has {} entries", t.data.len())));
            }
            *dst = Array1::from(t.data.clone());
            Ok(())
        };
        vec_into("log_std", &mut m.log_std)?;
        vec_into("obs_scale", &mut m.obs_scale)?;
        vec_into("partial_scale", &mut m.partial_scale)?;
        let vs = self.tensor("velocity_scale")?;
        m.velocity_scale = *vs.data.first().ok_or_else(|| Error::CheckpointFormat("empty velocity_scale".into()))?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.push(self.morphology.code());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&self.iteration.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            b.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            b.extend_from_slice(t.name.as_bytes());
            b.extend_from_slice(&(t.rows as u32).to_le_bytes());
            b.extend_from_slice(&(t.cols as u32).to_le_bytes());
        }
        for t in &self.tensors {
            for v in &t.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config_json.as_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < CHECKPOINT_MAGIC.len() {
            return Err(Error::CorruptCheckpoint("file shorter than the header".into()));
        }
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::CheckpointFormat("bad magic bytes; not a checkpoint".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
        }
        let code = r.u8("morphology")?;
        let morphology = MorphologyTag::from_code(code)
            .ok_or_else(|| Error::CheckpointFormat(format!("unknown morphology code {code}")))?;
        let seed = r.u64("seed")?;
        let iteration = r.u64("iteration")?;
        let count = r.u32("tensor count")? as usize;
        let mut shapes = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u16("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::CheckpointFormat("tensor name is not utf-8".into()))?
                .to_owned();
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            shapes.push((name, rows, cols));
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, rows, cols) in shapes {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} shape overflows")))?;
            let raw = r.take(n.saturating_mul(4), "parameters")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(Tensor { name, rows, cols, data });
        }
        let len = r.u32("config length")? as usize;
        let config_json = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::CheckpointFormat("config echo is not utf-8".into()))?
            .to_owned();
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { morphology, seed, iteration, tensors, config_json })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
