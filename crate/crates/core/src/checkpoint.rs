//! Self-describing binary checkpoint container for models and agents.
//!
//! Layout: an 8-byte magic `MBRLCKPT`, a format version, the scalar width,
//! a payload kind tag, then the kind-specific payload with explicit
//! dimension metadata. All integers and floats are little-endian; float
//! payloads round-trip bit-exactly.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::{EnsembleModel, ModelConfig, Normalizer, PnnParams};
use crate::nn::{Activation, Linear, Mlp};
use crate::sac::{ActorNet, AgentParams, SacConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"MBRLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const KIND_MODEL: u8 = 1;
const KIND_AGENT: u8 = 2;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(scalar_width: u8, kind: u8) -> Self {
        let mut buf = Vec::with_capacity(4096);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.push(scalar_width);
        buf.push(kind);
        buf.extend_from_slice(&0u16.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn scalar<T: Scalar>(&mut self, v: T) {
        v.write_le(&mut self.buf);
    }

    fn scalars<T: Scalar>(&mut self, vs: &[T]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.scalar(v);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(data: &'a [u8], expect_kind: u8, expect_width: u8) -> Result<Self> {
        let mut r = Self { data, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let width = r.u8()?;
        if width != expect_width {
            return Err(Error::Checkpoint(format!(
                "scalar width mismatch: file has {width} bytes, caller expects {expect_width}"
            )));
        }
        let kind = r.u8()?;
        if kind != expect_kind {
            return Err(Error::Checkpoint(format!(
                "payload kind mismatch: file has {kind}, caller expects {expect_kind}"
            )));
        }
        let _reserved = r.take(2)?;
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn scalar<T: Scalar>(&mut self) -> Result<T> {
        Ok(T::read_le(self.take(T::WIDTH as usize)?))
    }

    fn scalars<T: Scalar>(&mut self) -> Result<Vec<T>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.scalar()?);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Checkpoint("trailing bytes after payload".into()));
        }
        Ok(())
    }
}

fn write_linear<T: Scalar>(w: &mut Writer, l: &Linear<T>) {
    w.u32(l.d_out() as u32);
    w.u32(l.d_in() as u32);
    w.scalars(l.w.as_slice().expect("standard layout"));
    w.scalars(l.b.as_slice().expect("standard layout"));
}

fn read_linear<T: Scalar>(r: &mut Reader) -> Result<Linear<T>> {
    let d_out = r.u32()? as usize;
    let d_in = r.u32()? as usize;
    let w = r.scalars()?;
    let b = r.scalars()?;
    if w.len() != d_out * d_in || b.len() != d_out {
        return Err(Error::Checkpoint("layer shape mismatch".into()));
    }
    Ok(Linear {
        w: Array2::from_shape_vec((d_out, d_in), w).expect("checked shape"),
        b: Array1::from_vec(b),
    })
}

fn write_mlp<T: Scalar>(w: &mut Writer, net: &Mlp<T>) {
    w.u8(net.activation.tag());
    w.u32(net.layers.len() as u32);
    for l in &net.layers {
        write_linear(w, l);
    }
}

fn read_mlp<T: Scalar>(r: &mut Reader) -> Result<Mlp<T>> {
    let activation = Activation::from_tag(r.u8()?)
        .ok_or_else(|| Error::Checkpoint("unknown activation tag".into()))?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        layers.push(read_linear(r)?);
    }
    if layers.is_empty() {
        return Err(Error::Checkpoint("empty network".into()));
    }
    Ok(Mlp { layers, activation })
}

pub fn save_model<T: Scalar>(path: &Path, model: &EnsembleModel<T>) -> Result<()> {
    let mut w = Writer::new(T::WIDTH, KIND_MODEL);
    let c = &model.config;
    w.u32(c.state_dim as u32);
    w.u32(c.action_dim as u32);
    w.u32(c.ensemble_size as u32);
    w.u32(c.hidden_layers as u32);
    w.u32(c.hidden_width as u32);
    w.u8(c.activation.tag());
    w.u8(c.predict_delta as u8);
    w.f64(c.logvar_min_init);
    w.f64(c.logvar_max_init);

    w.u8(model.normalizer.fitted as u8);
    w.scalars(&model.normalizer.input_mean);
    w.scalars(&model.normalizer.input_std);
    w.scalars(&model.normalizer.target_mean);
    w.scalars(&model.normalizer.target_std);

    for member in &model.members {
        write_mlp(&mut w, &member.net);
        w.scalars(member.logvar_min.as_slice().expect("standard layout"));
        w.scalars(member.logvar_max.as_slice().expect("standard layout"));
    }
    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<EnsembleModel<T>> {
    let data = std::fs::read(path)?;
    let mut r = Reader::open(&data, KIND_MODEL, T::WIDTH)?;
    let state_dim = r.u32()? as usize;
    let action_dim = r.u32()? as usize;
    let ensemble_size = r.u32()? as usize;
    let hidden_layers = r.u32()? as usize;
    let hidden_width = r.u32()? as usize;
    let activation = Activation::from_tag(r.u8()?)
        .ok_or_else(|| Error::Checkpoint("unknown activation tag".into()))?;
    let predict_delta = r.u8()? != 0;
    let logvar_min_init = r.f64()?;
    let logvar_max_init = r.f64()?;

    let fitted = r.u8()? != 0;
    let normalizer = Normalizer {
        input_mean: r.scalars()?,
        input_std: r.scalars()?,
        target_mean: r.scalars()?,
        target_std: r.scalars()?,
        fitted,
    };
    if normalizer.input_mean.len() != state_dim + action_dim
        || normalizer.target_mean.len() != state_dim
    {
        return Err(Error::Checkpoint("normalizer dimension mismatch".into()));
    }

    let mut members = Vec::with_capacity(ensemble_size);
    for _ in 0..ensemble_size {
        let net = read_mlp(&mut r)?;
        let logvar_min = Array1::from_vec(r.scalars()?);
        let logvar_max = Array1::from_vec(r.scalars()?);
        if logvar_min.len() != state_dim || logvar_max.len() != state_dim {
            return Err(Error::Checkpoint("logvar bound dimension mismatch".into()));
        }
        members.push(PnnParams {
            net,
            logvar_min,
            logvar_max,
        });
    }
    r.finish()?;

    let config = ModelConfig {
        state_dim,
        action_dim,
        ensemble_size,
        hidden_layers,
        hidden_width,
        activation,
        predict_delta,
        logvar_min_init,
        logvar_max_init,
    };
    Ok(EnsembleModel {
        members,
        normalizer,
        config,
    })
}

pub fn save_agent<T: Scalar>(path: &Path, agent: &AgentParams<T>) -> Result<()> {
    let mut w = Writer::new(T::WIDTH, KIND_AGENT);
    write_mlp(&mut w, &agent.actor.trunk);
    write_linear(&mut w, &agent.actor.mean_head);
    write_linear(&mut w, &agent.actor.logstd_head);
    write_mlp(&mut w, &agent.critic1);
    write_mlp(&mut w, &agent.critic2);
    write_mlp(&mut w, &agent.target1);
    write_mlp(&mut w, &agent.target2);
    w.scalar(agent.log_temperature);
    w.scalar(agent.target_entropy);
    w.u8(agent.auto_entropy_tuning as u8);
    std::fs::write(path, &w.buf)?;
    Ok(())
}

/// Restores agent parameters; optimizer moments start fresh with the
/// learning rates from `cfg`.
pub fn load_agent<T: Scalar>(path: &Path, cfg: &SacConfig) -> Result<AgentParams<T>> {
    let data = std::fs::read(path)?;
    let mut r = Reader::open(&data, KIND_AGENT, T::WIDTH)?;
    let trunk = read_mlp(&mut r)?;
    let mean_head = read_linear(&mut r)?;
    let logstd_head = read_linear(&mut r)?;
    let critic1 = read_mlp(&mut r)?;
    let critic2 = read_mlp(&mut r)?;
    let target1 = read_mlp(&mut r)?;
    let target2 = read_mlp(&mut r)?;
    let log_temperature = r.scalar()?;
    let target_entropy = r.scalar()?;
    let auto = r.u8()? != 0;
    r.finish()?;
    Ok(AgentParams::from_parts(
        ActorNet {
            trunk,
            mean_head,
            logstd_head,
        },
        critic1,
        critic2,
        target1,
        target2,
        log_temperature,
        target_entropy,
        auto,
        cfg,
    ))
}
