//! Binary checkpoints. Layout, all integers little-endian:
//!
//! ```text
//! magic   b"TCYC"
//! version u32 = 1
//! dtype   u8 (0 = f64, 1 = f32), 3 pad bytes
//! step    u64
//! config  u32 length + that many bytes of config-file text
//! params  u32 count, then per parameter:
//!           u16 name length + name bytes
//!           u16 ndim + ndim x u32 dims
//!           row-major scalar data
//! adam    u64 step count, then first- and second-moment buffers in
//!           parameter order (same sizes as the parameters)
//! ```
//!
//! Saving the result of a load reproduces the input byte for byte: the
//! embedded config text is the canonical serialization and every buffer
//! round-trips through exact bit patterns.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tcyc_core::encoder::Model;
use tcyc_core::scalar::{Dtype, Scalar};
use tcyc_core::tensor::Adam;
use tcyc_core::train::adam_for;
use tcyc_core::Tensor;

use crate::config::RunConfig;

const MAGIC: &[u8; 4] = b"TCYC";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<S: Scalar> {
    pub step: u64,
    pub config: RunConfig,
    pub model: Model<S>,
    pub adam: Adam<S>,
}

fn dtype_code(d: Dtype) -> u8 {
    match d {
        Dtype::F64 => 0,
        Dtype::F32 => 1,
    }
}

fn push_scalar<S: Scalar>(out: &mut Vec<u8>, v: S) {
    match S::DTYPE {
        Dtype::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
        // f32 -> f64 widening is exact, so the cast back is the identity.
        Dtype::F32 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
    }
}

pub fn save<S: Scalar>(
    path: &Path,
    step: u64,
    config: &RunConfig,
    model: &Model<S>,
    adam: &Adam<S>,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype_code(S::DTYPE));
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&step.to_le_bytes());
    let cfg_text = config.serialize();
    out.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg_text.as_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize || p.value.shape().len() > u16::MAX as usize {
            bail!("parameter {} does not fit the header", p.name);
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(p.value.shape().len() as u16).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            push_scalar(&mut out, v);
        }
    }
    out.extend_from_slice(&adam.step_count().to_le_bytes());
    let (m, v) = adam.moments();
    for buf in m.iter().chain(v.iter()) {
        for &x in buf {
            push_scalar(&mut out, x);
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Bounds-checked reader over the checkpoint bytes. Errors report what was
/// being read and the expected vs available byte counts.
struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            bail!(
                "{}: truncated reading {what}: need {} bytes at offset {}, file has {}",
                self.path.display(),
                n,
                self.pos,
                self.data.len()
            );
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn scalars<S: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<S>> {
        let width = match S::DTYPE {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        };
        let raw = self.take(n * width, what)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let v = match S::DTYPE {
                Dtype::F64 => f64::from_le_bytes(raw[i * 8..i * 8 + 8].try_into().unwrap()),
                Dtype::F32 => {
                    f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().unwrap()) as f64
                }
            };
            out.push(S::of_f64(v));
        }
        Ok(out)
    }
}

fn open<'a>(data: &'a [u8], path: &'a Path) -> Result<(Reader<'a>, Dtype)> {
    let mut r = Reader { data, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        bail!("{}: not a checkpoint file", path.display());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        bail!(
            "{}: unsupported checkpoint version {version}, this build reads {VERSION}",
            path.display()
        );
    }
    let dtype = match r.take(4, "dtype")?[0] {
        0 => Dtype::F64,
        1 => Dtype::F32,
        other => bail!("{}: unknown dtype code {other}", path.display()),
    };
    Ok((r, dtype))
}

/// The scalar type a checkpoint was written with, so callers can pick the
/// matching monomorphization before a full load.
pub fn peek_dtype(path: &Path) -> Result<Dtype> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (_, dtype) = open(&data, path)?;
    Ok(dtype)
}

pub fn load<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut r, dtype) = open(&data, path)?;
    if dtype != S::DTYPE {
        bail!(
            "{}: checkpoint dtype {:?} does not match the requested {:?}",
            path.display(),
            dtype,
            S::DTYPE
        );
    }
    let step = r.u64("step")?;
    let cfg_len = r.u32("config length")? as usize;
    let cfg_text = core::str::from_utf8(r.take(cfg_len, "config text")?)
        .with_context(|| format!("{}: config text is not UTF-8", path.display()))?;
    let mut config = RunConfig::default();
    config
        .apply_text(cfg_text)
        .with_context(|| format!("{}: embedded config", path.display()))?;
    config.finalize()?;

    let mut model = Model::<S>::new(config.model.clone(), config.model.seed)
        .with_context(|| format!("{}: rebuilding model", path.display()))?;
    let n_params = r.u32("parameter count")? as usize;
    if n_params != model.params().len() {
        bail!(
            "{}: {} parameters stored, config implies {}",
            path.display(),
            n_params,
            model.params().len()
        );
    }
    for i in 0..n_params {
        let name_len = r.u16("parameter name length")? as usize;
        let name = core::str::from_utf8(r.take(name_len, "parameter name")?)
            .with_context(|| format!("{}: parameter name", path.display()))?
            .to_string();
        let expect = model.params().get(i);
        if name != expect.name {
            bail!(
                "{}: parameter {i} is {name:?}, config implies {:?}",
                path.display(),
                expect.name
            );
        }
        let ndim = r.u16("parameter rank")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("parameter dim")? as usize);
        }
        if dims != expect.value.shape() {
            bail!(
                "{}: parameter {name} has shape {dims:?}, config implies {:?}",
                path.display(),
                expect.value.shape()
            );
        }
        let numel: usize = dims.iter().product();
        let vals = r.scalars::<S>(numel, &format!("parameter {name} data"))?;
        model.params_mut().get_mut(i).value = Tensor::from_vec(&dims, vals)?;
    }

    let adam_step = r.u64("adam step")?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.numel()).collect();
    let mut m = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        m.push(r.scalars::<S>(n, &format!("adam m[{i}]"))?);
    }
    let mut v = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        v.push(r.scalars::<S>(n, &format!("adam v[{i}]"))?);
    }
    if r.pos != data.len() {
        bail!(
            "{}: {} trailing bytes after the adam state",
            path.display(),
            data.len() - r.pos
        );
    }
    let mut adam = adam_for(&model);
    adam.restore(adam_step, m, v)?;
    Ok(Checkpoint {
        step,
        config,
        model,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "image_side=24\npatch_side=8\nchannels=8,8\nfeature_dim=8\n\
             localizer_channels=4\nk=2\nbatch_size=2\nsynth.object_side=8\n\
             synth.clip_len=3\nsynth.max_speed=2\nsynth.margin=8",
        )
        .unwrap();
        cfg.finalize().unwrap();
        cfg
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config();
        let model = Model::<f64>::new(cfg.model.clone(), 7).unwrap();
        let mut adam = adam_for(&model);
        // Take one optimizer step so the moments are nonzero.
        let grads: Vec<Tensor<f64>> = model
            .params()
            .iter()
            .map(|p| {
                Tensor::from_vec(
                    p.value.shape(),
                    (0..p.value.numel()).map(|i| (i as f64) * 1e-3 - 0.1).collect(),
                )
                .unwrap()
            })
            .collect();
        let mut model = model;
        adam.step(model.params_mut(), &grads).unwrap();

        let p1 = dir.path().join("a.tcyc");
        save(&p1, 3, &cfg, &model, &adam).unwrap();
        let ck = load::<f64>(&p1).unwrap();
        assert_eq!(ck.step, 3);
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.adam.step_count(), adam.step_count());
        let p2 = dir.path().join("b.tcyc");
        save(&p2, ck.step, &ck.config, &ck.model, &ck.adam).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn f32_checkpoints_round_trip_and_peek_reports_dtype() {
        let dir = tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.model.dtype = Dtype::F32;
        let model = Model::<f32>::new(cfg.model.clone(), 7).unwrap();
        let adam = adam_for(&model);
        let p = dir.path().join("c.tcyc");
        save(&p, 0, &cfg, &model, &adam).unwrap();
        assert_eq!(peek_dtype(&p).unwrap(), Dtype::F32);
        let err = load::<f64>(&p).unwrap_err().to_string();
        assert!(err.contains("dtype"), "{err}");
        let ck = load::<f32>(&p).unwrap();
        for (a, b) in ck.model.params().iter().zip(model.params().iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn truncation_reports_what_was_expected() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config();
        let model = Model::<f64>::new(cfg.model.clone(), 7).unwrap();
        let adam = adam_for(&model);
        let p = dir.path().join("t.tcyc");
        save(&p, 0, &cfg, &model, &adam).unwrap();
        let full = fs::read(&p).unwrap();
        fs::write(&p, &full[..full.len() - 5]).unwrap();
        let err = load::<f64>(&p).unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("need"), "{err}");
        // Cutting inside the parameter table names the parameter.
        fs::write(&p, &full[..700]).unwrap();
        let err = load::<f64>(&p).unwrap_err().to_string();
        assert!(err.contains("enc0"), "{err}");
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let dir = tempdir().unwrap();
        let cfg = tiny_config();
        let model = Model::<f64>::new(cfg.model.clone(), 7).unwrap();
        let adam = adam_for(&model);
        let p = dir.path().join("g.tcyc");
        save(&p, 0, &cfg, &model, &adam).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.push(0);
        fs::write(&p, bytes).unwrap();
        let err = load::<f64>(&p).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }
}
