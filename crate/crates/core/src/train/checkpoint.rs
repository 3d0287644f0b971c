//! Versioned binary checkpoints: config echo, seed, and every parameter
//! tensor with its shape. Round-trips are bit-exact.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::EncoderParams;
use crate::model::ModelParams;
use crate::nn::{Dense, Mlp};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SKSEGCK1";

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 string".into()))
    }
}

/// Serialize params with a config echo and the training seed. The write is
/// atomic (temp file then rename).
pub fn save(path: &Path, params: &ModelParams, config_echo: &str, seed: u64) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u64(&mut buf, seed);
    put_str(&mut buf, config_echo);
    put_u32(&mut buf, params.n_labels as u32);
    let named = params.named_tensors();
    put_u32(&mut buf, named.len() as u32);
    for (name, t) in named {
        put_str(&mut buf, &name);
        put_u32(&mut buf, t.rows() as u32);
        put_u32(&mut buf, t.cols() as u32);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let io_err = |e: std::io::Error| Error::Io { path: path.display().to_string(), source: e };
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Read back (params, config echo, seed).
pub fn load(path: &Path) -> Result<(ModelParams, String, u64)> {
    let io_err = |e: std::io::Error| Error::Io { path: path.display().to_string(), source: e };
    let mut data = Vec::new();
    std::fs::File::open(path).map_err(io_err)?.read_to_end(&mut data).map_err(io_err)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let seed = r.u64()?;
    let echo = r.string()?;
    let n_labels = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(rows, cols, data)?));
    }
    let params = rebuild(tensors, n_labels)?;
    Ok((params, echo, seed))
}

fn rebuild(tensors: Vec<(String, Tensor)>, n_labels: usize) -> Result<ModelParams> {
    let mut iter = tensors.into_iter().peekable();
    let mut take_dense = |prefix: &str| -> Result<Dense> {
        let (wn, w) = iter
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing {}.w", prefix)))?;
        let (bn, b) = iter
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("missing {}.b", prefix)))?;
        if wn != format!("{}.w", prefix) || bn != format!("{}.b", prefix) {
            return Err(Error::Checkpoint(format!("unexpected tensors {} / {}", wn, bn)));
        }
        Ok(Dense { w, b })
    };
    let mut enc_layers = Vec::with_capacity(4);
    for i in 0..4 {
        enc_layers.push(take_dense(&format!("encoder.layer{}", i))?);
    }
    let proj = take_dense("encoder.proj")?;
    let mut mlp_of = |name: &str, count: usize| -> Result<Mlp> {
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            layers.push(take_dense(&format!("{}.layer{}", name, i))?);
        }
        Ok(Mlp { layers })
    };
    let omega = mlp_of("omega", 3)?;
    let phi = mlp_of("phi", 3)?;
    let tau = mlp_of("tau", 4)?;
    Ok(ModelParams {
        encoder: EncoderParams { layers: enc_layers, proj },
        omega,
        phi,
        tau,
        n_labels,
    })
}
