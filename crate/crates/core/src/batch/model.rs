use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::mlp::{round_f32, Mlp};
use super::objective::EncoderPair;
use super::train::TrainConfig;

pub const MODEL_MAGIC: &[u8; 8] = b"PIDLBATC";
pub const MODEL_VERSION: u32 = 1;

/// Trained encoder pair plus everything needed to evaluate it again.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    pub encoders: EncoderPair,
    pub config: TrainConfig,
    /// Pooled label distribution frozen at training time.
    pub label_marginal: Vec<f64>,
    /// Mean training loss per epoch, in bits.
    pub loss_trace: Vec<f64>,
    /// Hex SHA-256 of the training records.
    pub dataset_digest: String,
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(format!("model file truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str, expect: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n != expect {
            return Err(Error::format(format!("{what}: {n} values, expected {expect}")));
        }
        Ok(n)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn digest_bytes(hex_digest: &str) -> Result<[u8; 32]> {
    let v = hex::decode(hex_digest).map_err(|e| Error::format(format!("bad digest: {e}")))?;
    v.try_into().map_err(|_| Error::format("digest is not 32 bytes"))
}

impl CouplingModel {
    /// Little-endian layout: magic, version, widths, seed, config and dataset
    /// digests, the JSON config, then `f32` encoder weights and `f64` marginal
    /// and loss trace.
    pub fn to_bytes(&self) -> Vec<u8> {
        let e = &self.encoders;
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        for v in [e.vision.input, e.text.input, e.k, e.vision.hidden, e.text.hidden, e.embed_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&config));
        out.extend_from_slice(&digest_bytes(&self.dataset_digest).unwrap_or([0; 32]));
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        for m in [&e.vision, &e.text] {
            out.extend_from_slice(&(m.params.len() as u64).to_le_bytes());
            for v in &m.params {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        for vals in [&self.label_marginal, &self.loss_trace] {
            out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, at: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(Error::format("not a coupling model file"));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::format(format!("model version {version} is not supported")));
        }
        let mut w = [0usize; 6];
        for v in &mut w {
            *v = r.u32()? as usize;
        }
        let [dv, dt, k, hv, ht, embed] = w;
        let seed = r.u64()?;
        let config_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let dataset_digest = hex::encode(r.take(32)?);
        let clen = r.u32()? as usize;
        let config_raw = r.take(clen)?;
        if Sha256::digest(config_raw).as_slice() != config_digest {
            return Err(Error::format("config digest mismatch"));
        }
        let config: TrainConfig =
            serde_json::from_slice(config_raw).map_err(|e| Error::format(format!("model config: {e}")))?;
        if config.seed != seed || config.embed_dim != embed || config.hidden != hv || config.hidden != ht {
            return Err(Error::format("model header disagrees with its config"));
        }
        let mut nets = Vec::with_capacity(2);
        for (name, input) in [("vision", dv), ("text", dt)] {
            let mut m = Mlp::zeros(input, config.hidden, k * embed);
            let n = r.len(name, m.params.len())?;
            m.params = r.f32s(n)?;
            if m.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(format!("{name} encoder has non-finite weights")));
            }
            nets.push(m);
        }
        let text = nets.pop().unwrap();
        let vision = nets.pop().unwrap();
        let n = r.len("label marginal", k)?;
        let label_marginal = r.f64s(n)?;
        let n = r.u64()? as usize;
        let loss_trace = r.f64s(n)?;
        if r.at != buf.len() {
            return Err(Error::format(format!("{} trailing bytes in model file", buf.len() - r.at)));
        }
        Ok(CouplingModel {
            encoders: EncoderPair { vision, text, embed_dim: embed, k },
            config,
            label_marginal,
            loss_trace,
            dataset_digest,
        })
    }

    /// Hex SHA-256 of [`CouplingModel::to_bytes`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// True when every weight survives the `f32` encoding unchanged.
    pub fn is_f32_exact(&self) -> bool {
        let e = &self.encoders;
        e.vision.params.iter().chain(&e.text.params).all(|v| round_f32(*v) == *v)
    }
}
