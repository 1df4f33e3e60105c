//! Checkpoint layout: the magic line `SCULPT-CKPT 1\n`, a little-endian u64
//! header length, the JSON header, then every parameter vector as raw
//! little-endian float64 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::io::atomic_write;

const MAGIC: &[u8] = b"SCULPT-CKPT 1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetHeader {
    name: String,
    sizes: Vec<usize>,
    activation: Activation,
    num_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    step: u64,
    nets: Vec<NetHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Named networks plus free-form metadata, saved and loaded as one file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub nets: Vec<(String, Mlp)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(step: u64, meta: serde_json::Value) -> Self {
        Self { step, nets: Vec::new(), meta }
    }

    pub fn with_net(mut self, name: &str, net: Mlp) -> Self {
        self.nets.push((name.to_string(), net));
        self
    }

    pub fn net(&self, name: &str) -> Result<&Mlp> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("no network named `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            step: self.step,
            nets: self
                .nets
                .iter()
                .map(|(name, m)| NetHeader {
                    name: name.clone(),
                    sizes: m.sizes().to_vec(),
                    activation: m.activation(),
                    num_params: m.num_params(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &self.nets {
            for p in m.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing magic line"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let rest = &rest[8..];
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&rest[..len]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut blob = &rest[len..];
        let mut nets = Vec::new();
        for h in header.nets {
            if blob.len() < 8 * h.num_params {
                return Err(bad("truncated parameter blob"));
            }
            let params: Vec<f64> = blob[..8 * h.num_params]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blob = &blob[8 * h.num_params..];
            let net = Mlp::from_params(h.sizes, h.activation, params)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            nets.push((h.name, net));
        }
        if !blob.is_empty() {
            return Err(bad("trailing bytes after parameters"));
        }
        Ok(Self { step: header.step, nets, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Mlp::new(vec![3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let b = Mlp::new(vec![2, 2], Activation::Relu, &mut rng).unwrap();
        let ck = Checkpoint::new(17, serde_json::json!({"m": 2}))
            .with_net("live", a)
            .with_net("target", b);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
