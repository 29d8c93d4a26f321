//! Binary checkpoints: magic, format version, a JSON header describing every
//! tensor, then the tensors as little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::Model;
use crate::config::BackboneConfig;
use crate::error::{KidError, Result};
use crate::optimizer::{AdamW, Moments};
use crate::params::ParamStore;
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"KIDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    /// Names whose `m` then `v` vectors follow the parameters, in this order.
    moments: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    epoch: usize,
    step: usize,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamW>,
    pub epoch: usize,
    pub step: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self.model.params();
        let tensors = params
            .iter()
            .map(|(_, name, m)| TensorEntry { name: name.to_string(), rows: m.rows(), cols: m.cols() })
            .collect();
        let optimizer = self.optimizer.as_ref().map(|o| OptimizerHeader {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            t: o.t,
            moments: o.moments.iter().map(|(n, m)| (n.clone(), m.m.len())).collect(),
        });
        let header = Header { backbone: self.model.config().clone(), epoch: self.epoch, step: self.step, tensors, optimizer };
        let json = serde_json::to_vec(&header)?;

        let mut out = Vec::with_capacity(16 + json.len() + params.scalar_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut push = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for (_, _, m) in params.iter() {
            push(m.as_slice());
        }
        if let Some(o) = &self.optimizer {
            for st in o.moments.values() {
                push(&st.m);
                push(&st.v);
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    /// Loads a checkpoint; with `expected` set, a differing backbone is rejected.
    pub fn load(path: &Path, expected: Option<&BackboneConfig>) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |msg: &str| KidError::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        let header: Header = serde_json::from_slice(body.get(..header_len).ok_or_else(|| bad("truncated header"))?)?;
        if let Some(exp) = expected {
            if exp != &header.backbone {
                return Err(bad(&format!("backbone {:?} does not match the configured {:?}", header.backbone, exp)));
            }
        }
        let mut data = body[header_len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = data.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(bad("tensor data truncated"))
            }
        };
        let mut store = ParamStore::new();
        for t in &header.tensors {
            store.insert(t.name.clone(), Mat::from_vec(t.rows, t.cols, take(t.rows * t.cols)?)?);
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                let mut opt = AdamW { beta1: o.beta1, beta2: o.beta2, eps: o.eps, weight_decay: o.weight_decay, t: o.t, moments: Default::default() };
                for (name, len) in o.moments {
                    let m = take(len)?;
                    let v = take(len)?;
                    opt.moments.insert(name, Moments { m, v });
                }
                Some(opt)
            }
            None => None,
        };
        if data.next().is_some() {
            return Err(bad("trailing data"));
        }
        let model = Model::from_params(header.backbone, store)?;
        Ok(Self { model, optimizer, epoch: header.epoch, step: header.step })
    }
}
