//! Named tensor collections and their on-disk form.
//!
//! A checkpoint is `MAGIC`, a little-endian `u64` header length, a JSON
//! header, then every tensor's values as little-endian `f32` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{Adam, AdamHyper};
use super::mlp::{Activation, Dense, Mlp, MlpSpec, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TACKPT1\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
    /// Free-form metadata: architectures, hyper-parameters, counters.
    pub meta: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    tensors: Vec<TensorHeader>,
    meta: serde_json::Map<String, serde_json::Value>,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor {name}: shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::config(format!("duplicate tensor {name}")));
        }
        self.tensors.push(Tensor { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Looks a tensor up and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::shape(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::shape(format!(
                "layer {name} has shape {:?}, expected {:?}",
                t.shape, shape
            )));
        }
        Ok(t)
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.meta.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::config(format!("checkpoint metadata lacks {key}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    /// SHA-256 over names, shapes and values; used to prove parameters are untouched.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            for s in &t.shape {
                h.update((*s as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::with_capacity(4 * self.tensors.iter().map(|t| t.data.len()).sum::<usize>());
        for t in &self.tensors {
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
            payload_sha256: hex(&Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing checkpoint magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(corrupt(format!("header claims {hlen} bytes, file has {}", body.len())));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {}", header.version)));
        }
        let payload = &body[hlen..];
        let expected: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        if payload.len() != 4 * expected {
            return Err(corrupt(format!(
                "payload has {} bytes, header describes {}",
                payload.len(),
                4 * expected
            )));
        }
        if hex(&Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt("payload checksum mismatch".into()));
        }
        let mut set = ParamSet {
            tensors: Vec::with_capacity(header.tensors.len()),
            meta: header.meta,
        };
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        for t in header.tensors {
            let n = t.shape.iter().product();
            let data: Vec<f32> = floats.by_ref().take(n).collect();
            set.insert(t.name, t.shape, data)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn to_f32<T: Scalar>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.f64() as f32).collect()
}

fn from_f32<T: Scalar>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::of(f64::from(x))).collect()
}

impl<T: Scalar> Mlp<T> {
    pub fn export(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            set.insert(format!("{prefix}.{i}.w"), vec![l.out_dim, l.in_dim], to_f32(&l.w))?;
            set.insert(format!("{prefix}.{i}.b"), vec![l.out_dim], to_f32(&l.b))?;
        }
        set.set_meta(&format!("{prefix}.spec"), self.spec())
    }

    /// Rebuilds a network, checking every layer against `spec`.
    pub fn import(prefix: &str, set: &ParamSet, spec: &MlpSpec) -> Result<Self> {
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let mut layers = Vec::with_capacity(dims.len());
        for (i, (ni, no)) in dims.into_iter().enumerate() {
            let w = set.expect(&format!("{prefix}.{i}.w"), &[no, ni])?;
            let b = set.expect(&format!("{prefix}.{i}.b"), &[no])?;
            let activation: Activation = if i == last {
                spec.output_activation
            } else {
                spec.hidden_activation
            };
            layers.push(Dense {
                in_dim: ni,
                out_dim: no,
                w: from_f32(&w.data),
                b: from_f32(&b.data),
                activation,
            });
        }
        if set.get(&format!("{prefix}.{}.w", layers.len())).is_some() {
            return Err(Error::shape(format!(
                "checkpoint {prefix} has more layers than the expected {}",
                layers.len()
            )));
        }
        Ok(Mlp { layers })
    }

    /// Rebuilds a network using the architecture recorded in the checkpoint.
    pub fn import_recorded(prefix: &str, set: &ParamSet) -> Result<Self> {
        let spec: MlpSpec = set.meta(&format!("{prefix}.spec"))?;
        Self::import(prefix, set, &spec)
    }
}

impl<T: Scalar> Adam<T> {
    pub fn export(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        set.insert(format!("{prefix}.adam_m"), vec![self.m.len()], to_f32(&self.m))?;
        set.insert(format!("{prefix}.adam_v"), vec![self.v.len()], to_f32(&self.v))?;
        set.set_meta(&format!("{prefix}.adam_step"), self.step)?;
        set.set_meta(&format!("{prefix}.adam_hyper"), self.hyper)
    }

    pub fn import(prefix: &str, set: &ParamSet, num_params: usize) -> Result<Self> {
        let m = set.expect(&format!("{prefix}.adam_m"), &[num_params])?;
        let v = set.expect(&format!("{prefix}.adam_v"), &[num_params])?;
        let hyper: AdamHyper = set.meta(&format!("{prefix}.adam_hyper"))?;
        Ok(Adam {
            hyper,
            m: from_f32(&m.data),
            v: from_f32(&v.data),
            step: set.meta(&format!("{prefix}.adam_step"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_set() -> (Mlp<f32>, Adam<f32>, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f32>::new(&MlpSpec::tanh(4, &[8, 8], 3), 1.0, &mut rng);
        let mut adam = Adam::new(net.num_params(), AdamHyper::default());
        adam.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-3);
        adam.step = 17;
        let mut set = ParamSet::new();
        net.export("policy", &mut set).unwrap();
        adam.export("policy", &mut set).unwrap();
        (net, adam, set)
    }

    #[test]
    fn bitwise_round_trip() {
        let (net, adam, set) = sample_set();
        let path = Path::new("mem.ckpt");
        let back = ParamSet::from_bytes(&set.to_bytes().unwrap(), path).unwrap();
        assert_eq!(back, set);
        let spec = net.spec();
        assert_eq!(Mlp::<f32>::import("policy", &back, &spec).unwrap(), net);
        assert_eq!(Adam::<f32>::import("policy", &back, net.num_params()).unwrap(), adam);
        assert_eq!(back.digest(), set.digest());
    }

    #[test]
    fn truncation_detected() {
        let (_, _, set) = sample_set();
        let bytes = set.to_bytes().unwrap();
        for cut in [0, 10, 40, bytes.len() - 1] {
            let err = ParamSet::from_bytes(&bytes[..cut], Path::new("x")).unwrap_err();
            assert!(matches!(err, Error::CorruptCheckpoint { .. }), "cut {cut}: {err}");
        }
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(
            ParamSet::from_bytes(&flipped, Path::new("x")),
            Err(Error::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn mismatched_architecture_names_layer() {
        let (_, _, set) = sample_set();
        let err = Mlp::<f32>::import("policy", &set, &MlpSpec::tanh(4, &[16, 8], 3)).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Shape(_)));
        assert!(msg.contains("policy.0.w"), "{msg}");
    }
}
