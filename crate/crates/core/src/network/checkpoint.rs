//! Binary container shared by model checkpoints and dataset dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SIMN"            4 bytes magic
//! version           u32
//! config length     u64, followed by that many bytes of UTF-8 JSON
//! repeated until EOF:
//!   name length     u32, followed by UTF-8 name
//!   rank            u32
//!   dims            rank × u64
//!   data            product(dims) × f64 (IEEE-754)
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::params::Parameters;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"SIMN";
pub const CONTAINER_VERSION: u32 = 1;

/// Encodes a container into bytes.
pub fn encode_container(config_json: &str, tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let payload: usize = tensors
        .iter()
        .map(|(n, t)| 8 + n.len() + 8 * (t.rank() + t.len()))
        .sum();
    let mut out = Vec::with_capacity(16 + config_json.len() + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u64).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_container(path: &Path, config_json: &str, tensors: &[(&str, &Tensor)]) -> Result<()> {
    fs::write(path, encode_container(config_json, tensors)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                message: format!(
                    "needed {n} bytes for {what} at offset {}, only {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| self.malformed(format!("{what} {v} overflows usize")))
    }

    fn malformed(&self, message: String) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            message,
        }
    }

    fn utf8(&self, bytes: &[u8], what: &str) -> Result<String> {
        String::from_utf8(bytes.to_vec())
            .map_err(|_| self.malformed(format!("{what} is not UTF-8")))
    }
}

/// Decodes a container; `path` is used only for error messages.
pub fn decode_container(bytes: &[u8], path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().expect("4 bytes"),
        None => {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                message: format!("file is {} bytes, shorter than the magic", bytes.len()),
            })
        }
    };
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let json_len = r.len("config length")?;
    let json = r.take(json_len, "config")?;
    let json = r.utf8(json, "config")?;
    let mut tensors = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let name = r.take(name_len, "name")?;
        let name = r.utf8(name, "tensor name")?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.len("dimension")?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(8).map(|_| c))
            .ok_or_else(|| r.malformed(format!("tensor {name:?} dims {dims:?} overflow")))?;
        let raw = r.take(count * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::from_vec(&dims, data)
            .map_err(|e| r.malformed(format!("tensor {name:?}: {e}")))?;
        tensors.push((name, t));
    }
    Ok((json, tensors))
}

pub fn read_container(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}

/// Writes `config` as the JSON blob and every parameter value in entry order.
/// Momentum buffers are not stored.
pub fn save_checkpoint<C: Serialize>(config: &C, params: &Parameters, path: &Path) -> Result<()> {
    let json = serde_json::to_string(config)
        .map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))?;
    let tensors: Vec<(&str, &Tensor)> = params
        .entries()
        .iter()
        .map(|e| (e.name.as_str(), &e.value))
        .collect();
    write_container(path, &json, &tensors)
}

/// Inverse of [`save_checkpoint`]; returned parameters have zero momentum
/// and nothing frozen.
pub fn load_checkpoint<C: DeserializeOwned>(path: &Path) -> Result<(C, Parameters)> {
    let (json, tensors) = read_container(path)?;
    let config = serde_json::from_str(&json).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        message: format!("config JSON: {e}"),
    })?;
    let mut params = Parameters::new();
    for (name, t) in tensors {
        params.push(name, t, false).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, Network, NetworkConfig};
    use crate::numerics::Rng;

    fn model() -> (NetworkConfig, Parameters) {
        let config = NetworkConfig {
            name: "m".into(),
            input_shape: vec![2, 4, 4],
            layers: vec![
                LayerSpec::conv3x3(3),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: 0.3 },
                LayerSpec::Dense { out_dim: 5 },
            ],
            frozen: vec![],
        };
        let params = Network::new(config.clone())
            .unwrap()
            .init_params(&mut Rng::new(3))
            .unwrap();
        (config, params)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (config, params) = model();
        save_checkpoint(&config, &params, &path).unwrap();
        let (c2, p2): (NetworkConfig, Parameters) = load_checkpoint(&path).unwrap();
        assert_eq!(c2, config);
        for (a, b) in params.entries().iter().zip(p2.entries()) {
            assert_eq!(a.name, b.name);
            let bits_a: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&c2, &p2, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn forward_identical_after_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (config, params) = model();
        save_checkpoint(&config, &params, &path).unwrap();
        let (c2, p2): (NetworkConfig, Parameters) = load_checkpoint(&path).unwrap();
        let n1 = Network::new(config).unwrap();
        let n2 = Network::new(c2).unwrap();
        n2.check_params(&p2).unwrap();
        let mut rng = Rng::new(8);
        let x = Tensor::from_vec(&[2, 4, 4], (0..32).map(|_| rng.normal()).collect()).unwrap();
        assert_eq!(n1.infer(&params, &x).unwrap(), n2.infer(&p2, &x).unwrap());
    }

    #[test]
    fn distinct_errors_for_magic_version_truncation_and_io() {
        let dir = tempfile::tempdir().unwrap();
        let (config, params) = model();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&config, &params, &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let p = dir.path().join("magic");
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            load_checkpoint::<NetworkConfig>(&p),
            Err(Error::BadMagic { .. })
        ));

        let mut bad = bytes.clone();
        bad[4] = 9;
        let p = dir.path().join("version");
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            load_checkpoint::<NetworkConfig>(&p),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));

        let p = dir.path().join("trunc");
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint::<NetworkConfig>(&p),
            Err(Error::Truncated { .. })
        ));
        fs::write(&p, &bytes[..2]).unwrap();
        assert!(matches!(
            load_checkpoint::<NetworkConfig>(&p),
            Err(Error::Truncated { .. })
        ));

        assert!(matches!(
            load_checkpoint::<NetworkConfig>(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::vector(&[1.0]);
        let bytes = encode_container("{}", &[("w", &t)]);
        assert_eq!(&bytes[..4], b"SIMN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..18], b"{}");
        assert_eq!(&bytes[18..22], &1u32.to_le_bytes());
        assert_eq!(bytes[22], b'w');
        assert_eq!(&bytes[23..27], &1u32.to_le_bytes());
        assert_eq!(&bytes[27..35], &1u64.to_le_bytes());
        assert_eq!(&bytes[35..43], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 43);
    }
}
