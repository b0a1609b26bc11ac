//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes   "REDSCKPT"
//! version      u32       1
//! seed         u64
//! depth τ      u32
//! in_channels  u32
//! stride       u32
//! kernels      2τ x u32
//! channels     2τ x u32
//! has_theta    u8        0 or 1
//! n_arrays     u32
//! per array:   ndim u32, dims ndim x u64, values prod(dims) x f64
//! ```
//!
//! Arrays appear in declared order: encoder (weight, bias) for layers
//! 1..τ, decoder (weight, bias) for layers 1..τ, then Θc when present.

use std::fs;
use std::path::Path;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::model::{Architecture, LayerParams, ModelParams};

pub const MAGIC: &[u8; 8] = b"REDSCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: ModelParams,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        put(&mut out, self.arch.depth());
        put(&mut out, self.arch.input_channels);
        put(&mut out, self.arch.stride);
        for &k in &self.arch.kernel_sizes {
            put(&mut out, k);
        }
        for &c in &self.arch.channels {
            put(&mut out, c);
        }
        out.push(u8::from(self.params.theta.is_some()));
        let arrays = self.params.arrays();
        put(&mut out, arrays.len());
        for a in arrays {
            put(&mut out, a.ndim());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format { offset: 0, detail: "not a checkpoint (bad magic)".into() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format { offset: 8, detail: format!("unsupported checkpoint version {version}") });
        }
        let seed = r.u64()?;
        let tau = r.u32()? as usize;
        let input_channels = r.u32()? as usize;
        let stride = r.u32()? as usize;
        let kernel_sizes = (0..2 * tau).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let channels = (0..2 * tau).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let arch = Architecture { kernel_sizes, channels, input_channels, stride };
        arch.validate().map_err(|e| Error::Format { offset: r.pos as u64, detail: format!("bad architecture: {e}") })?;
        let has_theta = r.take(1)?[0] == 1;
        let count = r.u32()? as usize;
        let expected = 4 * tau + usize::from(has_theta);
        if count != expected {
            return Err(Error::Format { offset: r.pos as u64, detail: format!("{count} arrays, expected {expected}") });
        }
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.push(Array::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format { offset: r.pos as u64, detail: "trailing bytes".into() });
        }
        let mut it = arrays.into_iter();
        let mut layers = |k: usize| -> Vec<LayerParams> {
            (0..k)
                .map(|_| LayerParams { weight: it.next().expect("counted"), bias: it.next().expect("counted") })
                .collect()
        };
        let encoder = layers(tau);
        let decoder = layers(tau);
        let theta = if has_theta { it.next() } else { None };
        let params = ModelParams { encoder, decoder, theta };
        params.check(&arch, None).map_err(|e| Error::Format { offset: 0, detail: e.to_string() })?;
        Ok(Checkpoint { arch, params, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            offset: self.pos as u64,
            detail: format!("truncated checkpoint: {n} more bytes expected"),
        })?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_and_without_theta() {
        let arch = Architecture::default();
        let params = ModelParams::init(&arch, 3).unwrap();
        for p in [params.clone(), params.with_theta(7)] {
            let ck = Checkpoint { arch: arch.clone(), params: p, seed: 42 };
            assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
        }
    }

    #[test]
    fn header_bytes_are_fixed() {
        let arch = Architecture { kernel_sizes: vec![3, 3], channels: vec![2, 2], input_channels: 1, stride: 2 };
        let ck = Checkpoint { arch: arch.clone(), params: ModelParams::init(&arch, 0).unwrap(), seed: 5 };
        let b = ck.to_bytes();
        assert_eq!(&b[..8], b"REDSCKPT");
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..20], &[5, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[20..24], &[1, 0, 0, 0]);
        // weight(2,1,3,3) + bias(2) + weight(2,1,3,3) + bias(1)
        let arrays = (4 + 4 * 8 + 18 * 8) + (4 + 8 + 2 * 8) + (4 + 4 * 8 + 18 * 8) + (4 + 8 + 8);
        assert_eq!(b.len(), 8 + 4 + 8 + 12 + 8 + 8 + 1 + 4 + arrays);
    }

    #[test]
    fn corrupt_files_rejected() {
        let arch = Architecture::default();
        let ck = Checkpoint { arch: arch.clone(), params: ModelParams::init(&arch, 0).unwrap(), seed: 0 };
        let b = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
