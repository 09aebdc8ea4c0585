//! Ordered parameter collections and the `FETC` binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FETC" | version: u32 | entry_count: u32
//! per entry: layer_index: u32 | role: u8 (0 weight, 1 bias) | rank: u8
//!            | extents: rank × u32 | values: product(extents) × f64
//! ```

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FETC_MAGIC: &[u8; 4] = b"FETC";
pub const FETC_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FetcError {
    #[error("bad magic bytes {0:02x?}, expected \"FETC\"")]
    BadMagic([u8; 4]),
    #[error("unsupported FETC version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(
        "truncated FETC payload at byte {offset}: need {needed} more bytes, {available} available"
    )]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid parameter role byte {0}")]
    InvalidRole(u8),
    #[error("entries out of canonical order at entry {0}")]
    NonCanonical(usize),
    #[error("{0} trailing bytes after FETC payload")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRole {
    Weight = 0,
    Bias = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub layer_index: u32,
    pub role: ParamRole,
    pub tensor: Tensor,
}

/// Every trainable tensor of a model in canonical order: ascending layer
/// index, weight before bias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u32 {
        FETC_VERSION
    }

    /// Appends an entry; it must sort strictly after the current last entry.
    pub fn push(&mut self, layer_index: u32, role: ParamRole, tensor: Tensor) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if (last.layer_index, last.role) >= (layer_index, role) {
                return Err(Error::Structural(format!(
                    "entry ({layer_index}, {role:?}) does not follow ({}, {:?})",
                    last.layer_index, last.role
                )));
            }
        }
        self.entries.push(ParamEntry {
            layer_index,
            role,
            tensor,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, layer_index: u32, role: ParamRole) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|e| e.layer_index == layer_index && e.role == role)
            .map(|e| &e.tensor)
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Same indices, roles and shapes in the same order.
    pub fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Structural(format!(
                "parameter sets have {} and {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.layer_index != b.layer_index
                || a.role != b.role
                || a.tensor.shape() != b.tensor.shape()
            {
                return Err(Error::Structural(format!(
                    "entry ({}, {:?}, {:?}) vs ({}, {:?}, {:?})",
                    a.layer_index,
                    a.role,
                    a.tensor.shape(),
                    b.layer_index,
                    b.role,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// Same structure, every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    layer_index: e.layer_index,
                    role: e.role,
                    tensor: Tensor::zeros(e.tensor.shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries
            .iter()
            .flat_map(|e| e.tensor.data().iter().copied())
    }

    /// SHA-256 of the FETC encoding, hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(params_serialize(self)))
    }

    /// Restrict to entries whose layer index satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(u32) -> bool) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|e| keep(e.layer_index))
                .cloned()
                .collect(),
        }
    }
}

pub fn params_serialize(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.num_values() * 8 + params.len() * 16);
    out.extend_from_slice(FETC_MAGIC);
    out.extend_from_slice(&FETC_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for e in &params.entries {
        out.extend_from_slice(&e.layer_index.to_le_bytes());
        out.push(e.role as u8);
        out.push(e.tensor.rank() as u8);
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FetcError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FetcError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FetcError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, FetcError> {
        Ok(self.take(1)?[0])
    }
}

/// Parse one FETC payload from the front of `bytes`, returning the set and
/// the number of bytes consumed. Trailing bytes are left to the caller.
pub fn params_deserialize_prefix(bytes: &[u8]) -> Result<(ParameterSet, usize), FetcError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match r.take(4) {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(FetcError::BadMagic(m));
        }
    };
    if &magic != FETC_MAGIC {
        return Err(FetcError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != FETC_VERSION {
        return Err(FetcError::VersionMismatch {
            found: version,
            expected: FETC_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut set = ParameterSet::new();
    for i in 0..count {
        let layer_index = r.u32()?;
        let role = match r.u8()? {
            0 => ParamRole::Weight,
            1 => ParamRole::Bias,
            b => return Err(FetcError::InvalidRole(b)),
        };
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let nbytes = n.and_then(|n| n.checked_mul(8));
        let raw = match nbytes {
            Some(nb) => r.take(nb)?,
            None => {
                return Err(FetcError::Truncated {
                    offset: r.pos,
                    needed: usize::MAX,
                    available: bytes.len() - r.pos,
                })
            }
        };
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).expect("length checked");
        set.push(layer_index, role, tensor)
            .map_err(|_| FetcError::NonCanonical(i))?;
    }
    Ok((set, r.pos))
}

/// Parse a complete FETC payload; the whole buffer must be consumed.
pub fn params_deserialize(bytes: &[u8]) -> Result<ParameterSet, FetcError> {
    let (set, used) = params_deserialize_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FetcError::TrailingBytes(bytes.len() - used));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push(
            0,
            ParamRole::Weight,
            Tensor::new(
                vec![2, 3],
                vec![1.0, -2.5, 0.0, -0.0, f64::MIN_POSITIVE, 3.0],
            )
            .unwrap(),
        )
        .unwrap();
        p.push(0, ParamRole::Bias, Tensor::from_vec(vec![0.1, 0.2]))
            .unwrap();
        p.push(
            4,
            ParamRole::Weight,
            Tensor::new(vec![1, 2, 1], vec![7.0, 8.0]).unwrap(),
        )
        .unwrap();
        p
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = params_serialize(&sample());
        let back = params_deserialize(&bytes).unwrap();
        assert_eq!(params_serialize(&back), bytes);
        // -0.0 keeps its sign bit
        assert_eq!(
            back.entries()[0].tensor.data()[3].to_bits(),
            (-0.0f64).to_bits()
        );
    }

    #[test]
    fn empty_set_is_header_only() {
        let bytes = params_serialize(&ParameterSet::new());
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"FETC");
        assert!(params_deserialize(&bytes).unwrap().is_empty());
    }

    #[test]
    fn distinct_parse_errors() {
        let bytes = params_serialize(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            params_deserialize(&bad),
            Err(FetcError::BadMagic(_))
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            params_deserialize(&bad),
            Err(FetcError::VersionMismatch { found: 9, .. })
        ));
        assert!(matches!(
            params_deserialize(&bytes[..bytes.len() - 3]),
            Err(FetcError::Truncated { .. })
        ));
    }

    #[test]
    fn corrupted_length_field_is_truncation() {
        let bytes = params_serialize(&sample());
        // first extent of entry 0 sits at offset 12 + 4 + 1 + 1
        for corrupt in [200u32, u32::MAX] {
            let mut bad = bytes.clone();
            bad[18..22].copy_from_slice(&corrupt.to_le_bytes());
            assert!(matches!(
                params_deserialize(&bad),
                Err(FetcError::Truncated { .. })
            ));
        }
        // entry count inflated
        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(
            params_deserialize(&bad),
            Err(FetcError::Truncated { .. })
        ));
    }

    #[test]
    fn push_enforces_canonical_order() {
        let mut p = ParameterSet::new();
        p.push(1, ParamRole::Bias, Tensor::from_vec(vec![0.0]))
            .unwrap();
        assert!(p
            .push(1, ParamRole::Weight, Tensor::from_vec(vec![0.0]))
            .is_err());
        assert!(p
            .push(0, ParamRole::Weight, Tensor::from_vec(vec![0.0]))
            .is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = params_deserialize(&bytes);
        }

        #[test]
        fn truncating_any_valid_payload_errors(cut in 0usize..100) {
            let bytes = params_serialize(&sample());
            let cut = cut.min(bytes.len() - 1);
            prop_assert!(params_deserialize(&bytes[..cut]).is_err());
        }
    }
}
