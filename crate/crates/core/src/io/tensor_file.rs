//! CRVT binary tensor files.
//!
//! ```text
//! "CRVT" | u32 version = 1
//! record*   : u8 dtype (0 = f32, 1 = f64) | u8 rank | u64 dims[rank] | payload
//! section*  : "CRVN" | u32 count | { u32 len | utf8 }*count     (name table)
//!           | "CRVM" | u32 len | utf8                           (metadata text)
//! ```
//!
//! All integers and payloads are little-endian. A single-tensor file is the
//! header followed by exactly one record. Records always precede sections;
//! each section kind appears at most once.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 4] = b"CRVT";
pub const VERSION: u32 = 1;
const NAMES_TAG: &[u8; 4] = b"CRVN";
const META_TAG: &[u8; 4] = b"CRVM";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload: need {expected} bytes, {available} available")]
    TruncatedPayload { expected: usize, available: usize },
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("tensor size overflows")]
    SizeOverflow,
    #[error("name table has {names} entries for {tensors} tensors")]
    NameCountMismatch { names: usize, tensors: usize },
    #[error("name collision: {0:?}")]
    DuplicateName(String),
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("section {0} repeated")]
    DuplicateSection(&'static str),
    #[error("archive mixes named and unnamed tensors")]
    PartialNames,
    #[error("expected a single tensor, found {0}")]
    NotSingle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: Option<String>,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to f64; f32 entries round-trip exactly.
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        StoredTensor {
            name: Some(name.into()),
            dtype: DType::F64,
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&self.shape, self.data.clone()).expect("archive shapes are validated on read")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub tensors: Vec<StoredTensor>,
    pub metadata: Option<String>,
}

impl Archive {
    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors
            .iter()
            .find(|t| t.name.as_deref() == Some(name))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let named = self.tensors.iter().filter(|t| t.name.is_some()).count();
        if named != 0 && named != self.tensors.len() {
            return Err(FormatError::PartialNames);
        }
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if let Some(n) = &t.name {
                if !seen.insert(n.as_str()) {
                    return Err(FormatError::DuplicateName(n.clone()));
                }
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for t in &self.tensors {
            write_record(&mut out, t)?;
        }
        if named > 0 {
            out.extend_from_slice(NAMES_TAG);
            out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
            for t in &self.tensors {
                let n = t.name.as_deref().unwrap_or_default().as_bytes();
                out.extend_from_slice(&(n.len() as u32).to_le_bytes());
                out.extend_from_slice(n);
            }
        }
        if let Some(meta) = &self.metadata {
            out.extend_from_slice(META_TAG);
            out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
            out.extend_from_slice(meta.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Archive, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4).map_err(|_| FormatError::TruncatedHeader)?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u32().map_err(|_| FormatError::TruncatedHeader)?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }

        let mut archive = Archive::default();
        while r.remaining() > 0 && !r.at_section() {
            archive.tensors.push(read_record(&mut r)?);
        }

        let mut names: Option<Vec<String>> = None;
        while r.remaining() > 0 {
            let tag = r.take(4).map_err(|_| FormatError::TruncatedHeader)?;
            if tag == NAMES_TAG {
                if names.is_some() {
                    return Err(FormatError::DuplicateSection("name table"));
                }
                let count = r.u32().map_err(|_| FormatError::TruncatedHeader)? as usize;
                if count != archive.tensors.len() {
                    return Err(FormatError::NameCountMismatch {
                        names: count,
                        tensors: archive.tensors.len(),
                    });
                }
                let mut list = Vec::with_capacity(count);
                let mut seen = HashSet::new();
                for _ in 0..count {
                    let len = r.u32().map_err(|_| FormatError::TruncatedHeader)? as usize;
                    let raw = r.payload(len)?;
                    let name = std::str::from_utf8(raw)
                        .map_err(|_| FormatError::InvalidUtf8("name table"))?
                        .to_string();
                    if !seen.insert(name.clone()) {
                        return Err(FormatError::DuplicateName(name));
                    }
                    list.push(name);
                }
                names = Some(list);
            } else if tag == META_TAG {
                if archive.metadata.is_some() {
                    return Err(FormatError::DuplicateSection("metadata"));
                }
                let len = r.u32().map_err(|_| FormatError::TruncatedHeader)? as usize;
                let raw = r.payload(len)?;
                let text =
                    std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8("metadata"))?;
                archive.metadata = Some(text.to_string());
            } else {
                return Err(FormatError::UnknownDtype(tag[0]));
            }
        }
        if let Some(list) = names {
            for (t, n) in archive.tensors.iter_mut().zip(list) {
                t.name = Some(n);
            }
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Archive> {
        let bytes = std::fs::read(path)?;
        Ok(Archive::from_bytes(&bytes)?)
    }
}

/// Writes one unnamed tensor as a single-record file.
pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor, dtype: DType) -> crate::Result<()> {
    let archive = Archive {
        tensors: vec![StoredTensor {
            name: None,
            dtype,
            shape: t.shape().to_vec(),
            data: t.to_vec(),
        }],
        metadata: None,
    };
    archive.save(path)
}

/// Reads a file that must contain exactly one tensor.
pub fn read_tensor(path: impl AsRef<Path>) -> crate::Result<Tensor> {
    let archive = Archive::load(path)?;
    if archive.tensors.len() != 1 {
        return Err(FormatError::NotSingle(archive.tensors.len()).into());
    }
    Ok(archive.tensors[0].to_tensor())
}

fn write_record(out: &mut Vec<u8>, t: &StoredTensor) -> Result<(), FormatError> {
    if t.shape.len() > u8::MAX as usize {
        return Err(FormatError::SizeOverflow);
    }
    let count = t
        .shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or(FormatError::SizeOverflow)?;
    if count != t.data.len() {
        return Err(FormatError::TruncatedPayload {
            expected: count,
            available: t.data.len(),
        });
    }
    out.push(t.dtype.tag());
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.dtype {
        DType::F32 => t
            .data
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t
            .data
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(())
}

fn read_record(r: &mut Reader<'_>) -> Result<StoredTensor, FormatError> {
    let tag = r.u8().map_err(|_| FormatError::TruncatedHeader)?;
    let dtype = match tag {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(FormatError::UnknownDtype(other)),
    };
    let rank = r.u8().map_err(|_| FormatError::TruncatedHeader)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = r.u64().map_err(|_| FormatError::TruncatedHeader)?;
        shape.push(usize::try_from(d).map_err(|_| FormatError::SizeOverflow)?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or(FormatError::SizeOverflow)?;
    let nbytes = count
        .checked_mul(dtype.size())
        .ok_or(FormatError::SizeOverflow)?;
    let raw = r.payload(nbytes)?;
    let data = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(StoredTensor {
        name: None,
        dtype,
        shape,
        data,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn at_section(&self) -> bool {
        let rest = &self.bytes[self.pos..];
        rest.starts_with(NAMES_TAG) || rest.starts_with(META_TAG)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ()> {
        if self.remaining() < n {
            return Err(());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn payload(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.remaining();
        self.take(n).map_err(|_| FormatError::TruncatedPayload {
            expected: n,
            available,
        })
    }

    fn u8(&mut self) -> Result<u8, ()> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ()> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ()> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity3() -> StoredTensor {
        StoredTensor {
            name: None,
            dtype: DType::F64,
            shape: vec![3, 3],
            data: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    #[test]
    fn empty_archive_is_valid() {
        let bytes = Archive::default().to_bytes().unwrap();
        assert_eq!(bytes.len(), 8);
        assert_eq!(Archive::from_bytes(&bytes).unwrap().tensors.len(), 0);
    }

    #[test]
    fn single_tensor_layout_is_exact() {
        let archive = Archive {
            tensors: vec![identity3()],
            metadata: None,
        };
        let bytes = archive.to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"CRVT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 2);
        assert_eq!(u64::from_le_bytes(bytes[10..18].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 8 + 2 + 16 + 72);
        assert_eq!(Archive::from_bytes(&bytes).unwrap(), archive);
    }

    #[test]
    fn corrupt_inputs_raise_named_errors() {
        let archive = Archive {
            tensors: vec![identity3()],
            metadata: None,
        };
        let bytes = archive.to_bytes().unwrap();

        let mut flipped = bytes.clone();
        flipped[0] ^= 0xff;
        assert_eq!(Archive::from_bytes(&flipped), Err(FormatError::BadMagic));

        let mut version = bytes.clone();
        version[4] = 2;
        assert_eq!(
            Archive::from_bytes(&version),
            Err(FormatError::UnsupportedVersion(2))
        );

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(
            Archive::from_bytes(truncated),
            Err(FormatError::TruncatedPayload { .. })
        ));
        assert_eq!(
            FormatError::TruncatedPayload {
                expected: 72,
                available: 67
            }
            .to_string(),
            "truncated payload: need 72 bytes, 67 available"
        );

        assert_eq!(
            Archive::from_bytes(&bytes[..12]),
            Err(FormatError::TruncatedHeader)
        );

        let mut dtype = bytes.clone();
        dtype[8] = 7;
        assert_eq!(
            Archive::from_bytes(&dtype),
            Err(FormatError::UnknownDtype(7))
        );
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut a = identity3();
        a.name = Some("w".into());
        let archive = Archive {
            tensors: vec![a.clone(), a],
            metadata: None,
        };
        assert_eq!(
            archive.to_bytes(),
            Err(FormatError::DuplicateName("w".into()))
        );
    }

    #[test]
    fn huge_dims_do_not_allocate() {
        let mut bytes = Vec::from(&b"CRVT"[..]);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2]);
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert_eq!(Archive::from_bytes(&bytes), Err(FormatError::SizeOverflow));
    }

    fn stored() -> impl Strategy<Value = StoredTensor> {
        (prop::collection::vec(0usize..4, 0..4), any::<bool>()).prop_flat_map(|(shape, f32)| {
            let n: usize = shape.iter().product();
            prop::collection::vec(any::<f32>(), n).prop_map(move |vals| StoredTensor {
                name: None,
                dtype: if f32 { DType::F32 } else { DType::F64 },
                shape: shape.clone(),
                data: vals.iter().map(|&v| v as f64).collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn write_then_read_is_bit_identical(
            tensors in prop::collection::vec(stored(), 0..4),
            named in any::<bool>(),
            meta in prop::option::of("[ -~]{0,40}"),
        ) {
            let mut tensors = tensors;
            if named {
                for (i, t) in tensors.iter_mut().enumerate() {
                    t.name = Some(format!("group/tensor{}", i));
                }
            }
            let archive = Archive { tensors, metadata: meta };
            let bytes = archive.to_bytes().unwrap();
            let back = Archive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            prop_assert_eq!(back.tensors.len(), archive.tensors.len());
            for (a, b) in archive.tensors.iter().zip(&back.tensors) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(a.dtype, b.dtype);
                let abits: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = Archive::from_bytes(&bytes);
            let mut framed = Vec::from(&b"CRVT\x01\x00\x00\x00"[..]);
            framed.extend_from_slice(&bytes);
            let _ = Archive::from_bytes(&framed);
        }
    }
}
