//! Weight archives, prune masks and their binary file formats.
//!
//! `TRIW` (weights):
//!
//! ```text
//! magic "TRIW" | version u16 = 1 | tensor_count u32
//! per tensor: name_len u16 | name (UTF-8) | ndim u8 | dims u32 × ndim | f32 × ∏dims
//! ```
//!
//! `TRIM` (masks) shares the header; each tensor payload is `⌈∏dims / 8⌉`
//! bytes of packed bits, row-major, most significant bit first, zero padded.
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::fs;
use std::io::{self, ErrorKind};
use std::path::Path;

use crate::{Error, Result};

pub const WEIGHT_MAGIC: [u8; 4] = *b"TRIW";
pub const MASK_MAGIC: [u8; 4] = *b"TRIM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let name = name.into();
        check_shape(&name, &shape)?;
        if values.len() != numel(&shape) {
            return Err(Error::contract(format!(
                "tensor {name}: {} values for shape {:?}",
                values.len(),
                shape
            )));
        }
        Ok(Tensor { name, shape, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(filters, channels, k)` for a 4-D tensor with square kernels.
    pub fn conv_dims(&self) -> Result<(usize, usize, usize)> {
        conv_dims(&self.name, &self.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightArchive {
    tensors: Vec<Tensor>,
}

impl WeightArchive {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::contract(format!("duplicate tensor name {}", t.name)));
            }
        }
        Ok(WeightArchive { tensors })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_weights(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn signature(&self) -> Vec<(&str, &[usize])> {
        self.tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice()))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, WEIGHT_MAGIC, self.tensors.len());
        for t in &self.tensors {
            write_tensor_header(&mut out, &t.name, &t.shape);
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let count = read_header(&mut r, WEIGHT_MAGIC)?;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let (name, shape) = read_tensor_header(&mut r)?;
            let n = numel(&shape);
            let raw = r.take(n * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor { name, shape, values });
        }
        r.finish()?;
        WeightArchive::new(tensors).map_err(|e| Error::format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// `true` = weight kept.
    pub bits: Vec<bool>,
}

impl MaskEntry {
    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PruneMask {
    entries: Vec<MaskEntry>,
}

impl PruneMask {
    pub fn new(entries: Vec<MaskEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            check_shape(&e.name, &e.shape)?;
            if e.bits.len() != numel(&e.shape) {
                return Err(Error::contract(format!("mask {} size mismatch", e.name)));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(Error::contract(format!("duplicate mask name {}", e.name)));
            }
        }
        Ok(PruneMask { entries })
    }

    /// Constant mask congruent with `archive`.
    pub fn filled(archive: &WeightArchive, keep: bool) -> Self {
        let entries = archive
            .tensors()
            .iter()
            .map(|t| MaskEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                bits: vec![keep; t.len()],
            })
            .collect();
        PruneMask { entries }
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [MaskEntry] {
        &mut self.entries
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.bits.len()).sum()
    }

    pub fn kept(&self) -> usize {
        self.entries.iter().map(MaskEntry::kept).sum()
    }

    pub fn pruned(&self) -> usize {
        self.total() - self.kept()
    }

    /// Fraction of weights removed; 0 for an empty mask.
    pub fn pruning_ratio(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.pruned() as f64 / total as f64
        }
    }

    /// Checked error unless `(name, shape)` lists agree exactly.
    pub fn check_congruent(&self, archive: &WeightArchive) -> Result<()> {
        if self.entries.len() != archive.tensors().len() {
            return Err(Error::contract(format!(
                "mask has {} entries, archive has {} tensors",
                self.entries.len(),
                archive.tensors().len()
            )));
        }
        for (e, t) in self.entries.iter().zip(archive.tensors()) {
            if e.name != t.name || e.shape != t.shape {
                return Err(Error::contract(format!(
                    "mask entry {} {:?} does not match tensor {} {:?}",
                    e.name, e.shape, t.name, t.shape
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, MASK_MAGIC, self.entries.len());
        for e in &self.entries {
            write_tensor_header(&mut out, &e.name, &e.shape);
            out.extend_from_slice(&pack_bits(&e.bits));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let count = read_header(&mut r, MASK_MAGIC)?;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let (name, shape) = read_tensor_header(&mut r)?;
            let n = numel(&shape);
            let packed = r.take(n.div_ceil(8))?;
            let bits = unpack_bits(packed, n)
                .ok_or_else(|| Error::format(format!("mask {name}: payload does not match header dims")))?;
            entries.push(MaskEntry { name, shape, bits });
        }
        r.finish()?;
        PruneMask::new(entries).map_err(|e| Error::format(e.to_string()))
    }
}

pub fn load_weight_archive(path: impl AsRef<Path>) -> Result<WeightArchive> {
    WeightArchive::from_bytes(&fs::read(path)?)
}

pub fn save_weight_archive(archive: &WeightArchive, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, archive.to_bytes())?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<PruneMask> {
    PruneMask::from_bytes(&fs::read(path)?)
}

pub fn save_mask(mask: &PruneMask, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, mask.to_bytes())?;
    Ok(())
}

/// MSB-first packing, padded with zero bits to a byte boundary.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        out[i / 8] |= 0x80 >> (i % 8);
    }
    out
}

/// Inverse of [`pack_bits`]; `None` when the byte count is wrong or a
/// padding bit is set.
pub fn unpack_bits(bytes: &[u8], n: usize) -> Option<Vec<bool>> {
    if bytes.len() != n.div_ceil(8) {
        return None;
    }
    let bits: Vec<bool> = (0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    let pad_ok = (n..bytes.len() * 8).all(|i| bytes[i / 8] & (0x80 >> (i % 8)) == 0);
    pad_ok.then_some(bits)
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn conv_dims(name: &str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [f, c, kh, kw] if kh == kw => Ok((f, c, kh)),
        _ => Err(Error::contract(format!(
            "tensor {name} is not a 4-D conv weight with square kernels: {shape:?}"
        ))),
    }
}

fn check_shape(name: &str, shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > u8::MAX as usize {
        return Err(Error::contract(format!("tensor {name}: bad rank {}", shape.len())));
    }
    if shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(Error::contract(format!("tensor {name}: bad dims {shape:?}")));
    }
    if name.len() > u16::MAX as usize {
        return Err(Error::contract("tensor name too long"));
    }
    Ok(())
}

fn write_header(out: &mut Vec<u8>, magic: [u8; 4], count: usize) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
}

fn write_tensor_header(out: &mut Vec<u8>, name: &str, shape: &[usize]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn read_header(r: &mut Reader<'_>, magic: [u8; 4]) -> Result<usize> {
    let got = r.take(4)?;
    if got != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    Ok(r.u32()? as usize)
}

fn read_tensor_header(r: &mut Reader<'_>) -> Result<(String, Vec<usize>)> {
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::format("tensor name is not UTF-8"))?
        .to_owned();
    let ndim = r.take(1)?[0] as usize;
    if ndim == 0 {
        return Err(Error::format(format!("tensor {name}: rank 0")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(Error::format(format!("tensor {name}: zero dimension")));
        }
        shape.push(d);
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= (1 << 40))
        .ok_or_else(|| Error::format(format!("tensor {name}: dims overflow")))?;
    Ok((name, shape))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(io::Error::new(ErrorKind::UnexpectedEof, "truncated payload").into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::format(format!(
                "{} trailing bytes after last tensor",
                self.bytes.len() - self.pos
            )))
        }
    }
}
