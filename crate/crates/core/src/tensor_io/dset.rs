use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{check_finite_f32, ByteCursor, FormatError, FORMAT_VERSION};
use crate::descriptor::Descriptor;

const MAGIC: &[u8; 4] = b"DSET";

/// Named matrix of `n` descriptors of equal dimension, with the ordered list
/// of processing steps that produced it (`rmac-L3`, `l2`, `whiten-512`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    names: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    provenance: Vec<String>,
    index: HashMap<String, usize>,
}

impl DescriptorSet {
    pub fn new(
        names: Vec<String>,
        dim: usize,
        data: Vec<f32>,
        provenance: Vec<String>,
    ) -> Result<Self, FormatError> {
        if !names.is_empty() && dim == 0 {
            return Err(FormatError::InvalidShape("descriptor dimension must be positive".into()));
        }
        let expected = names
            .len()
            .checked_mul(dim)
            .ok_or(FormatError::SizeOverflow)?;
        if data.len() != expected {
            return Err(FormatError::InvalidShape(format!(
                "{} rows of dim {dim} need {expected} values, got {}",
                names.len(),
                data.len()
            )));
        }
        check_finite_f32(&data)?;
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(FormatError::DuplicateName(name.clone()));
            }
        }
        Ok(DescriptorSet {
            names,
            dim,
            data,
            provenance,
            index,
        })
    }

    pub fn empty(dim: usize) -> Self {
        DescriptorSet {
            names: Vec::new(),
            dim,
            data: Vec::new(),
            provenance: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Builds a set from `f64` rows, rounding to storage precision.
    pub fn from_rows<R: AsRef<[f64]>>(
        names: Vec<String>,
        rows: &[R],
        provenance: Vec<String>,
    ) -> Result<Self, FormatError> {
        if names.len() != rows.len() {
            return Err(FormatError::InvalidShape(format!(
                "{} names for {} rows",
                names.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(FormatError::InvalidShape(format!(
                    "ragged rows: expected dim {dim}, got {}",
                    row.len()
                )));
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(names, dim, data, provenance)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Row `i` widened to `f64`.
    pub fn descriptor(&self, i: usize) -> Descriptor {
        Descriptor::from_f32(self.row(i))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.provenance.push(tag.into());
        self
    }

    /// Replaces every row, keeping names. `provenance` is the full new history.
    pub fn map_rows<F>(&self, provenance: Vec<String>, mut f: F) -> Result<Self, FormatError>
    where
        F: FnMut(usize, &[f32]) -> Vec<f64>,
    {
        let rows: Vec<Vec<f64>> = (0..self.len()).map(|i| f(i, self.row(i))).collect();
        if rows.is_empty() {
            let mut out = DescriptorSet::empty(self.dim);
            out.provenance = provenance;
            return Ok(out);
        }
        Self::from_rows(self.names.clone(), &rows, provenance)
    }
}

fn put_u16_len(buf: &mut Vec<u8>, what: &'static str, s: &str) -> Result<(), FormatError> {
    let len = u16::try_from(s.len()).map_err(|_| FormatError::TooLong { what, len: s.len() })?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_u32_len(buf: &mut Vec<u8>, what: &'static str, s: &str) -> Result<(), FormatError> {
    let len = u32::try_from(s.len()).map_err(|_| FormatError::TooLong { what, len: s.len() })?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn write_dset<W: Write>(set: &DescriptorSet, mut out: W) -> Result<(), FormatError> {
    let n = u32::try_from(set.len()).map_err(|_| FormatError::SizeOverflow)?;
    let dim = u32::try_from(set.dim).map_err(|_| FormatError::SizeOverflow)?;
    let tags = u16::try_from(set.provenance.len()).map_err(|_| FormatError::TooLong {
        what: "provenance list",
        len: set.provenance.len(),
    })?;

    let mut buf = Vec::with_capacity(16 + set.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&tags.to_le_bytes());
    for tag in &set.provenance {
        put_u16_len(&mut buf, "provenance tag", tag)?;
    }
    for name in &set.names {
        put_u32_len(&mut buf, "name", name)?;
    }
    for v in &set.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_dset<R: Read>(mut source: R) -> Result<DescriptorSet, FormatError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = ByteCursor::new(&buf);
    cur.magic(MAGIC)?;
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n = cur.u32()? as usize;
    let dim = cur.u32()? as usize;

    let tag_count = cur.u16()? as usize;
    let mut provenance = Vec::with_capacity(tag_count);
    for _ in 0..tag_count {
        let len = cur.u16()? as usize;
        let raw = cur.take(len)?;
        let tag = std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8("provenance tag"))?;
        provenance.push(tag.to_owned());
    }

    // Each name needs at least its 4-byte length prefix; reject absurd counts
    // before reserving memory for them.
    let min_rest = (n as u64) * 4;
    let remaining = (buf.len() as u64).saturating_sub(16);
    if min_rest > remaining {
        return Err(FormatError::Truncated {
            expected: 16 + min_rest,
            actual: buf.len() as u64,
        });
    }
    let mut names = Vec::with_capacity(n);
    for _ in 0..n {
        let len = cur.u32()? as usize;
        let raw = cur.take(len)?;
        let name = std::str::from_utf8(raw).map_err(|_| FormatError::InvalidUtf8("name"))?;
        names.push(name.to_owned());
    }

    let count = n.checked_mul(dim).ok_or(FormatError::SizeOverflow)?;
    let data = cur.f32_vec(count)?;
    cur.finish()?;
    DescriptorSet::new(names, dim, data, provenance)
}

pub fn write_dset_file(set: &DescriptorSet, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let file = File::create(path)?;
    write_dset(set, BufWriter::new(file))
}

pub fn read_dset_file(path: impl AsRef<Path>) -> Result<DescriptorSet, FormatError> {
    read_dset(File::open(path)?)
}
