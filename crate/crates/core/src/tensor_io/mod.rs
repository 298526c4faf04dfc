//! Core data types, the `FMAP`/`DSET` binary formats and ground-truth parsing.
//!
//! Both binary formats are little-endian throughout. `FMAP` holds one
//! `C×H×W` activation tensor:
//!
//! ```text
//! "FMAP" | version u32 = 1 | C u32 | H u32 | W u32 | C·H·W × f32
//! ```
//!
//! `DSET` holds a named descriptor matrix with its processing history:
//!
//! ```text
//! "DSET" | version u32 = 1 | n u32 | dim u32
//!        | tag count u16 | tag count × (len u16 | UTF-8)
//!        | n × (len u32 | UTF-8 name)
//!        | n·dim × f32, row-major
//! ```

mod dset;
mod fmap;
mod groundtruth;

pub use dset::{read_dset, read_dset_file, write_dset, write_dset_file, DescriptorSet};
pub use fmap::{read_fmap, read_fmap_file, write_fmap, write_fmap_file, FeatureMap};
pub use groundtruth::{
    parse_generic_groundtruth, parse_oxford_groundtruth, BoundingBox, GroundTruth,
    GroundTruthError, QueryGroundTruth,
};

use std::io;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated input: expected at least {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("declared size overflows addressable memory")]
    SizeOverflow,
    #[error("{0} trailing bytes after payload")]
    TrailingData(u64),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("duplicate descriptor name {0:?}")]
    DuplicateName(String),
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("{what} of {len} bytes exceeds the format limit")]
    TooLong { what: &'static str, len: usize },
}

/// Bounds-checked little-endian reader over an in-memory buffer.
///
/// Every short read reports the absolute byte count that was needed, so a
/// truncated payload names both expected and actual sizes.
pub(crate) struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteCursor { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(len).ok_or(FormatError::SizeOverflow)?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated {
                expected: end as u64,
                actual: self.buf.len() as u64,
            });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4)?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads `count` f32 values after checking the whole payload is present.
    pub(crate) fn f32_vec(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = count.checked_mul(4).ok_or(FormatError::SizeOverflow)?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = count.checked_mul(8).ok_or(FormatError::SizeOverflow)?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<(), FormatError> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(FormatError::TrailingData(rest as u64));
        }
        Ok(())
    }
}

pub(crate) fn check_finite_f32(values: &[f32]) -> Result<(), FormatError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(FormatError::NonFinite(i)),
        None => Ok(()),
    }
}
