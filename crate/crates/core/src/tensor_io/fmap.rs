use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{check_finite_f32, ByteCursor, FormatError, FORMAT_VERSION};

const MAGIC: &[u8; 4] = b"FMAP";

/// A `C×H×W` activation tensor for one image, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    name: String,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, FormatError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(FormatError::InvalidShape(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or(FormatError::SizeOverflow)?;
        if data.len() != expected {
            return Err(FormatError::InvalidShape(format!(
                "{channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        check_finite_f32(&data)?;
        Ok(FeatureMap {
            name: name.into(),
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a map by evaluating `f(c, y, x)` for every cell.
    pub fn from_fn(
        name: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, FormatError> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(name, channels, height, width, data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel as a `H×W` row-major slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

pub fn write_fmap<W: Write>(map: &FeatureMap, mut out: W) -> Result<(), FormatError> {
    check_finite_f32(&map.data)?;
    let dims = [map.channels, map.height, map.width]
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| FormatError::SizeOverflow))
        .collect::<Result<Vec<_>, _>>()?;

    let mut buf = Vec::with_capacity(20 + map.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &map.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

/// Reads one map; the name is not stored in the file and is supplied by the caller.
pub fn read_fmap<R: Read>(mut source: R, name: impl Into<String>) -> Result<FeatureMap, FormatError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = ByteCursor::new(&buf);
    cur.magic(MAGIC)?;
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let c = cur.u32()? as u64;
    let h = cur.u32()? as u64;
    let w = cur.u32()? as u64;
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or(FormatError::SizeOverflow)?;
    let payload = count.checked_mul(4).ok_or(FormatError::SizeOverflow)?;
    let expected = 20u64.checked_add(payload).ok_or(FormatError::SizeOverflow)?;
    if expected > buf.len() as u64 {
        return Err(FormatError::Truncated {
            expected,
            actual: buf.len() as u64,
        });
    }
    let count = usize::try_from(count).map_err(|_| FormatError::SizeOverflow)?;
    let data = cur.f32_vec(count)?;
    cur.finish()?;
    FeatureMap::new(name, c as usize, h as usize, w as usize, data)
}

pub fn write_fmap_file(map: &FeatureMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let file = File::create(path)?;
    write_fmap(map, BufWriter::new(file))
}

/// Reads a map from disk, naming it after the file stem.
pub fn read_fmap_file(path: impl AsRef<Path>) -> Result<FeatureMap, FormatError> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_fmap(File::open(path)?, name)
}
