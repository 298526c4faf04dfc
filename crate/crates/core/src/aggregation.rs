//! R-MAC aggregation: multi-scale region grid, per-region max pooling and
//! spatial downsampling of feature maps.

use crate::descriptor::{norm, Descriptor};
use crate::tensor_io::{FeatureMap, FormatError};

/// Minimum overlap between consecutive regions along the longer axis, as a
/// fraction of the region side.
pub const REGION_OVERLAP: f64 = 0.4;

pub const DEFAULT_LEVELS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum AggregationError {
    #[error("region {region:?} exceeds a {width}x{height} map")]
    OutOfBounds {
        region: Region,
        width: usize,
        height: usize,
    },
    #[error("cannot downsample {from_h}x{from_w} to the larger {to_h}x{to_w}")]
    Upsample {
        from_h: usize,
        from_w: usize,
        to_h: usize,
        to_w: usize,
    },
    #[error("number of scales must be at least 1")]
    NoLevels,
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// A square pooling window in cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub scale: usize,
}

/// Number of regions added on the longer axis so that neighbouring regions at
/// the coarsest scale overlap by at least [`REGION_OVERLAP`].
///
/// With side `s = short` and `k = 1 + m` regions on an axis of length `long`,
/// the spacing is `(long - s) / (k - 1)` and the overlap condition
/// `spacing <= 0.6 s` becomes `5 (long - s) <= 3 s (k - 1)`.
fn extra_long_axis_regions(short: usize, long: usize) -> usize {
    if long <= short {
        return 0;
    }
    let num = 5 * (long - short);
    let den = 3 * short;
    num.div_ceil(den)
}

/// Start offsets of `count` windows of size `side` spread evenly over `len`.
fn axis_starts(len: usize, side: usize, count: usize) -> Vec<usize> {
    let slack = len - side;
    if count == 1 {
        return vec![slack / 2];
    }
    (0..count).map(|i| i * slack / (count - 1)).collect()
}

/// The R-MAC region grid for a `width×height` map over `levels` scales,
/// ordered by scale, then row, then column.
pub fn rmac_regions(width: usize, height: usize, levels: usize) -> Vec<Region> {
    if width == 0 || height == 0 {
        return Vec::new();
    }
    let short = width.min(height);
    let long = width.max(height);
    let extra = extra_long_axis_regions(short, long);
    let (extra_x, extra_y) = if width > height { (extra, 0) } else { (0, extra) };

    let mut regions = Vec::new();
    for scale in 1..=levels {
        let side = (2 * short / (scale + 1)).max(1);
        let xs = axis_starts(width, side, scale + extra_x);
        let ys = axis_starts(height, side, scale + extra_y);
        for &y in &ys {
            for &x in &xs {
                regions.push(Region {
                    x,
                    y,
                    width: side,
                    height: side,
                    scale,
                });
            }
        }
    }
    regions
}

/// Channel-wise maximum over one region.
pub fn region_mac(map: &FeatureMap, region: &Region) -> Result<Descriptor, AggregationError> {
    let (w, h) = (map.width(), map.height());
    if region.width == 0 || region.height == 0 || region.x + region.width > w || region.y + region.height > h {
        return Err(AggregationError::OutOfBounds {
            region: *region,
            width: w,
            height: h,
        });
    }
    let out = (0..map.channels())
        .map(|c| {
            let plane = map.channel(c);
            let mut best = f32::NEG_INFINITY;
            for y in region.y..region.y + region.height {
                let row = &plane[y * w + region.x..y * w + region.x + region.width];
                for &v in row {
                    best = best.max(v);
                }
            }
            f64::from(best)
        })
        .collect();
    Ok(Descriptor::new(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmacConfig {
    pub levels: usize,
    /// L2-normalise each region vector before summing.
    pub region_norm: bool,
}

impl Default for RmacConfig {
    fn default() -> Self {
        RmacConfig {
            levels: DEFAULT_LEVELS,
            region_norm: true,
        }
    }
}

impl RmacConfig {
    pub fn tag(&self) -> String {
        if self.region_norm {
            format!("rmac-L{}", self.levels)
        } else {
            format!("rmac-L{}-nonorm", self.levels)
        }
    }
}

/// Sum of (optionally L2-normalised) region MACs. Dead regions with an
/// all-zero response are added unnormalised.
pub fn rmac(map: &FeatureMap, config: &RmacConfig) -> Result<Descriptor, AggregationError> {
    if config.levels == 0 {
        return Err(AggregationError::NoLevels);
    }
    let mut acc = vec![0.0f64; map.channels()];
    for region in rmac_regions(map.width(), map.height(), config.levels) {
        let v = region_mac(map, &region)?;
        let n = if config.region_norm { norm(&v) } else { 0.0 };
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += if n > 0.0 { x / n } else { *x };
        }
    }
    Ok(Descriptor::new(acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Max,
    Average,
}

/// Adaptive pooling to `out_h×out_w`. Output cell `(i, j)` pools the input
/// window `[⌊iH/H'⌋, ⌈(i+1)H/H'⌉) × [⌊jW/W'⌋, ⌈(j+1)W/W'⌉)`.
pub fn downsample(
    map: &FeatureMap,
    out_h: usize,
    out_w: usize,
    pooling: Pooling,
) -> Result<FeatureMap, AggregationError> {
    let (h, w) = (map.height(), map.width());
    if out_h > h || out_w > w || out_h == 0 || out_w == 0 {
        return Err(AggregationError::Upsample {
            from_h: h,
            from_w: w,
            to_h: out_h,
            to_w: out_w,
        });
    }
    let window = |i: usize, inp: usize, out: usize| (i * inp / out, ((i + 1) * inp).div_ceil(out));
    let rows: Vec<(usize, usize)> = (0..out_h).map(|i| window(i, h, out_h)).collect();
    let cols: Vec<(usize, usize)> = (0..out_w).map(|j| window(j, w, out_w)).collect();

    let mut data = Vec::with_capacity(map.channels() * out_h * out_w);
    for c in 0..map.channels() {
        let plane = map.channel(c);
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let cells = (y0..y1).flat_map(|y| plane[y * w + x0..y * w + x1].iter().copied());
                let v = match pooling {
                    Pooling::Max => cells.fold(f32::NEG_INFINITY, f32::max),
                    Pooling::Average => {
                        let count = ((y1 - y0) * (x1 - x0)) as f64;
                        (cells.map(f64::from).sum::<f64>() / count) as f32
                    }
                };
                data.push(v);
            }
        }
    }
    Ok(FeatureMap::new(map.name(), map.channels(), out_h, out_w, data)?)
}
