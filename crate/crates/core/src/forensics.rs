//! Classic forgery checks: Error Level Analysis, a local correlation map and
//! dense block-based clone detection.

use std::collections::HashMap;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{convolve, Kernel};
use crate::plane::{decode_image, Plane, RgbImage};

/// Amplified recompression residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ElaMap {
    pub plane: Plane,
    pub quality: u8,
    pub gain: f64,
}

/// Encodes `img` as a baseline JPEG.
pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::BadParameter(format!("JPEG quality {quality} outside 1..=100")));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&img.to_image_buffer())
        .map_err(|e| Error::Encoding(e.to_string()))?;
    Ok(buf)
}

/// Error Level Analysis of encoded PNG/JPEG bytes.
pub fn ela(bytes: &[u8], quality: u8, gain: f64) -> Result<ElaMap> {
    let (img, _) = decode_image(bytes, Path::new("<ela input>"))?;
    ela_image(&img, quality, gain)
}

/// Recompresses `img` at `quality` and returns the per-pixel maximum channel
/// difference, multiplied by `gain` and clamped to [0, 255].
pub fn ela_image(img: &RgbImage, quality: u8, gain: f64) -> Result<ElaMap> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::BadParameter(format!("ELA gain {gain} must be > 0")));
    }
    let recompressed = encode_jpeg(img, quality)?;
    let (round_trip, _) = decode_image(&recompressed, Path::new("<ela recompressed>"))?;
    let values = img
        .pixels()
        .iter()
        .zip(round_trip.pixels())
        .map(|(a, b)| {
            let diff = (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0);
            (f64::from(diff) * gain).min(255.0)
        })
        .collect();
    Ok(ElaMap {
        plane: Plane::new(img.width(), img.height(), values)?,
        quality,
        gain,
    })
}

/// Pearson correlation of two equally long samples; 0 if either has zero variance.
///
/// Samples are shifted by their first element before the two-pass moments so
/// that a constant window yields exactly zero variance.
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (a0, b0) = (a[0], b[0]);
    let ma = a.iter().map(|v| v - a0).sum::<f64>() / n;
    let mb = b.iter().map(|v| v - b0).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - a0 - ma, y - b0 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Local Pearson correlation between each `w x w` window of `p` and the same
/// window of its 3x3 box-smoothed version (replicate padding throughout).
pub fn correlation_map(p: &Plane, w: usize) -> Result<Plane> {
    let (width, height) = p.dims();
    if w % 2 == 0 || w < 3 || w > width.min(height) {
        return Err(Error::BadWindow {
            size: w,
            reason: format!("correlation window must be odd, >= 3 and fit {width}x{height}"),
        });
    }
    let smooth = convolve(p, &Kernel::box_filter(3)?)?;
    let r = (w / 2) as isize;
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let mut a = Vec::with_capacity(w * w);
        let mut b = Vec::with_capacity(w * w);
        for (x, slot) in row.iter_mut().enumerate() {
            a.clear();
            b.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    a.push(p.get_clamped(xx, yy));
                    b.push(smooth.get_clamped(xx, yy));
                }
            }
            *slot = pearson(&a, &b);
        }
    });
    Plane::new(width, height, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offset {
    pub dx: i64,
    pub dy: i64,
}

impl Offset {
    pub fn length(&self) -> f64 {
        (self.dx as f64).hypot(self.dy as f64)
    }
}

/// A pair of blocks with near-identical mean-removed content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneMatch {
    pub src: Point,
    pub dst: Point,
    pub offset: Offset,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloneParams {
    pub block: usize,
    pub stride: usize,
    pub sim_threshold: f64,
    pub min_shift: f64,
}

impl Default for CloneParams {
    fn default() -> Self {
        Self {
            block: 16,
            stride: 8,
            sim_threshold: 0.95,
            min_shift: 16.0,
        }
    }
}

/// Buckets holding more blocks than this are repetitive texture and are not paired.
pub const MAX_BUCKET: usize = 256;
/// Blocks whose standard deviation falls below this carry no usable structure.
const MIN_BLOCK_STD: f64 = 1e-6;

struct Descriptor {
    origin: Point,
    unit: Vec<f64>,
    code: Vec<u8>,
}

fn describe(p: &Plane, origin: Point, block: usize) -> Option<Descriptor> {
    let n = block * block;
    let first = p.get(origin.x, origin.y);
    let mut vals = Vec::with_capacity(n);
    for y in origin.y..origin.y + block {
        vals.extend(p.row(y)[origin.x..origin.x + block].iter().map(|v| v - first));
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    vals.iter_mut().for_each(|v| *v -= mean);
    let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm / (n as f64).sqrt() < MIN_BLOCK_STD {
        return None;
    }
    vals.iter_mut().for_each(|v| *v /= norm);
    // quartile cut points of a unit-norm vector with roughly Gaussian entries
    let cut = 0.6745 / (n as f64).sqrt();
    let code = vals
        .iter()
        .map(|&v| match v {
            v if v < -cut => 0,
            v if v < 0.0 => 1,
            v if v < cut => 2,
            _ => 3,
        })
        .collect::<Vec<u8>>()
        .chunks(4)
        .map(|q| q.iter().fold(0u8, |acc, &c| (acc << 2) | c))
        .collect();
    Some(Descriptor { origin, unit: vals, code })
}

/// Dense block matching for copy-move detection.
///
/// Candidate pairs share the exact hash of their 2-bit quantized descriptors;
/// they are confirmed by normalized correlation and a minimum displacement.
/// Each pair is reported once with `src < dst` in (y, x) order.
pub fn clone_blocks(p: &Plane, params: &CloneParams) -> Result<Vec<CloneMatch>> {
    let CloneParams {
        block,
        stride,
        sim_threshold,
        min_shift,
    } = *params;
    let (w, h) = p.dims();
    if block < 8 || stride < 1 || w < block || h < block {
        return Err(Error::BadGeometry(format!(
            "block {block}, stride {stride} on a {w}x{h} plane"
        )));
    }
    if !(0.0..=1.0).contains(&sim_threshold) || !(min_shift >= 0.0) {
        return Err(Error::BadGeometry(format!(
            "similarity threshold {sim_threshold} / min shift {min_shift}"
        )));
    }

    let origins: Vec<Point> = (0..=h - block)
        .step_by(stride)
        .flat_map(|y| (0..=w - block).step_by(stride).map(move |x| Point { x, y }))
        .collect();
    let descriptors: Vec<Descriptor> = origins
        .par_iter()
        .filter_map(|&o| describe(p, o, block))
        .collect();

    let mut buckets: HashMap<&[u8], Vec<usize>> = HashMap::new();
    for (i, d) in descriptors.iter().enumerate() {
        buckets.entry(&d.code).or_default().push(i);
    }

    let mut matches = Vec::new();
    for members in buckets.values() {
        if members.len() < 2 || members.len() > MAX_BUCKET {
            continue;
        }
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                let (da, db) = (&descriptors[a], &descriptors[b]);
                let (src, dst) = if (da.origin.y, da.origin.x) < (db.origin.y, db.origin.x) {
                    (da, db)
                } else {
                    (db, da)
                };
                let offset = Offset {
                    dx: dst.origin.x as i64 - src.origin.x as i64,
                    dy: dst.origin.y as i64 - src.origin.y as i64,
                };
                if offset.length() < min_shift {
                    continue;
                }
                let similarity: f64 = src.unit.iter().zip(&dst.unit).map(|(x, y)| x * y).sum();
                let similarity = similarity.clamp(-1.0, 1.0);
                if similarity >= sim_threshold {
                    matches.push(CloneMatch {
                        src: src.origin,
                        dst: dst.origin,
                        offset,
                        similarity,
                    });
                }
            }
        }
    }
    matches.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then((a.src.y, a.src.x, a.dst.y, a.dst.x).cmp(&(b.src.y, b.src.x, b.dst.y, b.dst.x)))
    });
    Ok(matches)
}
