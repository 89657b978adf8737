//! Per-image spectral fingerprint.
//!
//! Layout (version [`FINGERPRINT_VERSION`]): for stages 3, 4, 5 in that order,
//! a 64-band radial profile (DC band zeroed) followed by a 36-sector angular
//! profile, each 100-entry stage block L2-normalized. Total length 300.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{apply_stage, PipelineStage, StageParams};
use crate::plane::Plane;
use crate::spectrum::{angular_profile, radial_profile, spectrum_of};

pub const FINGERPRINT_VERSION: u32 = 1;
pub const RADIAL_BANDS: usize = 64;
pub const ANGULAR_SECTORS: usize = 36;
pub const BLOCK_LEN: usize = RADIAL_BANDS + ANGULAR_SECTORS;
pub const FINGERPRINT_STAGES: [PipelineStage; 3] = [
    PipelineStage::Laplacian,
    PipelineStage::LaplacianOfMedian,
    PipelineStage::MedianPlusLaplacian,
];
pub const FINGERPRINT_LEN: usize = BLOCK_LEN * FINGERPRINT_STAGES.len();
pub const MIN_FINGERPRINT_SIDE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub version: u32,
    pub stage_ids: Vec<u8>,
    pub values: Vec<f64>,
}

impl Fingerprint {
    /// Wraps a raw vector in the current layout; the length must be [`FINGERPRINT_LEN`].
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != FINGERPRINT_LEN {
            return Err(Error::LengthMismatch {
                expected: FINGERPRINT_LEN,
                actual: values.len(),
            });
        }
        Ok(Self {
            version: FINGERPRINT_VERSION,
            stage_ids: FINGERPRINT_STAGES.iter().map(|s| s.id()).collect(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The 100-entry block of stage `index` (0-based position in the layout).
    pub fn block(&self, index: usize) -> &[f64] {
        &self.values[index * BLOCK_LEN..(index + 1) * BLOCK_LEN]
    }

    pub fn radial_block(&self, index: usize) -> &[f64] {
        &self.block(index)[..RADIAL_BANDS]
    }

    pub fn angular_block(&self, index: usize) -> &[f64] {
        &self.block(index)[RADIAL_BANDS..]
    }
}

/// Scales `v` to unit L2 norm in place; an all-zero block stays zero.
pub(crate) fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Computes the fingerprint of a square grayscale plane.
pub fn fingerprint(gray: &Plane, params: &StageParams) -> Result<Fingerprint> {
    let (w, h) = gray.dims();
    if w != h || w % 2 != 0 || w < MIN_FINGERPRINT_SIDE {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: MIN_FINGERPRINT_SIDE,
        });
    }
    let mut values = Vec::with_capacity(FINGERPRINT_LEN);
    for stage in FINGERPRINT_STAGES {
        let residual = apply_stage(gray, stage, params)?;
        values.extend(stage_block(&residual)?);
    }
    Fingerprint::from_values(values)
}

/// Fingerprint from stage planes already computed by the caller
/// (indexed by stage id minus one).
pub(crate) fn fingerprint_from_stages(stages: &[Plane; 5]) -> Result<Fingerprint> {
    let mut values = Vec::with_capacity(FINGERPRINT_LEN);
    for stage in FINGERPRINT_STAGES {
        values.extend(stage_block(&stages[stage.id() as usize - 1])?);
    }
    Fingerprint::from_values(values)
}

fn stage_block(residual: &Plane) -> Result<Vec<f64>> {
    let spectrum = spectrum_of(residual)?.denoised();
    let mut block = radial_profile(&spectrum, RADIAL_BANDS)?.exclude_dc().bins;
    block.extend(angular_profile(&spectrum, ANGULAR_SECTORS)?);
    l2_normalize(&mut block);
    Ok(block)
}

/// Cosine similarity; 0 when either vector is all-zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}
