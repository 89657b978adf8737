//! Single-image analysis and the JSON report contract.
//!
//! Reports serialize with a fixed key order (struct field order, sorted maps)
//! and contain no timestamps, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::detector::{anomaly_score, classify, stage_scores, SourceProfile};
use crate::error::{Error, Result};
use crate::filters::{apply_all_stages, LaplacianKind, PipelineStage, StageParams};
use crate::fingerprint::{
    fingerprint, fingerprint_from_stages, Fingerprint, ANGULAR_SECTORS, MIN_FINGERPRINT_SIDE, RADIAL_BANDS,
};
use crate::forensics::{clone_blocks, correlation_map, ela_image, CloneMatch, CloneParams, ElaMap};
use crate::plane::{center_crop_even_square, decode_image, normalize_unit, to_grayscale, Plane, SourceFormat};
use crate::spectrum::{detect_peaks, spectrum_of, Peak, Spectrum};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TOP_PEAKS: usize = 10;
/// Label whose profile anomaly scores are measured against.
pub const REAL_LABEL: &str = "real";
const ELA_BLOCK: usize = 16;

/// Every tunable used by an analysis run, echoed verbatim into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub median_window: usize,
    pub laplacian: LaplacianKind,
    pub peak_threshold: f64,
    pub radial_bands: usize,
    pub angular_sectors: usize,
    pub ela_quality: u8,
    pub ela_gain: f64,
    pub correlation_window: usize,
    pub clone_block: usize,
    pub clone_stride: usize,
    pub clone_similarity: f64,
    pub clone_min_shift: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        let clone = CloneParams::default();
        Self {
            median_window: 3,
            laplacian: LaplacianKind::FourNeighbor,
            peak_threshold: 4.0,
            radial_bands: RADIAL_BANDS,
            angular_sectors: ANGULAR_SECTORS,
            ela_quality: 90,
            ela_gain: 20.0,
            correlation_window: 7,
            clone_block: clone.block,
            clone_stride: clone.stride,
            clone_similarity: clone.sim_threshold,
            clone_min_shift: clone.min_shift,
        }
    }
}

impl AnalysisParams {
    pub fn stage_params(&self) -> StageParams {
        StageParams {
            median_window: self.median_window,
            laplacian: self.laplacian,
        }
    }

    pub fn clone_params(&self) -> CloneParams {
        CloneParams {
            block: self.clone_block,
            stride: self.clone_stride,
            sim_threshold: self.clone_similarity,
            min_shift: self.clone_min_shift,
        }
    }

    /// Checks ranges that do not depend on the image size.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadParameter(msg));
        if self.median_window == 0 || self.median_window % 2 == 0 {
            return bad(format!("median window {} must be odd", self.median_window));
        }
        if !(self.peak_threshold > 1.0 && self.peak_threshold.is_finite()) {
            return bad(format!("peak threshold {} must be > 1", self.peak_threshold));
        }
        if self.radial_bands != RADIAL_BANDS || self.angular_sectors != ANGULAR_SECTORS {
            return bad(format!(
                "fingerprint layout is fixed at {RADIAL_BANDS} bands and {ANGULAR_SECTORS} sectors"
            ));
        }
        if !(1..=100).contains(&self.ela_quality) {
            return bad(format!("ELA quality {} outside 1..=100", self.ela_quality));
        }
        if !(self.ela_gain > 0.0 && self.ela_gain.is_finite()) {
            return bad(format!("ELA gain {} must be > 0", self.ela_gain));
        }
        if self.correlation_window < 3 || self.correlation_window % 2 == 0 {
            return bad(format!("correlation window {} must be odd and >= 3", self.correlation_window));
        }
        if self.clone_block < 8 || self.clone_stride == 0 {
            return bad(format!("clone block {} / stride {}", self.clone_block, self.clone_stride));
        }
        if !(0.0..=1.0).contains(&self.clone_similarity) {
            return bad(format!("clone similarity {} outside [0, 1]", self.clone_similarity));
        }
        if !(self.clone_min_shift >= 0.0 && self.clone_min_shift.is_finite()) {
            return bad(format!("clone min shift {}", self.clone_min_shift));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub path: String,
    pub format: SourceFormat,
    pub width: usize,
    pub height: usize,
    /// Side of the centered even square that stages and spectra are computed on.
    pub analyzed_side: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub id: u8,
    pub name: String,
    /// Mean squared deviation from the plane mean.
    pub energy: f64,
    pub peak_count: usize,
    pub peaks: Vec<Peak>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStat {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElaStats {
    pub quality: u8,
    pub gain: f64,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    /// Aligned block with the highest mean response.
    pub hottest_block: BlockStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStats {
    pub window: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneStats {
    pub count: usize,
    pub matches: Vec<CloneMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicChecks {
    pub ela: ElaStats,
    pub correlation: CorrelationStats,
    pub clones: CloneStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub label: String,
    pub scores: BTreeMap<String, f64>,
    pub margin: f64,
    /// Per-label cosine similarity of each fingerprint stage block, keyed by stage id.
    pub stage_scores: BTreeMap<String, BTreeMap<u8, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub artifact_version: String,
    pub input: InputInfo,
    pub params: AnalysisParams,
    pub stages: Vec<StageSummary>,
    pub fingerprint: Option<Fingerprint>,
    pub classic: ClassicChecks,
    pub classification: Option<ClassificationReport>,
    pub anomaly: Option<f64>,
}

impl AnalysisReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Report plus the rasters it was computed from, for rendering.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: AnalysisReport,
    pub stages: [Plane; 5],
    pub spectra: [Spectrum; 5],
    pub ela: ElaMap,
    pub correlation: Plane,
}

/// AC energy: mean squared deviation, computed on values shifted by the first
/// sample so a constant plane gives exactly 0.
fn ac_energy(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let first = values[0];
    let mean = values.iter().map(|v| v - first).sum::<f64>() / n;
    values.iter().map(|v| (v - first - mean).powi(2)).sum::<f64>() / n
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (mean, ac_energy(values).sqrt())
}

fn hottest_block(p: &Plane, size: usize) -> BlockStat {
    let size = size.min(p.width()).min(p.height());
    let mut best = BlockStat { x: 0, y: 0, size, mean: f64::NEG_INFINITY };
    for y in (0..=p.height() - size).step_by(size) {
        for x in (0..=p.width() - size).step_by(size) {
            let mut sum = 0.0;
            for yy in y..y + size {
                sum += p.row(yy)[x..x + size].iter().sum::<f64>();
            }
            let mean = sum / (size * size) as f64;
            if mean > best.mean {
                best = BlockStat { x, y, size, mean };
            }
        }
    }
    best
}

/// Grayscale, centered even-square plane used for stages and fingerprints.
pub fn analysis_plane(gray: &Plane) -> Result<Plane> {
    center_crop_even_square(gray)
}

/// Loads an image and computes its fingerprint on the centered square crop.
pub fn fingerprint_file(path: &Path, params: &StageParams) -> Result<Fingerprint> {
    let img = crate::plane::load_image(path)?;
    let square = analysis_plane(&to_grayscale(&img))?;
    fingerprint(&square, params)
}

/// Runs the full analysis on encoded PNG/JPEG bytes.
///
/// `display_path` is recorded in the report as given. When `profiles` is
/// non-empty the fingerprint is classified, and a profile labelled
/// [`REAL_LABEL`] additionally yields an anomaly score.
pub fn analyze_bytes(
    bytes: &[u8],
    display_path: &str,
    params: &AnalysisParams,
    profiles: &[SourceProfile],
) -> Result<Analysis> {
    params.validate()?;
    let (img, format) = decode_image(bytes, Path::new(display_path))?;
    let gray = to_grayscale(&img);
    let square = analysis_plane(&gray)?;
    let stage_params = params.stage_params();
    let stages = apply_all_stages(&square, &stage_params)?;

    let mut summaries = Vec::with_capacity(5);
    let mut spectra = Vec::with_capacity(5);
    for (stage, plane) in PipelineStage::ALL.iter().zip(&stages) {
        let spectrum = spectrum_of(plane)?;
        let peaks = detect_peaks(&spectrum, params.peak_threshold)?;
        summaries.push(StageSummary {
            id: stage.id(),
            name: stage.name().to_string(),
            energy: ac_energy(plane.values()),
            peak_count: peaks.peaks.len(),
            peaks: peaks.peaks.into_iter().take(TOP_PEAKS).collect(),
        });
        spectra.push(spectrum);
    }

    let fingerprint = if square.width() >= MIN_FINGERPRINT_SIDE {
        Some(fingerprint_from_stages(&stages)?)
    } else {
        None
    };

    let (classification, anomaly) = match (&fingerprint, profiles.is_empty()) {
        (Some(fp), false) => {
            let c = classify(fp, profiles)?;
            let mut per_stage = BTreeMap::new();
            for p in profiles {
                per_stage.insert(p.label.clone(), stage_scores(fp, p)?);
            }
            let anomaly = profiles
                .iter()
                .find(|p| p.label == REAL_LABEL)
                .map(|real| anomaly_score(fp, real))
                .transpose()?;
            let report = ClassificationReport {
                label: c.label,
                scores: c.scores,
                margin: c.margin,
                stage_scores: per_stage,
            };
            (Some(report), anomaly)
        }
        _ => (None, None),
    };

    let ela = ela_image(&img, params.ela_quality, params.ela_gain)?;
    let (ela_mean, ela_std) = mean_std(ela.plane.values());
    let corr_window = correlation_window_used(params, &gray);
    let correlation = correlation_map(&gray, corr_window)?;
    let (corr_mean, corr_std) = mean_std(correlation.values());
    let (corr_min, corr_max) = correlation.min_max();
    let clone_params = params.clone_params();
    let clones = if gray.width() >= clone_params.block && gray.height() >= clone_params.block {
        clone_blocks(&gray, &clone_params)?
    } else {
        Vec::new()
    };

    let classic = ClassicChecks {
        ela: ElaStats {
            quality: ela.quality,
            gain: ela.gain,
            mean: ela_mean,
            std: ela_std,
            max: ela.plane.min_max().1,
            hottest_block: hottest_block(&ela.plane, ELA_BLOCK),
        },
        correlation: CorrelationStats {
            window: corr_window,
            mean: corr_mean,
            std: corr_std,
            min: corr_min,
            max: corr_max,
        },
        clones: CloneStats {
            count: clones.len(),
            matches: clones,
        },
    };

    let report = AnalysisReport {
        artifact_version: ARTIFACT_VERSION.to_string(),
        input: InputInfo {
            path: display_path.to_string(),
            format,
            width: img.width(),
            height: img.height(),
            analyzed_side: square.width(),
        },
        params: params.clone(),
        stages: summaries,
        fingerprint,
        classic,
        classification,
        anomaly,
    };
    Ok(Analysis {
        report,
        stages,
        spectra: spectra.try_into().expect("five spectra"),
        ela,
        correlation,
    })
}

fn odd_floor(n: usize) -> usize {
    if n % 2 == 0 {
        n.saturating_sub(1)
    } else {
        n
    }
}

fn correlation_window_used(params: &AnalysisParams, gray: &Plane) -> usize {
    params.correlation_window.min(odd_floor(gray.width().min(gray.height())))
}

/// Reads `path` and runs [`analyze_bytes`].
pub fn analyze_file(path: &Path, params: &AnalysisParams, profiles: &[SourceProfile]) -> Result<Analysis> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        _ => Error::CorruptData {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
    })?;
    analyze_bytes(&bytes, &path.display().to_string(), params, profiles)
}

/// Encodes a plane as an 8-bit grayscale PNG after min-max normalization.
pub fn render_png(p: &Plane) -> Result<Vec<u8>> {
    render_unit_png(&normalize_unit(p))
}

/// Encodes values already in [0, 255] (clamped) without rescaling.
pub fn render_raw_png(p: &Plane) -> Result<Vec<u8>> {
    render_unit_png(&p.map(|v| (v / 255.0).clamp(0.0, 1.0)))
}

fn render_unit_png(unit: &Plane) -> Result<Vec<u8>> {
    let raw: Vec<u8> = unit.values().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let img = GrayImage::from_raw(unit.width() as u32, unit.height() as u32, raw)
        .expect("buffer length matches dimensions");
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)
        .map_err(|e| Error::Encoding(e.to_string()))?;
    Ok(buf)
}

impl Analysis {
    /// Writes `report.json` into `out`.
    pub fn write_report(&self, out: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(out)?;
        let path = out.join("report.json");
        std::fs::write(&path, self.report.to_json()?)?;
        Ok(path)
    }

    /// Writes `stage{1..5}.png`, `spectrum{1..5}.png`, `ela.png` and `correlation.png`.
    pub fn write_panels(&self, out: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out)?;
        let mut written = Vec::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let path = out.join(name);
            std::fs::write(&path, bytes)?;
            written.push(path);
            Ok(())
        };
        for (i, (stage, spectrum)) in self.stages.iter().zip(&self.spectra).enumerate() {
            put(format!("stage{}.png", i + 1), render_png(stage)?)?;
            put(format!("spectrum{}.png", i + 1), render_png(&spectrum.to_plane())?)?;
        }
        put("ela.png".into(), render_raw_png(&self.ela.plane)?)?;
        // [-1, 1] -> [0, 255]
        let corr = self.correlation.map(|v| (v + 1.0) * 127.5);
        put("correlation.png".into(), render_raw_png(&corr)?)?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plane::RgbImage;

    fn png_bytes(img: &RgbImage) -> Vec<u8> {
        let mut buf = Vec::new();
        image::RgbImage::from_raw(
            img.width() as u32,
            img.height() as u32,
            img.pixels().iter().flatten().copied().collect(),
        )
        .unwrap()
        .write_to(&mut Cursor::new(&mut buf), ImageFormat::Png)
        .unwrap();
        buf
    }

    #[test]
    fn solid_gray_has_no_residual_energy_or_peaks() {
        let img = RgbImage::new(64, 48, vec![[128, 128, 128]; 64 * 48]).unwrap();
        let a = analyze_bytes(&png_bytes(&img), "gray.png", &AnalysisParams::default(), &[]).unwrap();
        let r = &a.report;
        assert_eq!(r.input.analyzed_side, 48);
        assert_eq!(r.input.format, SourceFormat::Png);
        for s in &r.stages {
            assert!(s.peaks.is_empty(), "stage {}", s.id);
            assert_eq!(s.energy, 0.0, "stage {}", s.id);
        }
        assert!(r.fingerprint.as_ref().unwrap().values.iter().all(|&v| v == 0.0));
        assert!(r.classification.is_none());
        assert_eq!(r.classic.clones.count, 0);
    }

    #[test]
    fn params_are_validated() {
        let bad = [
            AnalysisParams { median_window: 4, ..Default::default() },
            AnalysisParams { peak_threshold: 1.0, ..Default::default() },
            AnalysisParams { radial_bands: 32, ..Default::default() },
            AnalysisParams { ela_quality: 0, ..Default::default() },
            AnalysisParams { ela_gain: -1.0, ..Default::default() },
            AnalysisParams { correlation_window: 4, ..Default::default() },
            AnalysisParams { clone_block: 4, ..Default::default() },
            AnalysisParams { clone_similarity: 1.5, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        AnalysisParams::default().validate().unwrap();
    }

    #[test]
    fn small_images_skip_fingerprint() {
        let img = RgbImage::from_fn(20, 20, |x, y| [(x * 12) as u8, (y * 12) as u8, 7]).unwrap();
        let a = analyze_bytes(&png_bytes(&img), "small.png", &AnalysisParams::default(), &[]).unwrap();
        assert!(a.report.fingerprint.is_none());
        assert_eq!(a.report.classic.clones.count, 0);
    }

    #[test]
    fn render_round_trips_extremes() {
        let p = Plane::new(3, 1, vec![-5.0, 0.0, 5.0]).unwrap();
        let png = render_png(&p).unwrap();
        let img = image::load_from_memory(&png).unwrap().to_luma8();
        assert_eq!(img.into_raw(), vec![0, 128, 255]);
    }

    #[test]
    fn energy_helper() {
        assert_eq!(ac_energy(&[3.3; 10]), 0.0);
        assert!((ac_energy(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
