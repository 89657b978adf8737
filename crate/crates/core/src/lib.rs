//! Frequency-domain fingerprinting and classic forgery checks for detecting
//! and attributing GAN-generated images.
//!
//! The pipeline converts an image to grayscale, derives median/Laplacian
//! residuals, and summarizes their Fourier spectra into a fixed-length
//! [`Fingerprint`]. Fingerprints are enrolled into per-source centroids and
//! classified by cosine similarity. Error Level Analysis, a local correlation
//! map and block-based clone detection complement the spectral view.

pub mod detector;
pub mod error;
pub mod filters;
pub mod fingerprint;
pub mod forensics;
pub mod plane;
pub mod report;
pub mod spectrum;

pub use detector::{anomaly_score, classify, enroll, load_profiles, Classification, SourceProfile};
pub use error::{Error, Result};
pub use filters::{apply_stage, laplacian_filter, median_filter, Kernel, LaplacianKind, PipelineStage, StageParams};
pub use fingerprint::{cosine, fingerprint, Fingerprint, FINGERPRINT_LEN};
pub use forensics::{clone_blocks, correlation_map, ela, CloneMatch, CloneParams, ElaMap};
pub use plane::{center_crop_even_square, load_image, normalize_unit, to_grayscale, Plane, RgbImage, SourceFormat};
pub use report::{analyze_bytes, analyze_file, Analysis, AnalysisParams, AnalysisReport};
pub use spectrum::{angular_profile, detect_peaks, dft2, radial_profile, to_spectrum, ComplexSpectrum, PeakSet, Spectrum};
