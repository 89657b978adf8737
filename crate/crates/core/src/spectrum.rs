//! Fourier-domain machinery: 2D DFT, centered log-magnitude spectra,
//! radial/angular profiles and anomalous-peak detection.
//!
//! Conventions: the forward transform is unnormalized,
//! `F[u,v] = sum_{x,y} p[x,y] * exp(-2*pi*i*(u*x/W + v*y/H))`, so
//! `sum |F|^2 = W * H * sum p^2`. Complex bins are stored row-major with `u`
//! along the horizontal axis. Centered spectra put DC at `(W/2, H/2)`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Unnormalized forward DFT of a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    width: usize,
    height: usize,
    values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(width: usize, height: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "{} bins for a {width}x{height} spectrum",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Bin at horizontal frequency `u`, vertical frequency `v`.
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.values[v * self.width + u]
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Centered log-magnitude spectrum, `log(1 + |F|)`, DC at `(W/2, H/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Spectrum {
    /// Wraps already-centered non-negative values.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "{} values for a {width}x{height} spectrum",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidRaster("spectrum values must be finite and >= 0".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_plane(&self) -> Plane {
        Plane::from_parts(self.width, self.height, self.values.clone())
    }

    /// Copy with bins at transform rounding-noise level set to zero.
    pub fn denoised(&self) -> Self {
        let floor = self.noise_floor();
        let values = self
            .values
            .iter()
            .map(|&v| if v.exp_m1() <= floor { 0.0 } else { v })
            .collect();
        Self {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// Linear-magnitude level below which a bin is indistinguishable from rounding noise.
    fn noise_floor(&self) -> f64 {
        let max_value = self.values.iter().cloned().fold(0.0, f64::max);
        max_value.exp_m1() * RELATIVE_NOISE_FLOOR
    }

    fn require_square(&self) -> Result<()> {
        if self.width != self.height {
            return Err(Error::NotSquare {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// Per-band mean spectrum value at integer radii from the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub bins: Vec<f64>,
    /// Set once band 0 (DC) has been zeroed for fingerprinting.
    pub dc_excluded: bool,
}

impl RadialProfile {
    pub fn exclude_dc(mut self) -> Self {
        self.bins[0] = 0.0;
        self.dc_excluded = true;
        self
    }
}

/// One detected spectral peak. `(u, v)` are signed offsets from DC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub u: i64,
    pub v: i64,
    pub value: f64,
    pub background: f64,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub threshold: f64,
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn contains(&self, u: i64, v: i64) -> bool {
        self.peaks.iter().any(|p| p.u == u && p.v == v)
    }
}

/// Forward 2D DFT (rows, then columns).
pub fn dft2(p: &Plane) -> Result<ComplexSpectrum> {
    let (w, h) = p.dims();
    if w < 2 || h < 2 {
        return Err(Error::TooSmall { width: w, height: h, min: 2 });
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut data: Vec<Complex64> = p.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();

    let row_fft = planner.plan_fft_forward(w);
    row_fft.process(&mut data);

    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for (y, c) in column.iter_mut().enumerate() {
            *c = data[y * w + x];
        }
        col_fft.process(&mut column);
        for (y, c) in column.iter().enumerate() {
            data[y * w + x] = *c;
        }
    }
    ComplexSpectrum::new(w, h, data)
}

/// Magnitude, `log(1 + |F|)`, then quadrant swap to center DC.
pub fn to_spectrum(f: &ComplexSpectrum) -> Spectrum {
    let (w, h) = (f.width, f.height);
    let mut values = vec![0.0; w * h];
    for v in 0..h {
        let cy = (v + h / 2) % h;
        for u in 0..w {
            let cx = (u + w / 2) % w;
            values[cy * w + cx] = f.get(u, v).norm().ln_1p();
        }
    }
    Spectrum { width: w, height: h, values }
}

/// Convenience: `to_spectrum(dft2(p))`.
pub fn spectrum_of(p: &Plane) -> Result<Spectrum> {
    Ok(to_spectrum(&dft2(p)?))
}

/// Mean spectrum value per radial band.
///
/// A pixel's radius is rounded to an integer, rescaled by `(bands - 1) / (W/2)`
/// and rounded again to pick its band. Pixels beyond the last band (corners)
/// are ignored; empty bands hold 0.
pub fn radial_profile(s: &Spectrum, bands: usize) -> Result<RadialProfile> {
    s.require_square()?;
    if bands < 2 {
        return Err(Error::BadParameter(format!("radial band count {bands} < 2")));
    }
    let (cx, cy) = s.center();
    let r_max = (s.width / 2).max(1) as f64;
    let scale = (bands - 1) as f64 / r_max;
    let mut sums = vec![0.0; bands];
    let mut counts = vec![0usize; bands];
    for y in 0..s.height {
        let dy = y as f64 - cy as f64;
        for x in 0..s.width {
            let dx = x as f64 - cx as f64;
            let radius = dx.hypot(dy).round();
            let band = (radius * scale).round() as usize;
            if band < bands {
                sums[band] += s.get(x, y);
                counts[band] += 1;
            }
        }
    }
    let bins = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(RadialProfile { bins, dc_excluded: false })
}

/// Sector index in `[0, sectors)` for offset `(dx, dy)`, angles folded into `[0, pi)`.
pub(crate) fn sector_of(dx: f64, dy: f64, sectors: usize) -> usize {
    let mut theta = dy.atan2(dx);
    if theta < 0.0 {
        theta += std::f64::consts::PI;
    }
    if theta >= std::f64::consts::PI {
        theta -= std::f64::consts::PI;
    }
    ((theta * sectors as f64 / std::f64::consts::PI).floor() as usize).min(sectors - 1)
}

/// Mean spectrum value per angular sector, excluding the DC 3x3 core.
pub fn angular_profile(s: &Spectrum, sectors: usize) -> Result<Vec<f64>> {
    s.require_square()?;
    if sectors < 4 {
        return Err(Error::BadParameter(format!("sector count {sectors} < 4")));
    }
    let (cx, cy) = s.center();
    let mut sums = vec![0.0; sectors];
    let mut counts = vec![0usize; sectors];
    for y in 0..s.height {
        let dy = y as isize - cy as isize;
        for x in 0..s.width {
            let dx = x as isize - cx as isize;
            if dx.abs() <= 1 && dy.abs() <= 1 {
                continue;
            }
            let k = sector_of(dx as f64, dy as f64, sectors);
            sums[k] += s.get(x, y);
            counts[k] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect())
}

/// Backgrounds below this are treated as this value when forming prominence ratios.
const BACKGROUND_FLOOR: f64 = 1e-12;
/// Bins whose linear magnitude is below this fraction of the spectrum's largest
/// magnitude are transform rounding noise and never count as peaks.
const RELATIVE_NOISE_FLOOR: f64 = 1e-10;
const ANNULUS_RADIUS: isize = 7;

/// Finds bins that stand out from their local spectral background.
///
/// A bin qualifies when it is a strict maximum over its in-bounds 8-neighbors,
/// lies outside the DC 3x3 core, and exceeds `tau` times the median of the
/// 15x15 window minus its central 3x3 (clipped to the spectrum). Bins at the
/// level of floating-point noise are skipped.
pub fn detect_peaks(s: &Spectrum, tau: f64) -> Result<PeakSet> {
    if !(tau > 1.0) || !tau.is_finite() {
        return Err(Error::BadParameter(format!("peak threshold {tau} must be > 1")));
    }
    let (w, h) = (s.width as isize, s.height as isize);
    let (cx, cy) = (s.center().0 as isize, s.center().1 as isize);
    let noise_floor = s.noise_floor();
    let mut peaks = Vec::new();
    let mut annulus = Vec::with_capacity(224);
    for y in 0..h {
        for x in 0..w {
            if (x - cx).abs() <= 1 && (y - cy).abs() <= 1 {
                continue;
            }
            let value = s.get(x as usize, y as usize);
            if value.exp_m1() <= noise_floor {
                continue;
            }
            let strict_max = (-1..=1).all(|dy| {
                (-1..=1).all(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    (dx == 0 && dy == 0)
                        || nx < 0
                        || ny < 0
                        || nx >= w
                        || ny >= h
                        || s.get(nx as usize, ny as usize) < value
                })
            });
            if !strict_max {
                continue;
            }
            annulus.clear();
            for ny in (y - ANNULUS_RADIUS).max(0)..=(y + ANNULUS_RADIUS).min(h - 1) {
                for nx in (x - ANNULUS_RADIUS).max(0)..=(x + ANNULUS_RADIUS).min(w - 1) {
                    if (nx - x).abs() <= 1 && (ny - y).abs() <= 1 {
                        continue;
                    }
                    annulus.push(s.get(nx as usize, ny as usize));
                }
            }
            let background = median(&mut annulus);
            if value > tau * background {
                peaks.push(Peak {
                    u: (x - cx) as i64,
                    v: (y - cy) as i64,
                    value,
                    background,
                    prominence: value / background.max(BACKGROUND_FLOOR),
                });
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.prominence
            .total_cmp(&a.prominence)
            .then(a.v.cmp(&b.v))
            .then(a.u.cmp(&b.u))
    });
    Ok(PeakSet { threshold: tau, peaks })
}

/// Median with the mean-of-middle-pair rule for even counts. Empty input gives 0.
fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
