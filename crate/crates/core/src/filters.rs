//! Convolutional residual stages: median, Laplacian, their composition and sum.
//!
//! Every filter uses replicate (clamp-to-edge) padding and returns a plane of
//! the input's dimensions. Per-pixel arithmetic runs in a fixed order, so row
//! parallelism never changes a result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Square convolution kernel with odd side, taps row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::BadKernel(format!("size {size} is not odd")));
        }
        if taps.len() != size * size {
            return Err(Error::BadKernel(format!("{} taps for size {size}", taps.len())));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::BadKernel("non-finite tap".into()));
        }
        Ok(Self { size, taps })
    }

    pub fn identity() -> Self {
        Self { size: 1, taps: vec![1.0] }
    }

    /// `[[0,1,0],[1,-4,1],[0,1,0]]`
    pub fn laplacian4() -> Self {
        Self {
            size: 3,
            taps: vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0],
        }
    }

    /// `[[1,1,1],[1,-8,1],[1,1,1]]`
    pub fn laplacian8() -> Self {
        Self {
            size: 3,
            taps: vec![1.0, 1.0, 1.0, 1.0, -8.0, 1.0, 1.0, 1.0, 1.0],
        }
    }

    pub fn box_filter(size: usize) -> Result<Self> {
        let n = (size * size) as f64;
        Self::new(size, vec![1.0 / n; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Laplacian stencil choice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    #[default]
    FourNeighbor,
    EightNeighbor,
}

impl LaplacianKind {
    pub fn kernel(self) -> Kernel {
        match self {
            Self::FourNeighbor => Kernel::laplacian4(),
            Self::EightNeighbor => Kernel::laplacian8(),
        }
    }
}

/// The five processing stages, numbered as in the analysis panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Gray = 1,
    Median = 2,
    Laplacian = 3,
    LaplacianOfMedian = 4,
    MedianPlusLaplacian = 5,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 5] = [
        Self::Gray,
        Self::Median,
        Self::Laplacian,
        Self::LaplacianOfMedian,
        Self::MedianPlusLaplacian,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gray => "gray",
            Self::Median => "median",
            Self::Laplacian => "laplacian",
            Self::LaplacianOfMedian => "laplacian_of_median",
            Self::MedianPlusLaplacian => "median_plus_laplacian",
        }
    }
}

/// Parameters shared by the residual stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageParams {
    pub median_window: usize,
    pub laplacian: LaplacianKind,
}

impl Default for StageParams {
    fn default() -> Self {
        Self {
            median_window: 3,
            laplacian: LaplacianKind::FourNeighbor,
        }
    }
}

impl StageParams {
    pub fn with_window(median_window: usize) -> Self {
        Self {
            median_window,
            ..Self::default()
        }
    }
}

/// Exact `k x k` median under replicate padding. `k = 1` is the identity.
pub fn median_filter(p: &Plane, k: usize) -> Result<Plane> {
    let (w, h) = p.dims();
    if k == 0 || k % 2 == 0 {
        return Err(Error::BadWindow {
            size: k,
            reason: "median window must be odd and positive".into(),
        });
    }
    if k > w.min(h) {
        return Err(Error::BadWindow {
            size: k,
            reason: format!("larger than {w}x{h} plane"),
        });
    }
    if k == 1 {
        return Ok(p.clone());
    }
    let r = (k / 2) as isize;
    let mid = k * k / 2;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut window = Vec::with_capacity(k * k);
        for (x, slot) in row.iter_mut().enumerate() {
            window.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    window.push(p.get_clamped(x as isize + dx, y as isize + dy));
                }
            }
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            *slot = *m;
        }
    });
    Ok(Plane::from_parts(w, h, out))
}

/// Direct spatial convolution (kernel flipped) with replicate padding.
///
/// Taps are accumulated in row-major kernel order, which keeps the response of
/// a zero-sum kernel on a flat field at exactly zero.
pub fn convolve(p: &Plane, kern: &Kernel) -> Result<Plane> {
    let (w, h) = p.dims();
    if kern.size > w.min(h) {
        return Err(Error::BadKernel(format!(
            "kernel size {} exceeds {w}x{h} plane",
            kern.size
        )));
    }
    let r = (kern.size / 2) as isize;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, ky) in (-r..=r).enumerate() {
                for (j, kx) in (-r..=r).enumerate() {
                    // flipped: tap (i, j) meets pixel (x - kx, y - ky)
                    let tap = kern.taps[i * kern.size + j];
                    acc += tap * p.get_clamped(x as isize - kx, y as isize - ky);
                }
            }
            *slot = acc;
        }
    });
    Plane::new(w, h, out)
}

/// 4-neighbor Laplacian with replicate padding.
pub fn laplacian_filter(p: &Plane) -> Result<Plane> {
    laplacian_filter_with(p, LaplacianKind::FourNeighbor)
}

pub fn laplacian_filter_with(p: &Plane, kind: LaplacianKind) -> Result<Plane> {
    let (w, h) = p.dims();
    if w < 3 || h < 3 {
        return Err(Error::TooSmall { width: w, height: h, min: 3 });
    }
    convolve(p, &kind.kernel())
}

/// Produces one pipeline stage from the stage-1 grayscale plane.
pub fn apply_stage(gray: &Plane, stage: PipelineStage, params: &StageParams) -> Result<Plane> {
    let k = params.median_window;
    let lap = |p: &Plane| laplacian_filter_with(p, params.laplacian);
    match stage {
        PipelineStage::Gray => Ok(gray.clone()),
        PipelineStage::Median => median_filter(gray, k),
        PipelineStage::Laplacian => lap(gray),
        PipelineStage::LaplacianOfMedian => lap(&median_filter(gray, k)?),
        PipelineStage::MedianPlusLaplacian => {
            let median = median_filter(gray, k)?;
            median.zip_with(&lap(gray)?, |a, b| a + b)
        }
    }
}

/// All five stages, computing the shared median and Laplacian once.
pub fn apply_all_stages(gray: &Plane, params: &StageParams) -> Result<[Plane; 5]> {
    let median = median_filter(gray, params.median_window)?;
    let lap = laplacian_filter_with(gray, params.laplacian)?;
    let lap_of_median = laplacian_filter_with(&median, params.laplacian)?;
    let sum = median.zip_with(&lap, |a, b| a + b)?;
    Ok([gray.clone(), median, lap, lap_of_median, sum])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut impl Rng, w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |_, _| rng.gen_range(0.0..255.0))
    }

    fn impulse5() -> Plane {
        Plane::from_fn(5, 5, |x, y| if (x, y) == (2, 2) { 1.0 } else { 0.0 })
    }

    // Sort-the-whole-window oracle, independent of select_nth.
    fn median_oracle(p: &Plane, k: usize) -> Plane {
        let r = (k / 2) as isize;
        Plane::from_fn(p.width(), p.height(), |x, y| {
            let mut win = Vec::new();
            for yy in y as isize - r..=y as isize + r {
                for xx in x as isize - r..=x as isize + r {
                    win.push(p.get_clamped(xx, yy));
                }
            }
            win.sort_by(|a, b| a.partial_cmp(b).unwrap());
            win[win.len() / 2]
        })
    }

    // Pads explicitly, then correlates with a flipped copy of the kernel.
    fn convolve_oracle(p: &Plane, size: usize, taps: &[f64]) -> Plane {
        let r = size / 2;
        let (w, h) = p.dims();
        let pw = w + 2 * r;
        let mut padded = vec![0.0; pw * (h + 2 * r)];
        for py in 0..h + 2 * r {
            for px in 0..pw {
                let sx = (px as isize - r as isize).clamp(0, w as isize - 1) as usize;
                let sy = (py as isize - r as isize).clamp(0, h as isize - 1) as usize;
                padded[py * pw + px] = p.get(sx, sy);
            }
        }
        let mut flipped = taps.to_vec();
        flipped.reverse();
        Plane::from_fn(w, h, |x, y| {
            let mut s = 0.0;
            for i in 0..size {
                for j in 0..size {
                    s += flipped[i * size + j] * padded[(y + i) * pw + x + j];
                }
            }
            s
        })
    }

    #[test]
    fn median_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_plane(&mut rng, 9, 7);
        assert_eq!(median_filter(&p, 1).unwrap(), p);
        assert!(median_filter(&impulse5(), 3).unwrap().values().iter().all(|&v| v == 0.0));

        let p = random_plane(&mut rng, 32, 32);
        assert_eq!(median_filter(&p, 3).unwrap(), median_oracle(&p, 3));
    }

    #[test]
    fn median_rejects_bad_windows() {
        let p = Plane::constant(4, 6, 1.0);
        for k in [0, 2, 5] {
            assert!(matches!(median_filter(&p, k), Err(Error::BadWindow { .. })), "k={k}");
        }
        assert!(median_filter(&p, 3).is_ok());
    }

    #[test]
    fn laplacian_examples() {
        let c = Plane::constant(6, 5, 37.25);
        assert!(laplacian_filter(&c).unwrap().values().iter().all(|&v| v == 0.0));

        let l = laplacian_filter(&impulse5()).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expect = match (x as i32 - 2, y as i32 - 2) {
                    (0, 0) => -4.0,
                    (0, 1) | (0, -1) | (1, 0) | (-1, 0) => 1.0,
                    _ => 0.0,
                };
                assert_eq!(l.get(x, y), expect, "({x},{y})");
            }
        }

        let ramp = Plane::from_fn(9, 8, |x, y| (x + y) as f64);
        let l = laplacian_filter(&ramp).unwrap();
        let oracle = convolve_oracle(&ramp, 3, Kernel::laplacian4().taps());
        for y in 1..7 {
            for x in 1..8 {
                assert_eq!(l.get(x, y), 0.0);
                assert_eq!(oracle.get(x, y), 0.0);
            }
        }

        assert!(matches!(
            laplacian_filter(&Plane::constant(2, 9, 0.0)),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn convolve_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_plane(&mut rng, 8, 8);
        assert_eq!(convolve(&p, &Kernel::identity()).unwrap(), p);

        let c = Plane::constant(8, 8, 3.0);
        let boxed = convolve(&c, &Kernel::box_filter(3).unwrap()).unwrap();
        assert!(boxed.values().iter().all(|&v| (v - 3.0).abs() < 1e-12));

        let taps: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kern = Kernel::new(3, taps.clone()).unwrap();
        let got = convolve(&p, &kern).unwrap();
        let want = convolve_oracle(&p, 3, &taps);
        for (a, b) in got.values().iter().zip(want.values()) {
            assert!((a - b).abs() <= 1e-12);
        }

        assert!(Kernel::new(2, vec![0.0; 4]).is_err());
        assert!(Kernel::new(3, vec![0.0; 8]).is_err());
        let big = Kernel::box_filter(5).unwrap();
        assert!(matches!(convolve(&Plane::constant(4, 4, 1.0), &big), Err(Error::BadKernel(_))));
    }

    #[test]
    fn laplacian_is_convolve_with_pinned_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_plane(&mut rng, 17, 13);
        assert_eq!(laplacian_filter(&p).unwrap(), convolve(&p, &Kernel::laplacian4()).unwrap());
    }

    #[test]
    fn stage_examples() {
        let params = StageParams::default();
        let c = Plane::constant(7, 7, 91.5);
        assert_eq!(apply_stage(&c, PipelineStage::MedianPlusLaplacian, &params).unwrap(), c);
        assert!(apply_stage(&impulse5(), PipelineStage::LaplacianOfMedian, &params)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_plane(&mut rng, 16, 16);
        let got = apply_stage(&p, PipelineStage::MedianPlusLaplacian, &params).unwrap();
        let m = median_oracle(&p, 3);
        let l = convolve_oracle(&p, 3, Kernel::laplacian4().taps());
        for i in 0..256 {
            assert!((got.values()[i] - (m.values()[i] + l.values()[i])).abs() <= 1e-12);
        }

        let all = apply_all_stages(&p, &params).unwrap();
        for (stage, plane) in PipelineStage::ALL.iter().zip(&all) {
            assert_eq!(&apply_stage(&p, *stage, &params).unwrap(), plane);
        }
    }

    #[test]
    fn stage_ids_round_trip() {
        for s in PipelineStage::ALL {
            assert_eq!(PipelineStage::from_id(s.id()), Some(s));
        }
        assert_eq!(PipelineStage::from_id(0), None);
        assert_eq!(PipelineStage::from_id(6), None);
    }

    fn arb_int_plane() -> impl Strategy<Value = Plane> {
        (3usize..14, 3usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..=255, w * h)
                .prop_map(move |v| Plane::new(w, h, v.into_iter().map(f64::from).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn median_values_come_from_window(p in arb_int_plane(), k in prop::sample::select(vec![1usize, 3])) {
            let m = median_filter(&p, k).unwrap();
            let r = (k / 2) as isize;
            for y in 0..p.height() {
                for x in 0..p.width() {
                    let v = m.get(x, y);
                    let mut found = false;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            found |= p.get_clamped(x as isize + dx, y as isize + dy) == v;
                        }
                    }
                    prop_assert!(found);
                }
            }
        }

        #[test]
        fn laplacian_rejects_dc(p in arb_int_plane(), c in -300i32..300) {
            let shifted = p.map(|v| v + f64::from(c));
            prop_assert_eq!(laplacian_filter(&shifted).unwrap(), laplacian_filter(&p).unwrap());
        }

        #[test]
        fn median_shift_equivariant(p in arb_int_plane(), c in -1e3f64..1e3) {
            let lhs = median_filter(&p.map(|v| v + c), 3).unwrap();
            let rhs = median_filter(&p, 3).unwrap().map(|v| v + c);
            prop_assert_eq!(lhs, rhs);
        }
    }
}
