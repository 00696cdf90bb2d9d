use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Image, ImagingError};
use crate::mutants::Segmentation;

/// How occluded pixels are filled when building a mutant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OcclusionStrategy {
    Zero,
    /// Per-channel mean of the whole image.
    GlobalMean,
    /// Per-channel mean of the pixel's segment.
    SegmentMean,
    /// Normalized `window`×`window` box filter; edge pixels average the
    /// truncated window.
    Blur { window: usize },
}

impl OcclusionStrategy {
    /// Blur with the largest odd window not exceeding `window` or the
    /// smaller image side.
    pub fn blur_clamped(window: usize, height: usize, width: usize) -> Self {
        let mut w = window.min(height.min(width)).max(1);
        if w % 2 == 0 {
            w -= 1;
        }
        OcclusionStrategy::Blur { window: w.max(1) }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<(), ImagingError> {
        if let OcclusionStrategy::Blur { window } = *self {
            if window == 0 || window % 2 == 0 {
                return Err(ImagingError::InvalidOcclusion(format!(
                    "blur window must be odd and positive, got {window}"
                )));
            }
            if window > height.min(width) {
                return Err(ImagingError::InvalidOcclusion(format!(
                    "blur window {window} exceeds image side {}",
                    height.min(width)
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for OcclusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OcclusionStrategy::Zero => f.write_str("zero"),
            OcclusionStrategy::GlobalMean => f.write_str("mean"),
            OcclusionStrategy::SegmentMean => f.write_str("segment-mean"),
            OcclusionStrategy::Blur { window } => write!(f, "blur:{window}"),
        }
    }
}

impl FromStr for OcclusionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(OcclusionStrategy::Zero),
            "mean" | "global-mean" => Ok(OcclusionStrategy::GlobalMean),
            "segment-mean" => Ok(OcclusionStrategy::SegmentMean),
            other => {
                let window = other
                    .strip_prefix("blur:")
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| format!("unknown occlusion strategy '{other}'"))?;
                Ok(OcclusionStrategy::Blur { window })
            }
        }
    }
}

/// An image paired with its precomputed fill, so mutants can be produced
/// without recomputing means or blurs per query.
#[derive(Debug, Clone)]
pub struct Occluder<'a> {
    image: &'a Image,
    fill: Vec<f64>,
}

impl<'a> Occluder<'a> {
    pub fn new(
        image: &'a Image,
        strategy: OcclusionStrategy,
        segmentation: Option<&Segmentation>,
    ) -> Result<Self, ImagingError> {
        let (h, w) = image.shape();
        strategy.validate(h, w)?;
        let ch = image.channels();
        let fill = match strategy {
            OcclusionStrategy::Zero => vec![0.0; image.data().len()],
            OcclusionStrategy::GlobalMean => {
                let mut mean = vec![0.0; ch];
                for px in image.data().chunks_exact(ch) {
                    for (m, v) in mean.iter_mut().zip(px) {
                        *m += v;
                    }
                }
                let n = (h * w).max(1) as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                mean.iter().copied().cycle().take(image.data().len()).collect()
            }
            OcclusionStrategy::SegmentMean => {
                let seg = segmentation.ok_or(ImagingError::MissingSegmentation)?;
                if seg.shape() != (h, w) {
                    return Err(ImagingError::DimensionMismatch {
                        expected: (h, w),
                        actual: seg.shape(),
                    });
                }
                let k = seg.segment_count();
                let mut sums = vec![0.0; k * ch];
                let mut counts = vec![0usize; k];
                for (idx, &label) in seg.labels().iter().enumerate() {
                    counts[label] += 1;
                    for (c, v) in image.pixel(idx).iter().enumerate() {
                        sums[label * ch + c] += v;
                    }
                }
                let mut fill = Vec::with_capacity(image.data().len());
                for &label in seg.labels() {
                    for c in 0..ch {
                        fill.push(sums[label * ch + c] / counts[label] as f64);
                    }
                }
                fill
            }
            OcclusionStrategy::Blur { window } => box_blur(image, window),
        };
        Ok(Self { image, fill })
    }

    pub fn image(&self) -> &Image {
        self.image
    }

    /// Keeps pixels where `keep` is set and fills the rest.
    pub fn apply(&self, keep: &BinaryMask) -> Result<Image, ImagingError> {
        self.image.check_mask(keep)?;
        Ok(self.apply_with(|idx| keep.bits()[idx]))
    }

    /// Keeps pixel `idx` when `keep(idx)` holds.
    pub fn apply_with(&self, keep: impl Fn(usize) -> bool) -> Image {
        let ch = self.image.channels();
        let src = self.image.data();
        let mut data = Vec::with_capacity(src.len());
        for idx in 0..self.image.pixel_count() {
            let range = idx * ch..(idx + 1) * ch;
            if keep(idx) {
                data.extend_from_slice(&src[range]);
            } else {
                data.extend_from_slice(&self.fill[range]);
            }
        }
        let (h, w) = self.image.shape();
        Image::from_raw_clamped(h, w, ch, data)
    }

    /// Soft blend `m·image + (1 − m)·fill` with per-pixel weights in `[0, 1]`.
    pub fn blend(&self, weights: &[f64]) -> Image {
        let ch = self.image.channels();
        let src = self.image.data();
        let mut data = Vec::with_capacity(src.len());
        for (idx, &m) in weights.iter().enumerate() {
            for c in 0..ch {
                let i = idx * ch + c;
                data.push(m * src[i] + (1.0 - m) * self.fill[i]);
            }
        }
        let (h, w) = self.image.shape();
        Image::from_raw_clamped(h, w, ch, data)
    }
}

/// Replaces pixels where `keep` is false according to `strategy`.
///
/// `segmentation` is required only for [`OcclusionStrategy::SegmentMean`].
pub fn apply_occlusion(
    image: &Image,
    keep: &BinaryMask,
    strategy: OcclusionStrategy,
    segmentation: Option<&Segmentation>,
) -> Result<Image, ImagingError> {
    image.check_mask(keep)?;
    Occluder::new(image, strategy, segmentation)?.apply(keep)
}

fn box_blur(image: &Image, window: usize) -> Vec<f64> {
    let (h, w) = image.shape();
    let ch = image.channels();
    let half = window / 2;
    let stride = w + 1;
    let mut out = vec![0.0; image.data().len()];
    let mut integral = vec![0.0; (h + 1) * stride];
    for c in 0..ch {
        for r in 0..h {
            let mut row_sum = 0.0;
            for col in 0..w {
                row_sum += image.get(r, col, c);
                integral[(r + 1) * stride + col + 1] = integral[r * stride + col + 1] + row_sum;
            }
        }
        for r in 0..h {
            let r0 = r.saturating_sub(half);
            let r1 = (r + half + 1).min(h);
            for col in 0..w {
                let c0 = col.saturating_sub(half);
                let c1 = (col + half + 1).min(w);
                let sum = integral[r1 * stride + c1] - integral[r0 * stride + c1]
                    - integral[r1 * stride + c0]
                    + integral[r0 * stride + c0];
                out[(r * w + col) * ch + c] = sum / ((r1 - r0) * (c1 - c0)) as f64;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| (r * w + c) as f64 / (h * w) as f64)
    }

    #[test]
    fn keep_all_is_identity() {
        let img = gradient(5, 7);
        for s in [
            OcclusionStrategy::Zero,
            OcclusionStrategy::GlobalMean,
            OcclusionStrategy::Blur { window: 3 },
        ] {
            let out = apply_occlusion(&img, &BinaryMask::full(5, 7), s, None).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn keep_none_zero_gives_black() {
        let img = gradient(4, 4);
        let out =
            apply_occlusion(&img, &BinaryMask::empty(4, 4), OcclusionStrategy::Zero, None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_mean_of_constant_is_constant() {
        let img = Image::filled(6, 6, 3, 0.7);
        let out = apply_occlusion(
            &img,
            &BinaryMask::empty(6, 6),
            OcclusionStrategy::GlobalMean,
            None,
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn blur_matches_direct_window_average() {
        let img = gradient(6, 5);
        let blurred = box_blur(&img, 3);
        for r in 0..6usize {
            for c in 0..5usize {
                let mut sum = 0.0;
                let mut n = 0;
                for rr in r.saturating_sub(1)..=(r + 1).min(5) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(4) {
                        sum += img.get(rr, cc, 0);
                        n += 1;
                    }
                }
                assert!((blurred[r * 5 + c] - sum / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_window_validation() {
        let img = gradient(8, 8);
        let keep = BinaryMask::empty(8, 8);
        for window in [0, 4, 9] {
            assert!(apply_occlusion(&img, &keep, OcclusionStrategy::Blur { window }, None).is_err());
        }
        assert_eq!(
            OcclusionStrategy::blur_clamped(63, 32, 40),
            OcclusionStrategy::Blur { window: 31 }
        );
        assert_eq!(
            OcclusionStrategy::blur_clamped(63, 64, 64),
            OcclusionStrategy::Blur { window: 63 }
        );
    }

    #[test]
    fn dimension_mismatch_and_missing_segmentation() {
        let img = gradient(4, 4);
        assert!(matches!(
            apply_occlusion(&img, &BinaryMask::empty(3, 4), OcclusionStrategy::Zero, None),
            Err(ImagingError::DimensionMismatch { .. })
        ));
        assert_eq!(
            apply_occlusion(&img, &BinaryMask::empty(4, 4), OcclusionStrategy::SegmentMean, None),
            Err(ImagingError::MissingSegmentation)
        );
    }

    #[test]
    fn segment_mean_fills_per_segment() {
        let img = Image::from_fn(2, 4, |_, c| if c < 2 { 0.2 * c as f64 } else { 1.0 });
        let seg = Segmentation::new(2, 4, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        let out = apply_occlusion(
            &img,
            &BinaryMask::empty(2, 4),
            OcclusionStrategy::SegmentMean,
            Some(&seg),
        )
        .unwrap();
        assert!((out.get(0, 0, 0) - 0.1).abs() < 1e-12);
        assert!((out.get(1, 3, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strategy_round_trips_through_text() {
        for s in ["zero", "mean", "segment-mean", "blur:63"] {
            assert_eq!(s.parse::<OcclusionStrategy>().unwrap().to_string(), s);
        }
        assert!("gaussian".parse::<OcclusionStrategy>().is_err());
    }

    proptest! {
        // Re-occluding a mutant with the same occluder changes nothing.
        #[test]
        fn reocclusion_is_idempotent(bits in proptest::collection::vec(any::<bool>(), 36), mean in any::<bool>()) {
            let img = gradient(6, 6);
            let keep = BinaryMask::new(6, 6, bits).unwrap();
            let strategy = if mean { OcclusionStrategy::GlobalMean } else { OcclusionStrategy::Zero };
            let occ = Occluder::new(&img, strategy, None).unwrap();
            let once = occ.apply(&keep).unwrap();
            let fill_from_original = Occluder { image: &once, fill: occ.fill.clone() };
            prop_assert_eq!(fill_from_original.apply(&keep).unwrap(), once.clone());
            if !mean {
                // Zero fill does not depend on the source image at all.
                prop_assert_eq!(apply_occlusion(&once, &keep, strategy, None).unwrap(), once);
            }
        }

        #[test]
        fn kept_pixels_unchanged(bits in proptest::collection::vec(any::<bool>(), 30), window in prop_oneof![Just(1usize), Just(3), Just(5)]) {
            let img = gradient(5, 6);
            let keep = BinaryMask::new(5, 6, bits).unwrap();
            let out = apply_occlusion(&img, &keep, OcclusionStrategy::Blur { window }, None).unwrap();
            for (r, c) in keep.set_pixels() {
                prop_assert_eq!(out.get(r, c, 0), img.get(r, c, 0));
            }
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
