use std::path::Path;

use image::{Rgb, RgbImage};

use super::BenchError;
use crate::imaging::io::save_rgb;
use crate::imaging::{BinaryMask, Image, ImagingError};

pub const HPE_TINT: [u8; 3] = [255, 105, 180];
pub const EXP_TINT: [u8; 3] = [40, 110, 255];
pub const OVERLAP_TINT: [u8; 3] = [150, 60, 230];

const ALPHA: f64 = 0.55;

fn tint(gray: f64, color: [u8; 3]) -> [u8; 3] {
    color.map(|c| ((1.0 - ALPHA) * gray * 255.0 + ALPHA * f64::from(c)).round() as u8)
}

/// Grayscale base with the HPE, the explanation and their intersection each
/// blended with its own tint.
pub fn overlay_rgb(image: &Image, hpe: &BinaryMask, exp: &BinaryMask) -> Result<RgbImage, BenchError> {
    for m in [hpe, exp] {
        if m.shape() != image.shape() {
            return Err(ImagingError::DimensionMismatch {
                expected: image.shape(),
                actual: m.shape(),
            }
            .into());
        }
    }
    let (h, w) = image.shape();
    let gray = image.intensities();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        let g = gray[r * w + c];
        Rgb(match (hpe.get(r, c), exp.get(r, c)) {
            (true, true) => tint(g, OVERLAP_TINT),
            (true, false) => tint(g, HPE_TINT),
            (false, true) => tint(g, EXP_TINT),
            (false, false) => [(g * 255.0).round() as u8; 3],
        })
    }))
}

pub fn render_overlay(image: &Image, hpe: &BinaryMask, exp: &BinaryMask, out_png: &Path) -> Result<(), BenchError> {
    Ok(save_rgb(&overlay_rgb(image, hpe, exp)?, out_png)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Rect;
    use std::collections::BTreeSet;

    fn colours(img: &RgbImage) -> BTreeSet<[u8; 3]> {
        img.pixels().map(|p| p.0).collect()
    }

    fn setup() -> (Image, BinaryMask) {
        (Image::filled(8, 8, 1, 0.4), BinaryMask::from_rect(8, 8, Rect::new(2, 2, 5, 5)))
    }

    #[test]
    fn identical_masks_show_only_overlap() {
        let (img, hpe) = setup();
        let out = overlay_rgb(&img, &hpe, &hpe).unwrap();
        assert_eq!(colours(&out), BTreeSet::from([[102; 3], tint(0.4, OVERLAP_TINT)]));
    }

    #[test]
    fn empty_explanation_shows_only_hpe() {
        let (img, hpe) = setup();
        let out = overlay_rgb(&img, &hpe, &BinaryMask::empty(8, 8)).unwrap();
        assert_eq!(colours(&out), BTreeSet::from([[102; 3], tint(0.4, HPE_TINT)]));
    }

    #[test]
    fn disjoint_masks_show_both_tints() {
        let (img, hpe) = setup();
        let exp = BinaryMask::from_rect(8, 8, Rect::new(6, 6, 8, 8));
        let out = overlay_rgb(&img, &hpe, &exp).unwrap();
        assert_eq!(
            colours(&out),
            BTreeSet::from([[102; 3], tint(0.4, HPE_TINT), tint(0.4, EXP_TINT)])
        );
    }

    #[test]
    fn rendering_is_deterministic_and_checks_shape() {
        let (img, hpe) = setup();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        render_overlay(&img, &hpe, &hpe, &a).unwrap();
        render_overlay(&img, &hpe, &hpe, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        assert!(overlay_rgb(&img, &BinaryMask::empty(8, 9), &hpe).is_err());
    }
}
