//! PNG ingestion/export and the `MRXS` saliency grid format.
//!
//! `MRXS` layout: the 4 magic bytes `MRXS`, height and width as little-endian
//! `u32`, then `height·width` little-endian `f32` values, row-major.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use thiserror::Error;

use super::{BinaryMask, Image, ImagingError, SaliencyMap};

pub const SALIENCY_MAGIC: &[u8; 4] = b"MRXS";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("bad saliency file: {0}")]
    BadSaliency(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn decode(path: &Path) -> Result<DynamicImage, IoError> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => IoError::Io {
            path: path.display().to_string(),
            source: e,
        },
        other => IoError::Decode {
            path: path.display().to_string(),
            source: other,
        },
    })
}

/// Loads an 8-bit grayscale or RGB PNG; intensities are divided by 255.
/// Alpha channels are dropped.
pub fn load_image(path: &Path) -> Result<Image, IoError> {
    let dynamic = decode(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let is_gray = matches!(
        dynamic.color(),
        image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16
    );
    if is_gray {
        let gray = dynamic.to_luma8();
        let data = gray.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Ok(Image::new(h, w, 1, data)?)
    } else {
        let rgb = dynamic.to_rgb8();
        let data = rgb.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Ok(Image::new(h, w, 3, data)?)
    }
}

/// Loads a mask PNG: any nonzero channel marks the pixel as set.
pub fn load_mask(path: &Path) -> Result<BinaryMask, IoError> {
    let rgba = decode(path)?.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let bits = rgba
        .pixels()
        .map(|p| p.0[..3].iter().any(|&v| v != 0))
        .collect();
    Ok(BinaryMask::new(h, w, bits)?)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_image(image: &Image, path: &Path) -> Result<(), IoError> {
    let (h, w) = (image.height() as u32, image.width() as u32);
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_u8(v)).collect();
    let result = if image.channels() == 1 {
        GrayImage::from_raw(w, h, bytes).map(|b| b.save(path))
    } else {
        RgbImage::from_raw(w, h, bytes).map(|b| b.save(path))
    };
    write_result(path, result)
}

/// Writes a mask as an 8-bit grayscale PNG (0 / 255).
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), IoError> {
    let (h, w) = (mask.height() as u32, mask.width() as u32);
    let bytes = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let result = ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(w, h, bytes).map(|b| b.save(path));
    write_result(path, result)
}

pub(crate) fn save_rgb(img: &RgbImage, path: &Path) -> Result<(), IoError> {
    write_result(path, Some(img.save(path)))
}

fn write_result(path: &Path, result: Option<image::ImageResult<()>>) -> Result<(), IoError> {
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(image::ImageError::IoError(source))) => Err(IoError::Io {
            path: path.display().to_string(),
            source,
        }),
        Some(Err(source)) => Err(IoError::Decode {
            path: path.display().to_string(),
            source,
        }),
        None => unreachable!("buffer length always matches dimensions"),
    }
}

pub fn encode_saliency(map: &SaliencyMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * map.values().len());
    out.extend_from_slice(SALIENCY_MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_saliency(mut bytes: &[u8]) -> Result<SaliencyMap, IoError> {
    let mut header = [0u8; 12];
    bytes
        .read_exact(&mut header)
        .map_err(|_| IoError::BadSaliency("truncated header".into()))?;
    if &header[..4] != SALIENCY_MAGIC {
        return Err(IoError::BadSaliency("missing MRXS magic".into()));
    }
    let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if bytes.len() != h * w * 4 {
        return Err(IoError::BadSaliency(format!(
            "expected {} payload bytes for {h}x{w}, found {}",
            h * w * 4,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Ok(SaliencyMap::new(h, w, values)?)
}

pub fn save_saliency(map: &SaliencyMap, path: &Path) -> Result<(), IoError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&encode_saliency(map)).map_err(io_err(path))
}

pub fn load_saliency(path: &Path) -> Result<SaliencyMap, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_saliency(&bytes)
}

/// "Hot" colour ramp (black → red → yellow → white) over the min–max range.
pub fn heat_rgb(map: &SaliencyMap) -> RgbImage {
    let (lo, hi) = map.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(map.width() as u32, map.height() as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        let t = ((map.values()[i] - lo) / span).clamp(0.0, 1.0) * 3.0;
        let r = t.min(1.0);
        let g = (t - 1.0).clamp(0.0, 1.0);
        let b = (t - 2.0).clamp(0.0, 1.0);
        *px = Rgb([to_u8(r), to_u8(g), to_u8(b)]);
    }
    img
}

pub fn save_heat(map: &SaliencyMap, path: &Path) -> Result<(), IoError> {
    save_rgb(&heat_rgb(map), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saliency_bytes_round_trip() {
        let map = SaliencyMap::new(2, 3, vec![0.0, 1.5, -2.0, 0.25, 3.0, 7.0]).unwrap();
        let bytes = encode_saliency(&map);
        assert_eq!(&bytes[..4], b"MRXS");
        assert_eq!(&bytes[4..12], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 24);
        assert_eq!(decode_saliency(&bytes).unwrap(), map);
    }

    #[test]
    fn saliency_decode_rejects_garbage() {
        assert!(decode_saliency(b"MRX").is_err());
        assert!(decode_saliency(b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0").is_err());
        assert!(decode_saliency(b"MRXS\x01\0\0\0\x02\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn png_round_trips_at_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(4, 5, |r, c| ((r * 5 + c) * 12) as f64 / 255.0);
        let path = dir.path().join("img.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels(), 1);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-9);
        }

        let mask = BinaryMask::from_pixels(4, 5, &[(0, 0), (3, 4)]);
        let mpath = dir.path().join("mask.png");
        save_mask(&mask, &mpath).unwrap();
        assert_eq!(load_mask(&mpath).unwrap(), mask);
    }

    #[test]
    fn rgb_png_loads_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let rgb = RgbImage::from_raw(2, 1, vec![255, 0, 0, 0, 0, 51]).unwrap();
        rgb.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (1, 2, 3));
        assert!((img.get(0, 1, 2) - 0.2).abs() < 1e-12);
        // Masks treat any nonzero channel as set.
        let mask = load_mask(&path).unwrap();
        assert_eq!(mask.bits(), &[true, true]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_image(Path::new("/nonexistent/x.png")),
            Err(IoError::Io { .. })
        ));
    }
}
