//! Activation-magnitude maps written as binary PGM (P5) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, Scalar, Tensor};

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// `P5\n<W> <H>\n255\n` followed by the pixel bytes.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Reads exactly the layout written by [`GrayImage::to_pgm`].
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("pgm: {m}"));
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        for _ in 0..3 {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated header"))?;
            fields.push(std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not text"))?);
            pos += end + 1;
        }
        if fields[0] != "P5" || fields[2] != "255" {
            return Err(bad("expected P5 with maxval 255"));
        }
        let dims: Vec<usize> = fields[1]
            .split(' ')
            .map(|s| s.parse().map_err(|_| bad("bad dimensions")))
            .collect::<Result<_>>()?;
        let [width, height] = dims[..] else {
            return Err(bad("bad dimensions"));
        };
        let n = width.checked_mul(height).ok_or_else(|| bad("dimensions overflow"))?;
        if width == 0 || height == 0 || bytes.len() - pos != n {
            return Err(bad("pixel count does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            pixels: bytes[pos..].to_vec(),
        })
    }
}

/// Mean absolute activation over channels at each site of a `[1, C, H, W]`
/// map, min-max scaled to 0..=255. A map with no dynamic range is mid-gray.
pub fn activation_heatmap<T: Scalar>(t: &Tensor<T>) -> Result<GrayImage> {
    if t.rank() != 4 || t.shape()[0] != 1 {
        return Err(Error::shape("heatmap", "[1, C, H, W]", fmt_shape(t.shape())));
    }
    let (_, c, h, w) = t.dims4()?;
    let plane = h * w;
    let data = t.data();
    let mags: Vec<f64> = (0..plane)
        .map(|i| {
            (0..c)
                .map(|ch| data[ch * plane + i].to_f64_lossless().abs())
                .sum::<f64>()
                / c as f64
        })
        .collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = if hi > lo {
        mags.iter()
            .map(|m| ((m - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![128; plane]
    };
    Ok(GrayImage {
        width: w,
        height: h,
        pixels,
    })
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.to_pgm()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_mid_gray() {
        let t = Tensor::<f32>::fill(&[1, 3, 2, 4], -0.7).unwrap();
        let img = activation_heatmap(&t).unwrap();
        assert_eq!((img.width, img.height), (4, 2));
        assert!(img.pixels.iter().all(|&p| p == 128));
    }

    #[test]
    fn hot_pixel() {
        let mut t = Tensor::<f64>::zeros(&[1, 2, 3, 3]).unwrap();
        t.data_mut()[4] = -5.0;
        let img = activation_heatmap(&t).unwrap();
        let mut want = vec![0u8; 9];
        want[4] = 255;
        assert_eq!(img.pixels, want);
        let pgm = img.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 3\n255\n"));
        assert_eq!(pgm.len(), 11 + 9);
        assert_eq!(GrayImage::from_pgm(&pgm).unwrap(), img);
    }

    #[test]
    fn rejects_bad_rank_or_batch() {
        assert!(activation_heatmap(&Tensor::<f32>::zeros(&[2, 1, 2, 2]).unwrap()).is_err());
        assert!(activation_heatmap(&Tensor::<f32>::zeros(&[1, 2, 2]).unwrap()).is_err());
    }
}
