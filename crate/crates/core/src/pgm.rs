//! Binary PGM/PPM (P5/P6) reading and writing, and feature-map rendering.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An 8-bit image with 1 (gray) or 3 (RGB, interleaved) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height || width == 0 || height == 0 {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: format!("{} pixels for a {width}x{height} image", pixels.len()),
            });
        }
        Ok(Image { width, height, channels: 1, pixels })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Parse("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let channels = match token()?.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(Error::Parse(format!("unsupported image magic `{other}`"))),
        };
        let num = |t: String| t.parse::<usize>().map_err(|e| Error::Parse(format!("image header `{t}`: {e}")));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval != 255 {
            return Err(Error::Parse(format!("only maxval 255 is supported (got {maxval})")));
        }
        // exactly one whitespace byte separates the header from the raster
        let start = pos + 1;
        let len = width * height * channels;
        let pixels = bytes
            .get(start..start + len)
            .ok_or_else(|| Error::Parse(format!("expected {len} pixel bytes")))?
            .to_vec();
        Ok(Image { width, height, channels, pixels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::decode(&bytes)
    }

    /// `(1, C, H, W)` tensor with values scaled into `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let (c, h, w) = (self.channels, self.height, self.width);
        Tensor::from_fn(vec![1, c, h, w], |i| {
            let ch = i / (h * w);
            let px = i % (h * w);
            T::lit(self.pixels[px * c + ch] as f64 / 255.0)
        })
    }
}

/// Renders one feature map: zero is white, larger magnitudes are darker,
/// scaled by the map's largest magnitude. An all-zero map is all white.
pub fn render_feature_map<T: Scalar>(values: &[T]) -> Vec<u8> {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
    values
        .iter()
        .map(|v| {
            if peak == 0.0 {
                255
            } else {
                (255.0 - (255.0 * v.as_f64().abs() / peak).round()) as u8
            }
        })
        .collect()
}

/// Writes one PGM per channel of image `n` in `maps` (rank 4) as
/// `<dir>/<prefix>_chNN.pgm`, returning the paths in channel order.
pub fn write_feature_maps<T: Scalar>(
    maps: &Tensor<T>,
    n: usize,
    dir: &Path,
    prefix: &str,
) -> Result<Vec<std::path::PathBuf>> {
    let [batch, c, h, w] = maps.dims4("write_feature_maps")?;
    if n >= batch {
        return Err(Error::InvalidConfig(format!("image {n} not in batch of {batch}")));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let digits = c.to_string().len().max(2);
    let mut paths = Vec::with_capacity(c);
    for ch in 0..c {
        let start = (n * c + ch) * h * w;
        let img = Image::gray(w, h, render_feature_map(&maps.data()[start..start + h * w]))?;
        let path = dir.join(format!("{prefix}_ch{ch:0digits$}.pgm"));
        img.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let img = Image::gray(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let bytes = img.encode();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 1, 2, 3, 4, 5]);
        assert_eq!(Image::decode(&bytes).unwrap(), img);
    }

    #[test]
    fn decodes_comments_and_ppm() {
        let mut bytes = b"P6 # rgb\n# another\n2 1 255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        let img = Image::decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 3));
        let t: Tensor<f64> = img.to_tensor().unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.at4(0, 1, 0, 1), 50.0 / 255.0);
        assert!(Image::decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Image::decode(b"P3\n1 1\n255\n0 0 0").is_err());
    }

    #[test]
    fn zero_is_white_and_peak_is_black() {
        assert_eq!(render_feature_map(&[0.0f32, 0.5, 1.0, -1.0]), vec![255, 127, 0, 0]);
        assert_eq!(render_feature_map(&[0.0f64; 5]), vec![255; 5]);
    }

    #[test]
    fn writes_one_file_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let maps = Tensor::<f32>::from_fn(vec![1, 3, 4, 5], |i| i as f32).unwrap();
        let paths = write_feature_maps(&maps, 0, dir.path(), "f").unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths[2].ends_with("f_ch02.pgm"));
        let back = Image::load(&paths[0]).unwrap();
        assert_eq!((back.width, back.height), (5, 4));
        assert_eq!(back.pixels[0], 255);
    }
}
