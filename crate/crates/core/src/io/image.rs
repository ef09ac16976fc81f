//! 8-bit grayscale image files and block padding.

use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Spatial size of an image before padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Extent {
    pub height: usize,
    pub width: usize,
}

fn format_error(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Loads a PGM or PNG file as a `[1, H, W]` tensor in `[0, 1]`. Colour
/// images are reduced to luminance `0.299 R + 0.587 G + 0.114 B`.
pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| format_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageRgb8(c) => c
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        DynamicImage::ImageRgba8(c) => c
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => {
            return Err(format_error(
                path,
                format!(
                    "unsupported pixel format {:?}; expected 8-bit gray or RGB",
                    other.color()
                ),
            ))
        }
    };
    Tensor::new(&[1, h, w], values.into_iter().map(T::lit).collect())
}

fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Writes a `[1, H, W]` tensor as 8-bit grayscale, clamping to `[0, 1]`.
/// The format follows the extension: `.png`, or `.pgm` (binary P5).
pub fn save_image<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::dim(format!(
            "save_image: expected [1, H, W], got {s:?}"
        )));
    }
    let (h, w) = (s[1] as u32, s[2] as u32);
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let format = ImageFormat::from_path(path).map_err(|e| format_error(path, e))?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let out = std::io::BufWriter::new(file);
    let result = match format {
        ImageFormat::Png => image::codecs::png::PngEncoder::new(out).write_image(
            &bytes,
            w,
            h,
            ExtendedColorType::L8,
        ),
        ImageFormat::Pnm => PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&bytes, w, h, ExtendedColorType::L8),
        other => {
            return Err(format_error(
                path,
                format!("cannot write {other:?}; use .png or .pgm"),
            ))
        }
    };
    result.map_err(|e| Error::io(path, e))
}

/// Image files (`.png`, `.pgm`, `.pnm`) directly inside `dir`, sorted by
/// name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm" | "pnm")) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            message: "no .png or .pgm images found".into(),
        });
    }
    Ok(paths)
}

pub fn load_dir<T: Real>(dir: &Path) -> Result<Vec<Tensor<T>>> {
    list_images(dir)?.iter().map(|p| load_image(p)).collect()
}

/// Index into `0..n` after mirroring about the edges without repeating the
/// edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads the bottom and right of a `[1, H, W]` image up to multiples
/// of `block`, returning the original extent for [`crop_to`].
pub fn pad_to_block<T: Real>(image: &Tensor<T>, block: usize) -> Result<(Tensor<T>, Extent)> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::dim(format!(
            "pad_to_block: expected [1, H, W], got {s:?}"
        )));
    }
    if block == 0 {
        return Err(Error::config("block_size", "must be positive"));
    }
    let (h, w) = (s[1], s[2]);
    let (ph, pw) = (h.div_ceil(block) * block, w.div_ceil(block) * block);
    let src = image.data();
    let padded = Tensor::from_fn(&[1, ph, pw], |k| {
        src[reflect(k / pw, h) * w + reflect(k % pw, w)]
    });
    Ok((
        padded,
        Extent {
            height: h,
            width: w,
        },
    ))
}

/// Top-left `extent` of a `[1, H, W]` image.
pub fn crop_to<T: Real>(image: &Tensor<T>, extent: Extent) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || s[1] < extent.height || s[2] < extent.width {
        return Err(Error::dim(format!(
            "crop_to: cannot take {extent:?} from {s:?}"
        )));
    }
    Ok(crate::train::crop(image, 0, 0, extent.height, extent.width))
}
