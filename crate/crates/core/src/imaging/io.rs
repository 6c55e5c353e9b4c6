use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage};

use super::{FootprintMask, ImagingError, Scene};

fn open(path: &Path) -> Result<DynamicImage, ImagingError> {
    let display = path.display().to_string();
    let reader = image::ImageReader::open(path)
        .map_err(|source| ImagingError::Io { path: display.clone(), source })?
        .with_guessed_format()
        .map_err(|source| ImagingError::Io { path: display.clone(), source })?;
    reader.decode().map_err(|e| ImagingError::Decode {
        path: display,
        message: e.to_string(),
    })
}

/// Loads a PNG or TIFF scene as 8-bit RGB. Alpha is dropped; grey or
/// single-band rasters are rejected.
pub fn load_scene(path: &Path, id: impl Into<String>) -> Result<Scene, ImagingError> {
    let img = open(path)?;
    let pixels = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageRgb32F(_)
        | DynamicImage::ImageRgba32F(_) => img.to_rgb8(),
        other => {
            return Err(ImagingError::UnsupportedBands {
                path: path.display().to_string(),
                color: format!("{:?}", other.color()),
            })
        }
    };
    let filename = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Scene::new(id, filename, pixels))
}

/// Loads a pre-rasterized footprint mask; any non-zero pixel is a footprint.
pub fn load_mask(path: &Path) -> Result<FootprintMask, ImagingError> {
    let luma = open(path)?.to_luma8();
    let (w, h) = luma.dimensions();
    Ok(FootprintMask::new(w, h, luma.pixels().map(|p| p.0[0] > 0).collect()))
}

/// PNG bytes for a patch, as sent to vision and embedding backends.
pub fn encode_png(pixels: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    pixels
        .write_to(&mut out, ImageFormat::Png)
        .expect("PNG encoding into memory does not fail");
    out.into_inner()
}
