//! Scene rasters cut into grid patches, with labels from footprint masks.

mod io;
mod manifest;

use std::sync::LazyLock;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use crate::taxonomy::ClassLabel;

pub use io::{encode_png, load_mask, load_scene};
pub use manifest::{Manifest, ManifestRow, Truth};

pub const BUILDINGS: &str = "Buildings";
pub const NO_BUILDINGS: &str = "No Buildings";

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("grid must have at least one row and one column, got {rows}x{cols}")]
    EmptyGrid { rows: u32, cols: u32 },
    #[error("grid {rows}x{cols} is finer than the {height}x{width} scene")]
    GridTooFine { rows: u32, cols: u32, height: u32, width: u32 },
    #[error("mask is {got:?} but scene is {expected:?} (width, height)")]
    MaskMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: String, message: String },
    #[error("{path}: only RGB(A) rasters are supported, found {color}")]
    UnsupportedBands { path: String, color: String },
    #[error("manifest {path}, record {record}: {message}")]
    Manifest { path: String, record: usize, message: String },
    #[error("no scene versions to choose from")]
    NoVersions,
}

/// A whole RGB raster and the file it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub filename: String,
    pub timestamp: Option<String>,
    pub pixels: RgbImage,
}

impl Scene {
    pub fn new(id: impl Into<String>, filename: impl Into<String>, pixels: RgbImage) -> Self {
        Self {
            id: id.into(),
            filename: filename.into(),
            timestamp: None,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

/// Pixel rectangle of a patch inside its scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchBounds {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PatchBounds {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch {
    pub scene_id: String,
    /// `(row, col)` in the tiling grid.
    pub grid_pos: (u32, u32),
    pub bounds: PatchBounds,
    /// `(width, height)` of the parent scene.
    pub scene_size: (u32, u32),
    pub pixels: RgbImage,
    pub geo_context: Option<String>,
    pub ground_truth: Option<ClassLabel>,
}

impl ImagePatch {
    pub fn id(&self) -> String {
        format!("{}/r{}c{}", self.scene_id, self.grid_pos.0, self.grid_pos.1)
    }
}

/// Splits `len` pixels into `parts` spans; the first `len % parts` spans are
/// one pixel longer. Returns `(start, size)` pairs.
pub fn axis_spans(len: u32, parts: u32) -> Vec<(u32, u32)> {
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let size = base + u32::from(i < extra);
            let span = (start, size);
            start += size;
            span
        })
        .collect()
}

/// Cuts a scene into `rows x cols` patches in row-major order.
pub fn tile(scene: &Scene, grid: (u32, u32)) -> Result<Vec<ImagePatch>, ImagingError> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 {
        return Err(ImagingError::EmptyGrid { rows, cols });
    }
    let (width, height) = (scene.width(), scene.height());
    if rows > height || cols > width {
        return Err(ImagingError::GridTooFine { rows, cols, height, width });
    }
    let geo_context = extract_geo_context(&scene.filename);
    let row_spans = axis_spans(height, rows);
    let col_spans = axis_spans(width, cols);

    let mut patches = Vec::with_capacity((rows * cols) as usize);
    for (r, &(y, h)) in row_spans.iter().enumerate() {
        for (c, &(x, w)) in col_spans.iter().enumerate() {
            let pixels = image::imageops::crop_imm(&scene.pixels, x, y, w, h).to_image();
            patches.push(ImagePatch {
                scene_id: scene.id.clone(),
                grid_pos: (r as u32, c as u32),
                bounds: PatchBounds { x, y, width: w, height: h },
                scene_size: (width, height),
                pixels,
                geo_context: geo_context.clone(),
                ground_truth: None,
            });
        }
    }
    Ok(patches)
}

/// Boolean building-footprint raster aligned with a scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FootprintMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl FootprintMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), (width as usize) * (height as usize), "mask size");
        Self { width, height, bits }
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![false; (width as usize) * (height as usize)])
    }

    pub fn size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y as usize) * (self.width as usize) + x as usize] = value;
    }
}

/// `Buildings` when any footprint pixel falls inside the patch, else `No Buildings`.
pub fn label_patch(patch: &ImagePatch, mask: &FootprintMask) -> Result<ClassLabel, ImagingError> {
    if mask.size() != patch.scene_size {
        return Err(ImagingError::MaskMismatch {
            expected: patch.scene_size,
            got: mask.size(),
        });
    }
    let b = patch.bounds;
    let hit = (b.y..b.y + b.height).any(|y| {
        let row = (y as usize) * (mask.width as usize);
        mask.bits[row + b.x as usize..row + (b.x + b.width) as usize]
            .iter()
            .any(|&on| on)
    });
    let name = if hit { BUILDINGS } else { NO_BUILDINGS };
    Ok(ClassLabel::new(name).expect("constant label"))
}

static GEO_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"L\d+-\d+E-\d+N").expect("valid regex"));

/// Leftmost `L<zoom>-<easting>E-<northing>N` tile token in a filename.
pub fn extract_geo_context(filename: &str) -> Option<String> {
    GEO_TOKEN.find(filename).map(|m| m.as_str().to_owned())
}

/// Index of the version to use for `scene_id`, uniform over `count` and fixed
/// for a given `(seed, scene_id)`.
pub fn pick_index(count: usize, scene_id: &str, seed: u64) -> usize {
    assert!(count > 0, "nothing to pick from");
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(scene_id.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key).random_range(0..count)
}

/// Chooses one timestamped version of a scene.
pub fn pick_timestamp(versions: &[Scene], seed: u64) -> Result<&Scene, ImagingError> {
    let first = versions.first().ok_or(ImagingError::NoVersions)?;
    Ok(&versions[pick_index(versions.len(), &first.id, seed)])
}
