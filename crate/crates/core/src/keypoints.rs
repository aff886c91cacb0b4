//! Farthest point sampling of keypoints inside a segmentation mask.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::panel::{BoundingBox, KeypointSet, MAX_KEYPOINTS};

/// Sampling stops once the farthest remaining candidate is closer than this
/// (normalized coordinates).
pub const FPS_STOP_DISTANCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask has no set pixels")]
    Empty,
    #[error("mask is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    Dimensions { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("cannot read mask {path}: {message}")]
    Read { path: String, message: String },
}

/// Binary object mask over an image, with the object's box when known.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
    pub owner: Option<BoundingBox>,
}

impl RegionMask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), height * width, "mask cell count");
        Self { height, width, cells, owner: None }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let cells = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, cells)
    }

    pub fn with_owner(mut self, owner: BoundingBox) -> Self {
        self.owner = Some(owner);
        self
    }

    /// Load an 8-bit grayscale PGM (P5); nonzero pixels are set.
    pub fn read_pgm(path: &Path) -> Result<Self, MaskError> {
        let read_err = |message: String| MaskError::Read { path: path.display().to_string(), message };
        let img = image::ImageReader::open(path)
            .map_err(|e| read_err(e.to_string()))?
            .with_guessed_format()
            .map_err(|e| read_err(e.to_string()))?
            .decode()
            .map_err(|e| read_err(e.to_string()))?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Self::new(h, w, img.into_raw().into_iter().map(|v| v != 0).collect()))
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Row-major indices of set pixels.
    pub fn set_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i)
    }

    /// Normalized pixel-center coordinates of set pixels, row-major.
    pub fn candidates(&self) -> Vec<[f64; 2]> {
        self.set_pixels()
            .map(|i| {
                let (row, col) = (i / self.width, i % self.width);
                [(col as f64 + 0.5) / self.width as f64, (row as f64 + 0.5) / self.height as f64]
            })
            .collect()
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

/// FPS parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsConfig {
    pub max_points: usize,
    pub stop_distance: f64,
    pub seed: u64,
}

impl Default for FpsConfig {
    fn default() -> Self {
        Self { max_points: MAX_KEYPOINTS, stop_distance: FPS_STOP_DISTANCE, seed: 0 }
    }
}

impl FpsConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Farthest point sampling over the mask's pixel centers.
///
/// The first point is drawn uniformly with a seeded ChaCha8 generator. Each
/// step then takes the candidate with the largest distance to its nearest
/// sampled point (ties to the lowest row-major index) until `max_points`
/// are chosen or that distance falls below `stop_distance`. Points come back
/// in selection order.
pub fn fps_sample(mask: &RegionMask, cfg: &FpsConfig) -> Result<KeypointSet, MaskError> {
    let candidates = mask.candidates();
    if candidates.is_empty() {
        return Err(MaskError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let first = rng.gen_range(0..candidates.len());
    let mut sampled = vec![candidates[first]];
    let mut nearest: Vec<f64> = candidates.iter().map(|&c| distance(c, candidates[first])).collect();

    while sampled.len() < cfg.max_points {
        let mut best = 0;
        for (i, &d) in nearest.iter().enumerate() {
            if d > nearest[best] {
                best = i;
            }
        }
        if nearest[best] < cfg.stop_distance {
            break;
        }
        let chosen = candidates[best];
        sampled.push(chosen);
        for (d, &c) in nearest.iter_mut().zip(&candidates) {
            *d = d.min(distance(c, chosen));
        }
    }
    Ok(KeypointSet::new(sampled))
}
