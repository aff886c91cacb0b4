//! Encodes a panel into a latent-resolution condition map and a
//! cross-attention restriction mask.

mod attention;
mod formats;
mod text;

pub use attention::{build_attention_mask, locate_description_tokens, AttentionMask, ConceptSpan, PatchGrid, TokenSpan};
pub use formats::{read_attention_mask, read_condition, read_weights, write_attention_mask, write_condition, write_weights, FormatError};
pub use text::{HashEmbedder, TextEmbedder};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::edit::LatentTensor;
use crate::panel::{BinaryGrid, BoundingBox, ColorSet, ConceptId, KeypointSet, SemanticPanel, PALETTE_SIZE};

/// Image-to-latent downsampling factor.
pub const LATENT_SCALE: usize = 8;
/// Keypoint disk radius, in latent cells.
pub const KEYPOINT_RADIUS: f64 = 6.0;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("image size {width}x{height} is not divisible by {LATENT_SCALE}")]
    Indivisible { width: usize, height: usize },
    #[error("weights/config mismatch: {0}")]
    Config(String),
}

/// Latent spatial layout plus channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// Grid for an image of `width` x `height` pixels; both must be
    /// positive multiples of 8.
    pub fn for_image(width: usize, height: usize, channels: usize) -> Result<Self, EncodeError> {
        if width == 0 || height == 0 || width % LATENT_SCALE != 0 || height % LATENT_SCALE != 0 {
            return Err(EncodeError::Indivisible { width, height });
        }
        Ok(Self { height: height / LATENT_SCALE, width: width / LATENT_SCALE, channels })
    }
}

pub fn encode_box_mask(bbox: &BoundingBox, grid: &LatentGrid) -> BinaryGrid {
    let mut mask = BinaryGrid::zeros(grid.height, grid.width);
    mask.paint_box(bbox);
    mask
}

/// Union of disks of `radius` cells around each keypoint.
pub fn encode_keypoint_heatmap(points: &KeypointSet, grid: &LatentGrid, radius: f64) -> BinaryGrid {
    let mut heat = BinaryGrid::zeros(grid.height, grid.width);
    let r2 = radius * radius;
    for &[x, y] in &points.points {
        let (px, py) = (x * grid.width as f64, y * grid.height as f64);
        for row in 0..grid.height {
            let dy = row as f64 + 0.5 - py;
            if dy * dy > r2 {
                continue;
            }
            for col in 0..grid.width {
                let dx = col as f64 + 0.5 - px;
                if dx * dx + dy * dy <= r2 {
                    heat.set(row, col);
                }
            }
        }
    }
    heat
}

/// Forward-only weights of the panel encoder.
///
/// Matrices are row-major: `color_projection` is `color_dim x 156`,
/// `text_conv` is `channels x text_dim`, `color_conv` is
/// `channels x color_dim`, `merge` is `channels x channels x 3 x 3`
/// indexed `(out, in, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub text_dim: usize,
    pub color_dim: usize,
    pub channels: usize,
    pub color_projection: Vec<f32>,
    pub text_conv: Vec<f32>,
    pub color_conv: Vec<f32>,
    pub box_conv: Vec<f32>,
    pub keypoint_conv: Vec<f32>,
    pub merge: Vec<f32>,
}

impl EncoderWeights {
    pub fn zeros(text_dim: usize, color_dim: usize, channels: usize) -> Self {
        Self {
            text_dim,
            color_dim,
            channels,
            color_projection: vec![0.0; color_dim * PALETTE_SIZE],
            text_conv: vec![0.0; channels * text_dim],
            color_conv: vec![0.0; channels * color_dim],
            box_conv: vec![0.0; channels],
            keypoint_conv: vec![0.0; channels],
            merge: vec![0.0; channels * channels * 9],
        }
    }

    /// Uniform weights in [-0.5, 0.5) from a ChaCha8 stream, except the merge
    /// kernel, which starts as identity plus small noise.
    pub fn from_seed(seed: u64, text_dim: usize, color_dim: usize, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(text_dim, color_dim, channels);
        for v in w
            .color_projection
            .iter_mut()
            .chain(w.text_conv.iter_mut())
            .chain(w.color_conv.iter_mut())
            .chain(w.box_conv.iter_mut())
            .chain(w.keypoint_conv.iter_mut())
        {
            *v = rng.gen_range(-0.5..0.5);
        }
        for v in &mut w.merge {
            *v = rng.gen_range(-0.05..0.05);
        }
        for c in 0..channels {
            w.merge[Self::merge_index(channels, c, c, 1, 1)] += 1.0;
        }
        w
    }

    /// Identity merge kernel; other weights unchanged.
    pub fn with_identity_merge(mut self) -> Self {
        self.merge.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.channels {
            self.merge[Self::merge_index(self.channels, c, c, 1, 1)] = 1.0;
        }
        self
    }

    fn merge_index(channels: usize, out: usize, inp: usize, ky: usize, kx: usize) -> usize {
        ((out * channels + inp) * 3 + ky) * 3 + kx
    }

    pub fn check(&self) -> Result<(), EncodeError> {
        let expect = [
            ("color_projection", self.color_projection.len(), self.color_dim * PALETTE_SIZE),
            ("text_conv", self.text_conv.len(), self.channels * self.text_dim),
            ("color_conv", self.color_conv.len(), self.channels * self.color_dim),
            ("box_conv", self.box_conv.len(), self.channels),
            ("keypoint_conv", self.keypoint_conv.len(), self.channels),
            ("merge", self.merge.len(), self.channels * self.channels * 9),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(EncodeError::Config(format!("{name} has {got} values, expected {want}")));
            }
        }
        Ok(())
    }
}

fn mat_vec(m: &[f32], rows: usize, cols: usize, v: &[f32]) -> Vec<f32> {
    (0..rows)
        .map(|r| {
            let row = &m[r * cols..(r + 1) * cols];
            row.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() as f32
        })
        .collect()
}

/// Projection of the 156-way color indicator: the sum of the projection
/// columns of the set indices.
pub fn encode_color_vector(colors: &ColorSet, weights: &EncoderWeights) -> Vec<f32> {
    let mut indicator = vec![0f32; PALETTE_SIZE];
    for i in colors.indices() {
        indicator[usize::from(i)] = 1.0;
    }
    mat_vec(&weights.color_projection, weights.color_dim, PALETTE_SIZE, &indicator)
}

/// Per-object intermediate map kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMap {
    pub id: ConceptId,
    pub map: LatentTensor,
    /// No latent cell center falls inside the box; box-gated terms vanish.
    pub empty_box_mask: bool,
}

/// Dense `(C, H, W)` condition tensor, the mean of per-object maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMap {
    pub data: LatentTensor,
    pub provenance: Vec<ObjectMap>,
}

fn encode_object(
    concept: &crate::panel::VisualConcept,
    grid: &LatentGrid,
    embedder: &dyn TextEmbedder,
    w: &EncoderWeights,
) -> ObjectMap {
    let c = w.channels;
    let (h, wd) = (grid.height, grid.width);
    let box_mask = encode_box_mask(&concept.bbox, grid);
    let heat = encode_keypoint_heatmap(&concept.keypoints, grid, KEYPOINT_RADIUS);
    let text = mat_vec(&w.text_conv, c, w.text_dim, &embedder.embed(&concept.description));
    let color = mat_vec(&w.color_conv, c, w.color_dim, &encode_color_vector(&concept.colors, w));

    // Box-gated 1D terms plus the keypoint term, per channel.
    let mut summed = vec![0f32; c * h * wd];
    for ch in 0..c {
        let gated = text[ch] + color[ch] + w.box_conv[ch];
        for i in 0..h * wd {
            summed[ch * h * wd + i] =
                f32::from(box_mask.cells[i]) * gated + f32::from(heat.cells[i]) * w.keypoint_conv[ch];
        }
    }

    // 3x3 merge convolution, zero padding.
    let mut merged = vec![0f32; c * h * wd];
    for out in 0..c {
        for y in 0..h {
            for x in 0..wd {
                let mut acc = 0f64;
                for inp in 0..c {
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= wd as isize {
                                continue;
                            }
                            let k = w.merge[EncoderWeights::merge_index(c, out, inp, ky, kx)];
                            let v = summed[inp * h * wd + sy as usize * wd + sx as usize];
                            acc += f64::from(k) * f64::from(v);
                        }
                    }
                }
                merged[out * h * wd + y * wd + x] = acc as f32;
            }
        }
    }

    ObjectMap {
        id: concept.id.clone(),
        map: LatentTensor { channels: c, height: h, width: wd, data: merged },
        empty_box_mask: box_mask.is_all_zero(),
    }
}

/// Encode every concept and average the per-object maps.
///
/// Each output element sums its per-object values in sorted order, so the
/// result does not depend on concept order.
pub fn assemble_condition_map(
    panel: &SemanticPanel,
    grid: &LatentGrid,
    embedder: &dyn TextEmbedder,
    weights: &EncoderWeights,
) -> Result<ConditionMap, EncodeError> {
    weights.check()?;
    if weights.channels != grid.channels {
        return Err(EncodeError::Config(format!(
            "weights have {} channels, grid has {}",
            weights.channels, grid.channels
        )));
    }
    if embedder.dim() != weights.text_dim {
        return Err(EncodeError::Config(format!(
            "embedder dim {} vs weights text_dim {}",
            embedder.dim(),
            weights.text_dim
        )));
    }
    let provenance: Vec<ObjectMap> =
        panel.concepts.iter().map(|c| encode_object(c, grid, embedder, weights)).collect();
    let mut data = LatentTensor::zeros(grid.channels, grid.height, grid.width);
    if !provenance.is_empty() {
        let n = provenance.len() as f64;
        let mut column = Vec::with_capacity(provenance.len());
        for (i, out) in data.data.iter_mut().enumerate() {
            column.clear();
            column.extend(provenance.iter().map(|o| o.map.data[i]));
            column.sort_by(f32::total_cmp);
            let sum: f64 = column.iter().map(|&v| f64::from(v)).sum();
            *out = (sum / n) as f32;
        }
    }
    Ok(ConditionMap { data, provenance })
}
