//! Deterministic rasterizer used as a stand-in generator and live preview.
//!
//! A concept's footprint is the set of pixels whose latent cell (8x8 block)
//! has its center inside the box, so what a concept paints always lies
//! inside the editable region computed for it. The footprint is filled with
//! the dominant palette color, ringed by an outline whose dash pattern
//! encodes a hash of the description, and keypoints are drawn as dots.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, Rgb, RgbImage};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::edit::{diff_panels, editable_region_mask};
use crate::encoder::LATENT_SCALE;
use crate::palette::Palette;
use crate::panel::{BinaryGrid, SemanticPanel, VisualConcept};

const NEUTRAL_GRAY: [u8; 3] = [128, 128, 128];
const DASH_LENGTH: u32 = 4;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("render size {width}x{height} must be positive multiples of {LATENT_SCALE}")]
    Size { width: u32, height: u32 },
    #[error("image encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub outline: u32,
    pub dot_radius: u32,
    pub background: [u8; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 256, height: 256, outline: 2, dot_radius: 2, background: [236, 236, 236] }
    }
}

impl RenderConfig {
    pub fn sized(width: u32, height: u32) -> Self {
        Self { width, height, ..Self::default() }
    }

    pub fn check(&self) -> Result<(), RenderError> {
        let ok = |v: u32| v > 0 && v as usize % LATENT_SCALE == 0;
        if ok(self.width) && ok(self.height) {
            Ok(())
        } else {
            Err(RenderError::Size { width: self.width, height: self.height })
        }
    }

    fn latent_dims(&self) -> (usize, usize) {
        (self.height as usize / LATENT_SCALE, self.width as usize / LATENT_SCALE)
    }
}

fn description_bits(description: &str) -> u32 {
    let d = Sha256::digest(description.as_bytes());
    u32::from_le_bytes([d[0], d[1], d[2], d[3]])
}

fn darken(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| v / 2)
}

fn lighten(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| v + (255 - v) / 2)
}

fn paint_concept(img: &mut RgbImage, concept: &VisualConcept, cfg: &RenderConfig, palette: &Palette) {
    let (lh, lw) = cfg.latent_dims();
    let mut cells = BinaryGrid::zeros(lh, lw);
    cells.paint_box(&concept.bbox);
    if cells.is_all_zero() {
        return;
    }
    let footprint = cells.upsample(LATENT_SCALE);
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && footprint.get(y as usize, x as usize) == 1;

    let fill = concept.colors.dominant().map(|i| palette.rgb(i)).unwrap_or(NEUTRAL_GRAY);
    let bits = description_bits(&concept.description);
    let t = i64::from(cfg.outline);

    for y in 0..h {
        for x in 0..w {
            if footprint.get(y, x) == 0 {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            let on_ring = t > 0
                && (!inside(xi - t, yi) || !inside(xi + t, yi) || !inside(xi, yi - t) || !inside(xi, yi + t));
            let color = if on_ring {
                let segment = ((x + y) as u32 / DASH_LENGTH) % 32;
                if bits >> segment & 1 == 1 { lighten(fill) } else { darken(fill) }
            } else {
                fill
            };
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }

    let dot = fill.map(|v| 255 - v);
    let r = f64::from(cfg.dot_radius);
    for &[kx, ky] in &concept.keypoints.points {
        let (px, py) = (kx * w as f64, ky * h as f64);
        let (x0, x1) = ((px - r).floor().max(0.0) as usize, ((px + r).ceil() as usize).min(w));
        let (y0, y1) = ((py - r).floor().max(0.0) as usize, ((py + r).ceil() as usize).min(h));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - px, y as f64 + 0.5 - py);
                if dx * dx + dy * dy <= r * r && footprint.get(y, x) == 1 {
                    img.put_pixel(x as u32, y as u32, Rgb(dot));
                }
            }
        }
    }
}

/// Paint concepts back to front in panel order.
pub fn render_panel(panel: &SemanticPanel, cfg: &RenderConfig, palette: &Palette) -> Result<RgbImage, RenderError> {
    cfg.check()?;
    let mut img = RgbImage::from_pixel(cfg.width, cfg.height, Rgb(cfg.background));
    for c in &panel.concepts {
        paint_concept(&mut img, c, cfg, palette);
    }
    Ok(img)
}

/// Render `new` but keep every pixel of `old` outside the upsampled
/// editable region of the edit between them.
pub fn render_edit(
    old: &SemanticPanel,
    new: &SemanticPanel,
    cfg: &RenderConfig,
    palette: &Palette,
) -> Result<RgbImage, RenderError> {
    cfg.check()?;
    let (lh, lw) = cfg.latent_dims();
    let mask = editable_region_mask(&diff_panels(old, new), lh, lw).0.upsample(LATENT_SCALE);
    let before = render_panel(old, cfg, palette)?;
    let after = render_panel(new, cfg, palette)?;
    let mut out = before;
    for (i, (o, n)) in out.pixels_mut().zip(after.pixels()).enumerate() {
        if mask.cells[i] == 1 {
            *o = *n;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Png,
    Ppm,
}

/// Encode as 8-bit RGB PNG or binary PPM (P6).
pub fn encode_image(img: &RgbImage, kind: ImageKind) -> Result<Vec<u8>, RenderError> {
    match kind {
        ImageKind::Png => {
            let mut buf = Cursor::new(Vec::new());
            img.write_to(&mut buf, ImageFormat::Png)?;
            Ok(buf.into_inner())
        }
        ImageKind::Ppm => {
            let mut buf = Vec::new();
            PnmEncoder::new(&mut buf)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)?;
            Ok(buf)
        }
    }
}

pub fn save_image(img: &RgbImage, path: &Path, kind: ImageKind) -> Result<(), RenderError> {
    std::fs::write(path, encode_image(img, kind)?).map_err(|e| RenderError::Encode(e.into()))
}
