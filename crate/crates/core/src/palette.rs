//! The 156-entry CIELab color palette, pixel quantization and main-color
//! extraction.
//!
//! Construction: a 6-step gray ramp (L = 0, 20, ..., 100) followed by
//! 10 hues (0°, 36°, ..., 324°) x 5 lightness values x 3 chroma values laid
//! out in LCh(ab), converted to 8-bit sRGB with per-channel gamut clamping.
//! The stored Lab of each entry is recomputed from its 8-bit sRGB, so every
//! entry quantizes to itself.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use thiserror::Error;

use crate::panel::{ColorEntry, ColorSet, MAX_COLORS, MIN_COLOR_PROPORTION, PALETTE_SIZE};

pub const PALETTE_VERSION: u32 = 1;

const GRAY_LIGHTNESS: [f64; 6] = [0.0, 20.0, 40.0, 60.0, 80.0, 100.0];
const HUE_STEPS: usize = 10;
const LIGHTNESS: [f64; 5] = [20.0, 35.0, 50.0, 65.0, 80.0];
const CHROMA: [f64; 3] = [20.0, 45.0, 70.0];

// D65 reference white, sRGB primaries (IEC 61966-2-1).
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];
const EPSILON: f64 = 6.0 / 29.0;

static SHIPPED_TABLE: &str = include_str!("../assets/palette_v1.txt");

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let v = if c <= 0.0031308 { 12.92 * c } else { 1.055 * c.powf(1.0 / 2.4) - 0.055 };
    (v * 255.0).round() as u8
}

fn lab_f(t: f64) -> f64 {
    if t > EPSILON.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * EPSILON * EPSILON) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > EPSILON {
        t.powi(3)
    } else {
        3.0 * EPSILON * EPSILON * (t - 4.0 / 29.0)
    }
}

/// sRGB (D65) to CIELab.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz: [f64; 3] = std::array::from_fn(|i| {
        RGB_TO_XYZ[i][0] * lin[0] + RGB_TO_XYZ[i][1] * lin[1] + RGB_TO_XYZ[i][2] * lin[2]
    });
    let f: [f64; 3] = std::array::from_fn(|i| lab_f(xyz[i] / WHITE[i]));
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

/// CIELab to 8-bit sRGB, clamping out-of-gamut channels.
pub fn lab_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let f = [fy + lab[1] / 500.0, fy, fy - lab[2] / 200.0];
    let xyz: [f64; 3] = std::array::from_fn(|i| WHITE[i] * lab_f_inv(f[i]));
    std::array::from_fn(|i| {
        linear_to_srgb(XYZ_TO_RGB[i][0] * xyz[0] + XYZ_TO_RGB[i][1] * xyz[1] + XYZ_TO_RGB[i][2] * xyz[2])
    })
}

fn delta_e_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dl, da, db) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dl * dl + da * da + db * db
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaletteEntry {
    pub rgb: [u8; 3],
    pub lab: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

#[derive(Debug, Error)]
pub enum PaletteError {
    #[error("palette table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("palette has {0} entries, expected {PALETTE_SIZE}")]
    Size(usize),
    #[error("empty region")]
    EmptyRegion,
}

/// Construct the palette from its LCh grid.
pub fn build_palette() -> Palette {
    let mut rgbs = Vec::with_capacity(PALETTE_SIZE);
    for l in GRAY_LIGHTNESS {
        rgbs.push(lab_to_srgb([l, 0.0, 0.0]));
    }
    for hue in 0..HUE_STEPS {
        let angle = (hue as f64 * 360.0 / HUE_STEPS as f64).to_radians();
        for l in LIGHTNESS {
            for c in CHROMA {
                rgbs.push(lab_to_srgb([l, c * angle.cos(), c * angle.sin()]));
            }
        }
    }
    Palette { entries: rgbs.into_iter().map(|rgb| PaletteEntry { rgb, lab: srgb_to_lab(rgb) }).collect() }
}

impl Palette {
    /// The palette table shipped with the crate.
    pub fn standard() -> &'static Palette {
        static CELL: OnceLock<Palette> = OnceLock::new();
        CELL.get_or_init(|| Palette::from_table(SHIPPED_TABLE).expect("shipped palette table is well formed"))
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rgb(&self, index: u16) -> [u8; 3] {
        self.entries[usize::from(index)].rgb
    }

    /// Text table: `#` comments, then `index, R, G, B, L, a, b` per line.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# palette version {PALETTE_VERSION}");
        let _ = writeln!(out, "# sRGB (IEC 61966-2-1) -> XYZ -> CIELab, D65 white ({}, {}, {})", WHITE[0], WHITE[1], WHITE[2]);
        let _ = writeln!(out, "# 6 grays, then 10 hues x L {LIGHTNESS:?} x C {CHROMA:?} in LCh(ab)");
        let _ = writeln!(out, "# index, R, G, B, L, a, b");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i}, {}, {}, {}, {:?}, {:?}, {:?}",
                e.rgb[0], e.rgb[1], e.rgb[2], e.lab[0], e.lab[1], e.lab[2]
            );
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Palette, PaletteError> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| PaletteError::Table { line: n + 1, message };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(err(format!("expected 7 fields, got {}", fields.len())));
            }
            let index: usize = fields[0].parse().map_err(|e| err(format!("index: {e}")))?;
            if index != entries.len() {
                return Err(err(format!("index {index} out of sequence")));
            }
            let mut rgb = [0u8; 3];
            for (k, v) in rgb.iter_mut().enumerate() {
                *v = fields[1 + k].parse().map_err(|e| err(format!("channel {k}: {e}")))?;
            }
            let mut lab = [0f64; 3];
            for (k, v) in lab.iter_mut().enumerate() {
                *v = fields[4 + k].parse().map_err(|e| err(format!("lab {k}: {e}")))?;
            }
            entries.push(PaletteEntry { rgb, lab });
        }
        if entries.len() != PALETTE_SIZE {
            return Err(PaletteError::Size(entries.len()));
        }
        Ok(Palette { entries })
    }

    /// Index of the nearest entry by CIELab Euclidean distance; ties go to
    /// the lowest index.
    pub fn quantize(&self, rgb: [u8; 3]) -> u16 {
        let lab = srgb_to_lab(rgb);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let d = delta_e_sq(&lab, &e.lab);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best as u16
    }
}

pub fn quantize_pixel(rgb: [u8; 3], palette: &Palette) -> u16 {
    palette.quantize(rgb)
}

/// Main colors of a region: indices whose share exceeds 5%, the six most
/// frequent kept (ties to the lower index), proportions relative to the
/// whole region.
pub fn extract_colors(region: &[[u8; 3]], palette: &Palette) -> Result<ColorSet, PaletteError> {
    if region.is_empty() {
        return Err(PaletteError::EmptyRegion);
    }
    // Regions repeat colors heavily; quantize each distinct value once.
    let mut cache: HashMap<[u8; 3], u16> = HashMap::new();
    let mut counts = vec![0usize; palette.len()];
    for px in region {
        let idx = *cache.entry(*px).or_insert_with(|| palette.quantize(*px));
        counts[usize::from(idx)] += 1;
    }
    let total = region.len() as f64;
    let mut ranked: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n > 0 && n as f64 / total > MIN_COLOR_PROPORTION)
        .map(|(i, &n)| (i, n))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(MAX_COLORS);
    Ok(ColorSet {
        entries: ranked
            .into_iter()
            .map(|(i, n)| ColorEntry { index: i as u16, proportion: Some(n as f64 / total) })
            .collect(),
    })
}
