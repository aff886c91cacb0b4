//! Semantic panel data model: concepts, boxes, color and keypoint sets,
//! validation and canonical JSON serialization.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of entries in the color palette that color indices refer to.
pub const PALETTE_SIZE: usize = 156;
/// Maximum number of main colors kept per concept.
pub const MAX_COLORS: usize = 6;
/// Stored color proportions must exceed this fraction.
pub const MIN_COLOR_PROPORTION: f64 = 0.05;
/// Maximum number of keypoints per concept.
pub const MAX_KEYPOINTS: usize = 8;

/// Normalized center-format box `[xc, yc, w, h]`.
///
/// Serializes as a 4-element JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub xc: f64,
    pub yc: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([xc, yc, w, h]: [f64; 4]) -> Self {
        Self { xc, yc, w, h }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.xc, b.yc, b.w, b.h]
    }
}

/// Corner-form box, `x1 <= x2` and `y1 <= y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Corners {
    /// Half-open containment `[x1, x2) x [y1, y2)`, the rasterization rule
    /// shared by every grid built from a box.
    pub fn contains_center(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    /// Inclusive containment, used for keypoints.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    pub fn clamp_point(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        [x.clamp(self.x1, self.x2), y.clamp(self.y1, self.y2)]
    }
}

impl BoundingBox {
    pub const FULL: BoundingBox = BoundingBox { xc: 0.5, yc: 0.5, w: 1.0, h: 1.0 };

    pub fn new(xc: f64, yc: f64, w: f64, h: f64) -> Self {
        Self { xc, yc, w, h }
    }

    /// Geometric extents without clamping.
    fn extents(&self) -> Corners {
        Corners {
            x1: self.xc - self.w / 2.0,
            y1: self.yc - self.h / 2.0,
            x2: self.xc + self.w / 2.0,
            y2: self.yc + self.h / 2.0,
        }
    }

    /// Corner form clamped to the unit square.
    pub fn corners(&self) -> Corners {
        let e = self.extents();
        Corners {
            x1: e.x1.clamp(0.0, 1.0),
            y1: e.y1.clamp(0.0, 1.0),
            x2: e.x2.clamp(0.0, 1.0),
            y2: e.y2.clamp(0.0, 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        let size = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        if !unit(self.xc) {
            out.push(format!("xc = {} outside [0, 1]", self.xc));
        }
        if !unit(self.yc) {
            out.push(format!("yc = {} outside [0, 1]", self.yc));
        }
        if !size(self.w) {
            out.push(format!("w = {} outside (0, 1]", self.w));
        }
        if !size(self.h) {
            out.push(format!("h = {} outside (0, 1]", self.h));
        }
        out
    }

    /// Clamp each field into its valid range. Non-finite fields are left for
    /// the caller to reject.
    pub fn clamped(&self, min_size: f64) -> Self {
        Self {
            xc: self.xc.clamp(0.0, 1.0),
            yc: self.yc.clamp(0.0, 1.0),
            w: self.w.clamp(min_size, 1.0),
            h: self.h.clamp(min_size, 1.0),
        }
    }

    pub fn center(&self) -> [f64; 2] {
        [self.xc, self.yc]
    }
}

/// `(x1, y1, x2, y2)` of `b`, clamped to the unit square.
pub fn box_corners(b: &BoundingBox) -> (f64, f64, f64, f64) {
    let c = b.corners();
    (c.x1, c.y1, c.x2, c.y2)
}

/// Intersection over union of the geometric extents of two boxes.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ea, eb) = (a.extents(), b.extents());
    let iw = (ea.x2.min(eb.x2) - ea.x1.max(eb.x1)).max(0.0);
    let ih = (ea.y2.min(eb.y2) - ea.y1.max(eb.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let area = |e: &Corners| (e.x2 - e.x1) * (e.y2 - e.y1);
    let union = area(&ea) + area(&eb) - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorEntry {
    pub index: u16,
    pub proportion: Option<f64>,
}

/// Main colors of a concept as palette indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColorSet {
    pub entries: Vec<ColorEntry>,
}

impl ColorSet {
    pub fn from_indices<I: IntoIterator<Item = u16>>(indices: I) -> Self {
        Self {
            entries: indices.into_iter().map(|index| ColorEntry { index, proportion: None }).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn indices(&self) -> impl Iterator<Item = u16> + '_ {
        self.entries.iter().map(|e| e.index)
    }

    /// The entry with the largest stored proportion; entries without a
    /// proportion rank by position.
    pub fn dominant(&self) -> Option<u16> {
        let mut best: Option<&ColorEntry> = None;
        for e in &self.entries {
            match best {
                None => best = Some(e),
                Some(b) => {
                    if e.proportion.unwrap_or(0.0) > b.proportion.unwrap_or(0.0) {
                        best = Some(e);
                    }
                }
            }
        }
        best.map(|e| e.index)
    }
}

/// Normalized keypoints of a concept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointSet {
    pub points: Vec<[f64; 2]>,
}

impl KeypointSet {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Clamp every point into `b` (corner form, inclusive).
    pub fn clamped_into(&self, b: &BoundingBox) -> Self {
        let c = b.corners();
        Self { points: self.points.iter().map(|p| c.clamp_point(*p)).collect() }
    }
}

/// Opaque concept identifier, unique within a panel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub String);

impl ConceptId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConceptId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualConcept {
    pub id: ConceptId,
    pub description: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default)]
    pub colors: ColorSet,
    #[serde(default)]
    pub keypoints: KeypointSet,
}

impl VisualConcept {
    pub fn new(id: impl Into<String>, description: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            id: ConceptId(id.into()),
            description: description.into(),
            bbox,
            colors: ColorSet::default(),
            keypoints: KeypointSet::default(),
        }
    }

    /// True when every attribute other than the id matches.
    pub fn same_content(&self, other: &VisualConcept) -> bool {
        self.description == other.description
            && self.bbox == other.bbox
            && self.colors == other.colors
            && self.keypoints == other.keypoints
    }
}

/// The full scene: source prompt plus ordered concepts.
///
/// Field order here is the canonical JSON order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPanel {
    pub prompt: String,
    pub version: u64,
    pub concepts: Vec<VisualConcept>,
}

impl SemanticPanel {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), version: 0, concepts: Vec::new() }
    }

    pub fn concept(&self, id: &ConceptId) -> Option<&VisualConcept> {
        self.concepts.iter().find(|c| &c.id == id)
    }

    pub fn position(&self, id: &ConceptId) -> Option<usize> {
        self.concepts.iter().position(|c| &c.id == id)
    }

    /// A fresh id of the form `c{version}.{k}` that is not used in the panel.
    ///
    /// Ids minted for an edit carry the version that edit produces; since
    /// versions only grow, minted ids are not handed out twice.
    pub fn fresh_id(&self, version: u64) -> ConceptId {
        let taken: HashSet<&str> = self.concepts.iter().map(|c| c.id.as_str()).collect();
        (0..)
            .map(|k| format!("c{version}.{k}"))
            .find(|s| !taken.contains(s.as_str()))
            .map(ConceptId)
            .expect("unbounded range")
    }
}

/// One invariant violation found by [`validate_panel`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub concept: Option<ConceptId>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.concept {
            Some(id) => write!(f, "concept {id}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Check every panel invariant; never fails, only reports.
pub fn validate_panel(panel: &SemanticPanel) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for c in &panel.concepts {
        let mut push = |field: &'static str, message: String| {
            violations.push(Violation { concept: Some(c.id.clone()), field, message });
        };
        if c.id.0.is_empty() {
            push("id", "empty id".into());
        }
        if !seen.insert(&c.id) {
            push("id", "duplicate id".into());
        }
        if c.description.trim().is_empty() {
            push("description", "empty description".into());
        }
        let box_problems = c.bbox.violations();
        if !box_problems.is_empty() {
            push("box", box_problems.join(", "));
        }

        if c.colors.len() > MAX_COLORS {
            push("colors", format!("ColorSet exceeds {MAX_COLORS} ({} entries)", c.colors.len()));
        }
        let mut idx_seen = HashSet::new();
        for e in &c.colors.entries {
            if usize::from(e.index) >= PALETTE_SIZE {
                push("colors", format!("index {} outside palette", e.index));
            }
            if !idx_seen.insert(e.index) {
                push("colors", format!("duplicate index {}", e.index));
            }
            if let Some(p) = e.proportion {
                if !(p.is_finite() && p > MIN_COLOR_PROPORTION && p <= 1.0) {
                    push("colors", format!("proportion {p} of index {} outside (0.05, 1]", e.index));
                }
            }
        }

        if c.keypoints.len() > MAX_KEYPOINTS {
            push("keypoints", format!("KeypointSet exceeds {MAX_KEYPOINTS} ({} points)", c.keypoints.len()));
        }
        // Containment is only meaningful against a well-formed box.
        let corners = box_problems.is_empty().then(|| c.bbox.corners());
        for p in &c.keypoints.points {
            let finite = p[0].is_finite() && p[1].is_finite();
            if !finite || !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                push("keypoints", format!("point {p:?} outside unit square"));
            } else if let Some(cr) = &corners {
                if !cr.contains_point(p[0], p[1]) {
                    push("keypoints", format!("point {p:?} outside box"));
                }
            }
        }
    }
    ValidationReport { violations }
}

#[derive(Debug, Error)]
pub enum PanelJsonError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid panel: {0}")]
    Invalid(ValidationReport),
}

/// Canonical pretty JSON; floats use shortest round-trip formatting.
pub fn panel_to_json(panel: &SemanticPanel) -> String {
    serde_json::to_string_pretty(panel).expect("panel serialization is infallible")
}

/// Parse and validate a panel.
pub fn panel_from_json(text: &str) -> Result<SemanticPanel, PanelJsonError> {
    let panel: SemanticPanel = serde_json::from_str(text).map_err(|e| PanelJsonError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let report = validate_panel(&panel);
    if report.is_valid() {
        Ok(panel)
    } else {
        Err(PanelJsonError::Invalid(report))
    }
}

/// Binary grid in row-major order, values in {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<u8>,
}

impl BinaryGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, cells: vec![0; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.cells[row * self.width + col] = 1;
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_all_zero(&self) -> bool {
        self.cells.iter().all(|&v| v == 0)
    }

    /// Set every cell whose center lies inside `b`.
    pub fn paint_box(&mut self, b: &BoundingBox) {
        let c = b.corners();
        for row in 0..self.height {
            let y = (row as f64 + 0.5) / self.height as f64;
            if y < c.y1 || y >= c.y2 {
                continue;
            }
            for col in 0..self.width {
                let x = (col as f64 + 0.5) / self.width as f64;
                if c.contains_center(x, y) {
                    self.cells[row * self.width + col] = 1;
                }
            }
        }
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> BinaryGrid {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut out = BinaryGrid::zeros(h, w);
        for row in 0..h {
            for col in 0..w {
                out.cells[row * w + col] = self.get(row / factor, col / factor);
            }
        }
        out
    }
}
