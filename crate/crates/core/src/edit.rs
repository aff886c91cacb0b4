//! Unit edit operations on panels, panel diffs, editable-region masks and
//! the masked latent blend.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{
    validate_panel, BinaryGrid, BoundingBox, ColorSet, ConceptId, KeypointSet, SemanticPanel,
    ValidationReport, VisualConcept,
};

/// A concept as supplied by an Add or Replace payload. Missing `id` means
/// "mint one"; a Replace without `box` keeps the target's box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptDraft {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<ConceptId>,
    pub description: String,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default)]
    pub colors: ColorSet,
    #[serde(default)]
    pub keypoints: KeypointSet,
}

impl ConceptDraft {
    pub fn new(description: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            id: None,
            description: description.into(),
            bbox: Some(bbox),
            colors: ColorSet::default(),
            keypoints: KeypointSet::default(),
        }
    }
}

impl From<VisualConcept> for ConceptDraft {
    fn from(c: VisualConcept) -> Self {
        Self {
            id: Some(c.id),
            description: c.description,
            bbox: Some(c.bbox),
            colors: c.colors,
            keypoints: c.keypoints,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPayload {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Attribute fields to overwrite; absent fields stay as they are.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colors: Option<ColorSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<KeypointSet>,
}

impl AttributeDelta {
    fn is_empty(&self) -> bool {
        self.description.is_none() && self.colors.is_none() && self.keypoints.is_none()
    }
}

/// One unit operation. JSON form: `{"kind": ..., "target": ..., "payload": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EditOp {
    Add { payload: ConceptDraft },
    Remove { target: ConceptId },
    Replace { target: ConceptId, payload: ConceptDraft },
    Resize { target: ConceptId, payload: BoxPayload },
    Move { target: ConceptId, payload: BoxPayload },
    AttributeRevise { target: ConceptId, payload: AttributeDelta },
}

impl EditOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EditOp::Add { .. } => "Add",
            EditOp::Remove { .. } => "Remove",
            EditOp::Replace { .. } => "Replace",
            EditOp::Resize { .. } => "Resize",
            EditOp::Move { .. } => "Move",
            EditOp::AttributeRevise { .. } => "AttributeRevise",
        }
    }

    pub fn target(&self) -> Option<&ConceptId> {
        match self {
            EditOp::Add { .. } => None,
            EditOp::Remove { target }
            | EditOp::Replace { target, .. }
            | EditOp::Resize { target, .. }
            | EditOp::Move { target, .. }
            | EditOp::AttributeRevise { target, .. } => Some(target),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EditError {
    #[error("unknown concept id {0}")]
    UnknownTarget(ConceptId),
    #[error("concept id {0} already exists")]
    DuplicateId(ConceptId),
    #[error("invalid {kind} payload: {reason}")]
    InvalidPayload { kind: &'static str, reason: String },
    #[error("edit produces an invalid panel: {0}")]
    InvalidResult(ValidationReport),
}

/// Keypoints carried rigidly with a box move.
fn translate_keypoints(points: &KeypointSet, old: &BoundingBox, new: &BoundingBox) -> KeypointSet {
    let (dx, dy) = (new.xc - old.xc, new.yc - old.yc);
    KeypointSet::new(points.points.iter().map(|[x, y]| [x + dx, y + dy]).collect()).clamped_into(new)
}

/// Keypoints mapped affinely from the old box onto the new one.
fn rescale_keypoints(points: &KeypointSet, old: &BoundingBox, new: &BoundingBox) -> KeypointSet {
    let (sx, sy) = (new.w / old.w, new.h / old.h);
    KeypointSet::new(
        points
            .points
            .iter()
            .map(|[x, y]| [new.xc + (x - old.xc) * sx, new.yc + (y - old.yc) * sy])
            .collect(),
    )
    .clamped_into(new)
}

fn check_box(kind: &'static str, b: &BoundingBox) -> Result<(), EditError> {
    if b.is_valid() {
        Ok(())
    } else {
        Err(EditError::InvalidPayload { kind, reason: format!("box {:?} out of range", <[f64; 4]>::from(*b)) })
    }
}

fn find(panel: &SemanticPanel, id: &ConceptId) -> Result<usize, EditError> {
    panel.position(id).ok_or_else(|| EditError::UnknownTarget(id.clone()))
}

/// Apply one op in place; ids minted for Add carry `next_version`.
fn apply_in_place(panel: &mut SemanticPanel, op: &EditOp, next_version: u64) -> Result<(), EditError> {
    match op {
        EditOp::Add { payload } => {
            let bbox = payload.bbox.ok_or(EditError::InvalidPayload { kind: "Add", reason: "missing box".into() })?;
            check_box("Add", &bbox)?;
            let id = match &payload.id {
                Some(id) if panel.position(id).is_some() => return Err(EditError::DuplicateId(id.clone())),
                Some(id) if !id.as_str().is_empty() => id.clone(),
                _ => panel.fresh_id(next_version),
            };
            panel.concepts.push(VisualConcept {
                id,
                description: payload.description.clone(),
                bbox,
                colors: payload.colors.clone(),
                keypoints: payload.keypoints.clone(),
            });
        }
        EditOp::Remove { target } => {
            let at = find(panel, target)?;
            panel.concepts.remove(at);
        }
        EditOp::Replace { target, payload } => {
            let at = find(panel, target)?;
            if let Some(id) = &payload.id {
                if id != target {
                    return Err(EditError::InvalidPayload {
                        kind: "Replace",
                        reason: format!("payload id {id} differs from target {target}"),
                    });
                }
            }
            let bbox = payload.bbox.unwrap_or(panel.concepts[at].bbox);
            check_box("Replace", &bbox)?;
            panel.concepts[at] = VisualConcept {
                id: target.clone(),
                description: payload.description.clone(),
                bbox,
                colors: payload.colors.clone(),
                keypoints: payload.keypoints.clone(),
            };
        }
        EditOp::Move { target, payload } => {
            let at = find(panel, target)?;
            let new = payload.bbox;
            check_box("Move", &new)?;
            let c = &mut panel.concepts[at];
            if new.w != c.bbox.w || new.h != c.bbox.h {
                return Err(EditError::InvalidPayload {
                    kind: "Move",
                    reason: "Move keeps the box size; use Resize to change it".into(),
                });
            }
            c.keypoints = translate_keypoints(&c.keypoints, &c.bbox, &new);
            c.bbox = new;
        }
        EditOp::Resize { target, payload } => {
            let at = find(panel, target)?;
            let new = payload.bbox;
            check_box("Resize", &new)?;
            let c = &mut panel.concepts[at];
            c.keypoints = rescale_keypoints(&c.keypoints, &c.bbox, &new);
            c.bbox = new;
        }
        EditOp::AttributeRevise { target, payload } => {
            let at = find(panel, target)?;
            if payload.is_empty() {
                return Err(EditError::InvalidPayload {
                    kind: "AttributeRevise",
                    reason: "no attribute supplied".into(),
                });
            }
            let c = &mut panel.concepts[at];
            if let Some(d) = &payload.description {
                c.description = d.clone();
            }
            if let Some(colors) = &payload.colors {
                c.colors = colors.clone();
            }
            if let Some(k) = &payload.keypoints {
                c.keypoints = k.clone();
            }
        }
    }
    Ok(())
}

/// Apply a single op, returning a new panel with `version + 1`.
pub fn apply_edit(panel: &SemanticPanel, op: &EditOp) -> Result<SemanticPanel, EditError> {
    apply_edits(panel, std::slice::from_ref(op))
}

/// Apply a batch of ops as one edit: all succeed or none do, and the
/// version advances by exactly one.
pub fn apply_edits(panel: &SemanticPanel, ops: &[EditOp]) -> Result<SemanticPanel, EditError> {
    let next_version = panel.version + 1;
    let mut out = panel.clone();
    for op in ops {
        apply_in_place(&mut out, op, next_version)?;
    }
    out.version = next_version;
    let report = validate_panel(&out);
    if !report.is_valid() {
        return Err(EditError::InvalidResult(report));
    }
    Ok(out)
}

/// A concept added, removed, or changed between two panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedConcept {
    pub id: ConceptId,
    pub old_box: Option<BoundingBox>,
    pub new_box: Option<BoundingBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelDiff {
    pub adjusted: Vec<AdjustedConcept>,
}

impl PanelDiff {
    pub fn is_empty(&self) -> bool {
        self.adjusted.is_empty()
    }

    pub fn ids(&self) -> Vec<&ConceptId> {
        self.adjusted.iter().map(|a| &a.id).collect()
    }
}

/// Concepts present in only one panel, plus shared concepts whose content
/// differs. Old-panel order first, then additions in new-panel order.
pub fn diff_panels(old: &SemanticPanel, new: &SemanticPanel) -> PanelDiff {
    let mut adjusted = Vec::new();
    for o in &old.concepts {
        match new.concept(&o.id) {
            None => adjusted.push(AdjustedConcept { id: o.id.clone(), old_box: Some(o.bbox), new_box: None }),
            Some(n) if !o.same_content(n) => {
                adjusted.push(AdjustedConcept { id: o.id.clone(), old_box: Some(o.bbox), new_box: Some(n.bbox) })
            }
            Some(_) => {}
        }
    }
    for n in &new.concepts {
        if old.concept(&n.id).is_none() {
            adjusted.push(AdjustedConcept { id: n.id.clone(), old_box: None, new_box: Some(n.bbox) });
        }
    }
    PanelDiff { adjusted }
}

/// Binary latent-scale mask of the regions an edit may touch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditableRegionMask(pub BinaryGrid);

impl EditableRegionMask {
    pub fn grid(&self) -> &BinaryGrid {
        &self.0
    }
}

/// Union of the old and new boxes of every adjusted concept, rasterized by
/// cell-center containment.
pub fn editable_region_mask(diff: &PanelDiff, height: usize, width: usize) -> EditableRegionMask {
    let mut grid = BinaryGrid::zeros(height, width);
    for a in &diff.adjusted {
        for b in a.old_box.iter().chain(a.new_box.iter()) {
            grid.paint_box(b);
        }
    }
    EditableRegionMask(grid)
}

/// Real-valued `(C, H, W)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl LatentTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, BlendError> {
        if data.len() != channels * height * width {
            return Err(BlendError::Shape(format!(
                "{} values for shape ({channels}, {height}, {width})",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BlendError {
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// `M_e * x_new + (1 - M_e) * x_old`, mask broadcast over channels.
///
/// The mask is binary, so each element is taken verbatim from one input.
pub fn blend_latents(
    x_old: &LatentTensor,
    x_new: &LatentTensor,
    mask: &EditableRegionMask,
) -> Result<LatentTensor, BlendError> {
    if x_old.shape() != x_new.shape() {
        return Err(BlendError::Shape(format!("x_old {:?} vs x_new {:?}", x_old.shape(), x_new.shape())));
    }
    let m = mask.grid();
    if (m.height, m.width) != (x_old.height, x_old.width) {
        return Err(BlendError::Shape(format!(
            "mask ({}, {}) vs latent ({}, {})",
            m.height, m.width, x_old.height, x_old.width
        )));
    }
    let plane = x_old.height * x_old.width;
    let data = x_old
        .data
        .iter()
        .zip(&x_new.data)
        .enumerate()
        .map(|(i, (&o, &n))| if m.cells[i % plane] == 1 { n } else { o })
        .collect();
    Ok(LatentTensor { data, ..*x_old })
}
