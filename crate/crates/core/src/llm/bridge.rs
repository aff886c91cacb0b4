//! Sequential text-to-panel generation and chat-driven panel editing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{self, ParseError};
use super::provider::{ChatMessage, ChatParams, ChatProvider, ChatRequest, ProviderError, Stage};
use super::templates::{PromptTemplateSet, TemplateError};
use crate::edit::{apply_edit, apply_edits, AttributeDelta, BoxPayload, ConceptDraft, EditOp};
use crate::palette::{quantize_pixel, Palette};
use crate::panel::{
    panel_to_json, validate_panel, BoundingBox, ColorSet, ConceptId, KeypointSet, SemanticPanel, ValidationReport,
    VisualConcept, MAX_COLORS, MAX_KEYPOINTS,
};

/// Smallest width or height a generated box is clamped to.
pub const MIN_BOX_SIZE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeConfig {
    /// Re-asks after an unparseable reply, per stage.
    pub max_retries: u32,
    pub params: ChatParams,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { max_retries: 3, params: ChatParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Exchange {
        stage: Stage,
        attempt: u32,
        fingerprint: String,
        system: String,
        messages: Vec<ChatMessage>,
        reply: String,
    },
    ParseFailure {
        stage: Stage,
        attempt: u32,
        error: String,
    },
    Warning {
        stage: Stage,
        message: String,
    },
    Clamp {
        stage: Stage,
        subject: String,
        before: Vec<f64>,
        after: Vec<f64>,
    },
}

/// Everything sent, received, retried, clamped or skipped during a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub events: Vec<SessionEvent>,
}

impl SessionLog {
    /// Re-asks issued for a stage.
    pub fn retries(&self, stage: Stage) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, SessionEvent::Exchange { stage: s, attempt, .. } if *s == stage && *attempt > 0))
            .count()
    }

    pub fn warnings(&self) -> impl Iterator<Item = (Stage, &str)> {
        self.events.iter().filter_map(|e| match e {
            SessionEvent::Warning { stage, message } => Some((*stage, message.as_str())),
            _ => None,
        })
    }

    pub fn clamps(&self) -> impl Iterator<Item = &SessionEvent> {
        self.events.iter().filter(|e| matches!(e, SessionEvent::Clamp { .. }))
    }

    fn warn(&mut self, stage: Stage, message: String) {
        tracing::warn!(%stage, "{message}");
        self.events.push(SessionEvent::Warning { stage, message });
    }
}

#[derive(Debug, Error)]
pub enum BridgeErrorKind {
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unparseable after {attempts} attempts: {last}")]
    Unparseable { attempts: u32, last: ParseError },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("result violates panel invariants: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {kind}")]
pub struct BridgeError {
    pub stage: Stage,
    pub kind: BridgeErrorKind,
}

impl BridgeError {
    fn new(stage: Stage, kind: impl Into<BridgeErrorKind>) -> Self {
        Self { stage, kind: kind.into() }
    }
}

/// Outcome of [`Bridge::chat_edit`]: the ops and the panel they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatEdit {
    pub panel: SemanticPanel,
    pub ops: Vec<EditOp>,
}

pub struct Bridge<P> {
    provider: P,
    templates: PromptTemplateSet,
    config: BridgeConfig,
    palette: &'static Palette,
}

fn fmt_box(b: &BoundingBox) -> String {
    format!("[{}, {}, {}, {}]", b.xc, b.yc, b.w, b.h)
}

fn label_key(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Match boxes to instances: same label first, then the rest in reply order.
fn assign_boxes(instances: &[String], parsed: &[(String, [f64; 4])]) -> Vec<[f64; 4]> {
    let mut used = vec![false; parsed.len()];
    let mut out: Vec<Option<[f64; 4]>> = vec![None; instances.len()];
    for (i, inst) in instances.iter().enumerate() {
        let key = label_key(inst);
        if let Some(j) = (0..parsed.len()).find(|&j| !used[j] && label_key(&parsed[j].0) == key) {
            used[j] = true;
            out[i] = Some(parsed[j].1);
        }
    }
    let mut rest = (0..parsed.len()).filter(|&j| !used[j]);
    out.into_iter()
        .map(|slot| slot.unwrap_or_else(|| parsed[rest.next().expect("counts checked by caller")].1))
        .collect()
}

impl<P: ChatProvider> Bridge<P> {
    pub fn new(provider: P) -> Self {
        Self::with_templates(provider, PromptTemplateSet::builtin(), BridgeConfig::default())
    }

    pub fn with_templates(provider: P, templates: PromptTemplateSet, config: BridgeConfig) -> Self {
        Self { provider, templates, config, palette: Palette::standard() }
    }

    pub fn provider(&self) -> &P {
        &self.provider
    }

    /// One stage conversation: ask, parse, and on failure re-ask with the
    /// previous reply and a correction appended.
    fn ask<T>(
        &self,
        stage: Stage,
        system: String,
        user: &str,
        log: &mut SessionLog,
        mut parse: impl FnMut(&str) -> Result<T, ParseError>,
    ) -> Result<T, BridgeError> {
        let mut request =
            ChatRequest { stage, system, messages: vec![ChatMessage::user(user)], params: self.config.params };
        let mut attempt = 0;
        loop {
            let reply = self.provider.complete(&request).map_err(|e| BridgeError::new(stage, e))?;
            log.events.push(SessionEvent::Exchange {
                stage,
                attempt,
                fingerprint: request.fingerprint(),
                system: request.system.clone(),
                messages: request.messages.clone(),
                reply: reply.clone(),
            });
            match parse(&reply) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log.events.push(SessionEvent::ParseFailure { stage, attempt, error: e.to_string() });
                    if attempt >= self.config.max_retries {
                        return Err(BridgeError::new(stage, BridgeErrorKind::Unparseable { attempts: attempt + 1, last: e }));
                    }
                    request.messages.push(ChatMessage::assistant(reply));
                    request.messages.push(ChatMessage::user(format!(
                        "Your previous reply could not be used: {e}. Reply again following the required format exactly."
                    )));
                    attempt += 1;
                }
            }
        }
    }

    pub fn generate_descriptions(&self, prompt: &str, log: &mut SessionLog) -> Result<Vec<(String, u32)>, BridgeError> {
        let stage = Stage::Descriptions;
        if prompt.trim().is_empty() {
            return Err(BridgeError::new(stage, BridgeErrorKind::EmptyInput("prompt")));
        }
        let system = self.templates.render(stage, &[]).map_err(|e| BridgeError::new(stage, e))?;
        self.ask(stage, system, prompt, log, parse::parse_descriptions)
    }

    /// One box per expanded instance, in description order.
    pub fn generate_boxes(
        &self,
        prompt: &str,
        descriptions: &[(String, u32)],
        log: &mut SessionLog,
    ) -> Result<Vec<(String, BoundingBox)>, BridgeError> {
        let stage = Stage::Boxes;
        let instances: Vec<String> =
            descriptions.iter().flat_map(|(d, n)| std::iter::repeat_n(d.clone(), *n as usize)).collect();
        if instances.is_empty() {
            return Err(BridgeError::new(stage, BridgeErrorKind::EmptyInput("description list")));
        }
        let objects: Vec<String> = descriptions.iter().map(|(d, n)| format!("- {d} (count {n})")).collect();
        let system = self
            .templates
            .render(stage, &[("objects", &objects.join("\n")), ("instance_count", &instances.len().to_string())])
            .map_err(|e| BridgeError::new(stage, e))?;
        let parsed = self.ask(stage, system, prompt, log, |reply| {
            let boxes = parse::parse_boxes(reply)?;
            if boxes.len() != instances.len() {
                return Err(ParseError::CountMismatch { expected: instances.len(), got: boxes.len() });
            }
            Ok(boxes)
        })?;
        let raw = assign_boxes(&instances, &parsed);
        Ok(instances
            .into_iter()
            .zip(raw)
            .enumerate()
            .map(|(i, (desc, r))| {
                let b = BoundingBox::from(r).clamped(MIN_BOX_SIZE);
                let after: [f64; 4] = b.into();
                if after != r {
                    log.events.push(SessionEvent::Clamp {
                        stage,
                        subject: format!("instance {} ({desc})", i + 1),
                        before: r.to_vec(),
                        after: after.to_vec(),
                    });
                }
                (desc, b)
            })
            .collect())
    }

    /// Per-concept palette colors. Unusable replies leave colors empty.
    pub fn generate_colors(&self, prompt: &str, concepts: &[VisualConcept], log: &mut SessionLog) -> Vec<ColorSet> {
        let stage = Stage::Colors;
        let n = concepts.len();
        if n == 0 {
            return Vec::new();
        }
        let objects: Vec<String> =
            concepts.iter().enumerate().map(|(i, c)| format!("[{}] {}", i + 1, c.description)).collect();
        let parsed = self
            .templates
            .render(stage, &[("objects", &objects.join("\n"))])
            .map_err(|e| BridgeError::new(stage, e))
            .and_then(|system| self.ask(stage, system, prompt, log, |r| parse::parse_colors(r, n)));
        let parsed = match parsed {
            Ok(p) => p,
            Err(e) => {
                log.warn(stage, format!("skipping colors: {e}"));
                return vec![ColorSet::default(); n];
            }
        };
        parsed
            .into_iter()
            .enumerate()
            .map(|(i, rgbs)| {
                let Some(rgbs) = rgbs else {
                    log.warn(stage, format!("no colors for object {}", i + 1));
                    return ColorSet::default();
                };
                let mut indices: Vec<u16> = Vec::new();
                for rgb in rgbs {
                    let q = quantize_pixel(rgb, self.palette);
                    if !indices.contains(&q) {
                        indices.push(q);
                    }
                }
                if indices.len() > MAX_COLORS {
                    log.warn(stage, format!("object {} has {} colors, keeping {MAX_COLORS}", i + 1, indices.len()));
                    indices.truncate(MAX_COLORS);
                }
                ColorSet::from_indices(indices)
            })
            .collect()
    }

    /// Per-concept keypoints clamped into each box. Unusable replies leave
    /// keypoints empty.
    pub fn generate_keypoints(&self, prompt: &str, concepts: &[VisualConcept], log: &mut SessionLog) -> Vec<KeypointSet> {
        let stage = Stage::Keypoints;
        let n = concepts.len();
        if n == 0 {
            return Vec::new();
        }
        let objects: Vec<String> = concepts
            .iter()
            .enumerate()
            .map(|(i, c)| format!("[{}] {}: {}", i + 1, c.description, fmt_box(&c.bbox)))
            .collect();
        let parsed = self
            .templates
            .render(stage, &[("objects", &objects.join("\n"))])
            .map_err(|e| BridgeError::new(stage, e))
            .and_then(|system| self.ask(stage, system, prompt, log, |r| parse::parse_points(r, n)));
        let parsed = match parsed {
            Ok(p) => p,
            Err(e) => {
                log.warn(stage, format!("skipping keypoints: {e}"));
                return vec![KeypointSet::default(); n];
            }
        };
        parsed
            .into_iter()
            .zip(concepts)
            .enumerate()
            .map(|(i, (points, c))| {
                let Some(mut points) = points else {
                    log.warn(stage, format!("no keypoints for object {}", i + 1));
                    return KeypointSet::default();
                };
                if points.len() > MAX_KEYPOINTS {
                    log.warn(stage, format!("object {} has {} keypoints, keeping {MAX_KEYPOINTS}", i + 1, points.len()));
                    points.truncate(MAX_KEYPOINTS);
                }
                let raw = KeypointSet::new(points);
                let clamped = raw.clamped_into(&c.bbox);
                for (k, (before, after)) in raw.points.iter().zip(&clamped.points).enumerate() {
                    if before != after {
                        log.events.push(SessionEvent::Clamp {
                            stage,
                            subject: format!("object {} point {}", i + 1, k + 1),
                            before: before.to_vec(),
                            after: after.to_vec(),
                        });
                    }
                }
                clamped
            })
            .collect()
    }

    /// Descriptions, then boxes, colors and keypoints, into a validated
    /// version-0 panel with ids `c0.0`, `c0.1`, ...
    pub fn text_to_panel(&self, prompt: &str, log: &mut SessionLog) -> Result<SemanticPanel, BridgeError> {
        let descriptions = self.generate_descriptions(prompt, log)?;
        let mut panel = SemanticPanel::new(prompt);
        if descriptions.is_empty() {
            return Ok(panel);
        }
        let boxes = self.generate_boxes(prompt, &descriptions, log)?;
        panel.concepts = boxes
            .into_iter()
            .enumerate()
            .map(|(k, (d, b))| VisualConcept::new(format!("c0.{k}"), d, b))
            .collect();
        let colors = self.generate_colors(prompt, &panel.concepts, log);
        for (c, set) in panel.concepts.iter_mut().zip(colors) {
            c.colors = set;
        }
        let keypoints = self.generate_keypoints(prompt, &panel.concepts, log);
        for (c, set) in panel.concepts.iter_mut().zip(keypoints) {
            c.keypoints = set;
        }
        let report = validate_panel(&panel);
        if !report.is_valid() {
            return Err(BridgeError::new(Stage::Keypoints, BridgeErrorKind::Invalid(report)));
        }
        Ok(panel)
    }

    /// Ask for the whole updated panel and turn it into unit ops. A reply
    /// identical to the input yields no ops and the unchanged panel.
    pub fn chat_edit(&self, panel: &SemanticPanel, instruction: &str, log: &mut SessionLog) -> Result<ChatEdit, BridgeError> {
        let stage = Stage::ChatEdit;
        if instruction.trim().is_empty() {
            return Err(BridgeError::new(stage, BridgeErrorKind::EmptyInput("instruction")));
        }
        let report = validate_panel(panel);
        if !report.is_valid() {
            return Err(BridgeError::new(stage, BridgeErrorKind::Invalid(report)));
        }
        let json = panel_to_json(panel);
        let system = self.templates.render(stage, &[("panel", &json)]).map_err(|e| BridgeError::new(stage, e))?;
        self.ask(stage, system, instruction, log, |reply| {
            let text = parse::extract_json_object(reply)?;
            let proposed: SemanticPanel = serde_json::from_str(text).map_err(|e| ParseError::Json(e.to_string()))?;
            let ops = derive_ops(panel, &proposed)?;
            if ops.is_empty() {
                return Ok(ChatEdit { panel: panel.clone(), ops });
            }
            let next = apply_edits(panel, &ops).map_err(|e| ParseError::Invalid(e.to_string()))?;
            Ok(ChatEdit { panel: next, ops })
        })
    }
}

/// Unit ops turning `old` into `proposed`, matched by id.
///
/// Shared ids whose description, colors and keypoints all changed become a
/// Replace; otherwise a box change becomes a Move (same size) or Resize,
/// followed by an AttributeRevise for whatever else changed. Keypoints left
/// untouched on a moved or resized box travel with the box. Unknown ids are
/// added under freshly minted ids. Concept order in the reply is ignored.
pub fn derive_ops(old: &SemanticPanel, proposed: &SemanticPanel) -> Result<Vec<EditOp>, ParseError> {
    let mut seen = std::collections::HashSet::new();
    for c in &proposed.concepts {
        if !seen.insert(&c.id) {
            return Err(ParseError::Invalid(format!("duplicate concept id {}", c.id)));
        }
    }
    let is_old = |id: &ConceptId| old.concept(id).is_some();
    for o in old.concepts.iter().filter(|o| proposed.concept(&o.id).is_none()) {
        if let Some(r) = proposed.concepts.iter().find(|r| !is_old(&r.id) && r.same_content(o)) {
            return Err(ParseError::Invalid(format!("concept {} was renamed to {}; keep existing ids", o.id, r.id)));
        }
    }

    let mut ops = Vec::new();
    for o in &old.concepts {
        let Some(r) = proposed.concept(&o.id) else {
            ops.push(EditOp::Remove { target: o.id.clone() });
            continue;
        };
        if o.same_content(r) {
            continue;
        }
        if r.description != o.description && r.colors != o.colors && r.keypoints != o.keypoints {
            ops.push(EditOp::Replace {
                target: o.id.clone(),
                payload: ConceptDraft {
                    id: None,
                    description: r.description.clone(),
                    bbox: Some(r.bbox),
                    colors: r.colors.clone(),
                    keypoints: r.keypoints.clone(),
                },
            });
            continue;
        }
        let mut carried = o.keypoints.clone();
        if r.bbox != o.bbox {
            let payload = BoxPayload { bbox: r.bbox };
            let op = if r.bbox.w == o.bbox.w && r.bbox.h == o.bbox.h {
                EditOp::Move { target: o.id.clone(), payload }
            } else {
                EditOp::Resize { target: o.id.clone(), payload }
            };
            let single = SemanticPanel { prompt: String::new(), version: 0, concepts: vec![o.clone()] };
            carried = apply_edit(&single, &op).map_err(|e| ParseError::Invalid(e.to_string()))?.concepts[0]
                .keypoints
                .clone();
            ops.push(op);
        }
        let delta = AttributeDelta {
            description: (r.description != o.description).then(|| r.description.clone()),
            colors: (r.colors != o.colors).then(|| r.colors.clone()),
            keypoints: (r.keypoints != o.keypoints && r.keypoints != carried).then(|| r.keypoints.clone()),
        };
        if delta != AttributeDelta::default() {
            ops.push(EditOp::AttributeRevise { target: o.id.clone(), payload: delta });
        }
    }
    for r in proposed.concepts.iter().filter(|r| !is_old(&r.id)) {
        ops.push(EditOp::Add {
            payload: ConceptDraft {
                id: None,
                description: r.description.clone(),
                bbox: Some(r.bbox),
                colors: r.colors.clone(),
                keypoints: r.keypoints.clone(),
            },
        });
    }
    Ok(ops)
}
