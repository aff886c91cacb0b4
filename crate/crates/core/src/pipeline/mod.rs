//! Turns detector/segmenter outputs into panel dataset entries, and
//! generates rule-based pseudo samples.

mod pseudo;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::keypoints::{fps_sample, FpsConfig, MaskError, RegionMask};
use crate::palette::{extract_colors, Palette};
use crate::panel::{box_iou, validate_panel, BoundingBox, ColorSet, SemanticPanel, VisualConcept};

pub use pseudo::{
    gen_pseudo_sample, max_separation_select, relation_holds, separation_score, ObjectPool, PoolColor, PoolObject,
    PseudoConfig, PseudoError, PseudoSample, Relation, RoleGroup,
};

/// Same-description boxes overlapping more than this are duplicates.
pub const DEDUP_IOU: f64 = 0.9;

const SHIPPED_BLACKLIST: &str = include_str!("../../assets/blacklist.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub description: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub mask_path: String,
}

/// One input line: an image, its caption, and what the detector found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub source_id: String,
    pub caption: String,
    pub width: u32,
    pub height: u32,
    /// Pixels used for color extraction; colors stay empty without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub detections: Vec<Detection>,
    /// Answer to "Is there only one element or object in the image?".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa_single_object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesized_caption: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Synthesized,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDetection {
    pub description: String,
    pub reason: String,
}

/// One output line: caption plus panel, with provenance and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEntry {
    pub source_id: String,
    pub caption: String,
    pub provenance: Provenance,
    pub panel: SemanticPanel,
    /// Set when nothing usable survived; such entries should not be trained on.
    pub exclude: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedDetection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("cannot read blacklist {path}: {message}")]
    Blacklist { path: String, message: String },
}

/// Lowercase, trim, collapse whitespace, drop trailing punctuation.
pub fn normalize_description(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .to_string()
}

fn strip_article(s: &str) -> &str {
    for a in ["a ", "an ", "the "] {
        if let Some(rest) = s.strip_prefix(a) {
            return rest;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blacklist {
    phrases: Vec<String>,
}

impl Blacklist {
    pub fn standard() -> &'static Blacklist {
        static B: OnceLock<Blacklist> = OnceLock::new();
        B.get_or_init(|| Blacklist::parse(SHIPPED_BLACKLIST))
    }

    /// One phrase per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        let phrases = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(normalize_description)
            .collect();
        Self { phrases }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        std::fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|e| PipelineError::Blacklist { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn contains(&self, description: &str) -> bool {
        let n = normalize_description(description);
        let bare = strip_article(&n);
        self.phrases.iter().any(|p| p == &n || strip_article(p) == bare)
    }
}

pub fn filter_descriptions(record: &DetectionRecord, blacklist: &Blacklist) -> DetectionRecord {
    let mut out = record.clone();
    out.detections.retain(|d| !blacklist.contains(&d.description));
    out
}

/// Greedy sweep by descending confidence (ties to the earlier detection):
/// a detection is dropped when a kept one has the same normalized
/// description and IoU above 0.9. Survivors keep their input order.
pub fn dedup_boxes(record: &DetectionRecord) -> DetectionRecord {
    let dets = &record.detections;
    let keys: Vec<String> = dets.iter().map(|d| normalize_description(&d.description)).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let dup = kept.iter().any(|&k| keys[k] == keys[i] && box_iou(&dets[k].bbox, &dets[i].bbox) > DEDUP_IOU);
        if !dup {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let mut out = record.clone();
    out.detections = kept.into_iter().map(|i| dets[i].clone()).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditDecision {
    Keep,
    Replace,
}

/// "No" (more than one object) marks the caption for replacement; "Yes"
/// keeps it; a missing or unrecognized answer keeps it with a warning.
pub fn caption_audit(record: &DetectionRecord) -> (AuditDecision, Option<String>) {
    let Some(answer) = &record.vqa_single_object else {
        return (AuditDecision::Keep, Some("no single-object answer; keeping raw caption".into()));
    };
    let a = answer.trim().trim_end_matches(['.', '!']).trim().to_lowercase();
    let first = a.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("");
    match first {
        "no" => (AuditDecision::Replace, None),
        "yes" => (AuditDecision::Keep, None),
        _ => (AuditDecision::Keep, Some(format!("unrecognized single-object answer {answer:?}; keeping raw caption"))),
    }
}

/// Per-detection FPS seed derived from the source id.
pub fn detection_seed(source_id: &str, index: usize) -> u64 {
    let d = Sha256::digest(format!("{source_id}#{index}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    match base {
        Some(b) if Path::new(p).is_relative() => b.join(p),
        _ => PathBuf::from(p),
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions<'a> {
    pub palette: &'a Palette,
    pub blacklist: &'a Blacklist,
    /// Relative mask and image paths resolve against this directory.
    pub base_dir: Option<PathBuf>,
}

impl Default for IngestOptions<'static> {
    fn default() -> Self {
        Self { palette: Palette::standard(), blacklist: Blacklist::standard(), base_dir: None }
    }
}

fn load_image(record: &DetectionRecord, base: Option<&Path>) -> Result<Option<RgbImage>, String> {
    let Some(p) = &record.image_path else { return Ok(None) };
    let path = resolve(base, p);
    let img = image::open(&path).map_err(|e| format!("cannot read image {}: {e}", path.display()))?.into_rgb8();
    if (img.width(), img.height()) != (record.width, record.height) {
        return Err(format!(
            "image {} is {}x{}, record says {}x{}",
            path.display(),
            img.width(),
            img.height(),
            record.width,
            record.height
        ));
    }
    Ok(Some(img))
}

/// filter, dedup, caption audit, then colors and keypoints per detection.
pub fn ingest_record(record: &DetectionRecord, opts: &IngestOptions<'_>) -> PanelEntry {
    let base = opts.base_dir.as_deref();
    let mut warnings = Vec::new();
    let mut skipped = Vec::new();

    let (decision, warning) = caption_audit(record);
    warnings.extend(warning);
    let (caption, provenance) = match (decision, &record.synthesized_caption) {
        (AuditDecision::Replace, Some(c)) => (c.clone(), Provenance::Synthesized),
        (AuditDecision::Replace, None) => {
            warnings.push("caption marked for replacement but no synthesized caption supplied".into());
            (record.caption.clone(), Provenance::Raw)
        }
        (AuditDecision::Keep, _) => (record.caption.clone(), Provenance::Raw),
    };

    let before = record.detections.len();
    let cleaned = dedup_boxes(&filter_descriptions(record, opts.blacklist));
    let dropped = before - cleaned.detections.len();
    if dropped > 0 {
        tracing::debug!(source = %record.source_id, dropped, "filtered detections");
    }

    let image = match load_image(record, base) {
        Ok(img) => img,
        Err(e) => {
            warnings.push(format!("{e}; colors left empty"));
            None
        }
    };
    if image.is_none() && record.image_path.is_none() && !cleaned.detections.is_empty() {
        warnings.push("no image_path; colors left empty".into());
    }

    let mut panel = SemanticPanel::new(caption.clone());
    for (k, det) in cleaned.detections.iter().enumerate() {
        let skip = |reason: String| SkippedDetection { description: det.description.clone(), reason };
        if det.description.trim().is_empty() {
            skipped.push(skip("empty description".into()));
            continue;
        }
        if !det.bbox.is_valid() {
            skipped.push(skip(format!("invalid box {:?}", <[f64; 4]>::from(det.bbox))));
            continue;
        }
        let mask = match RegionMask::read_pgm(&resolve(base, &det.mask_path)) {
            Ok(m) if (m.width, m.height) != (record.width as usize, record.height as usize) => {
                Err(MaskError::Dimensions {
                    got_w: m.width,
                    got_h: m.height,
                    want_w: record.width as usize,
                    want_h: record.height as usize,
                })
            }
            other => other,
        };
        let mask = match mask {
            Ok(m) => m.with_owner(det.bbox),
            Err(e) => {
                tracing::warn!(source = %record.source_id, detection = %det.description, "{e}");
                skipped.push(skip(e.to_string()));
                continue;
            }
        };
        let keypoints = match fps_sample(&mask, &FpsConfig::with_seed(detection_seed(&record.source_id, k))) {
            Ok(kp) => kp.clamped_into(&det.bbox),
            Err(e) => {
                skipped.push(skip(e.to_string()));
                continue;
            }
        };
        let colors = match &image {
            Some(img) => {
                let pixels: Vec<[u8; 3]> = mask.set_pixels().map(|i| img.as_raw()[i * 3..i * 3 + 3].try_into().expect("3 bytes")).collect();
                extract_colors(&pixels, opts.palette).unwrap_or_default()
            }
            None => ColorSet::default(),
        };
        let mut concept = VisualConcept::new(format!("c0.{}", panel.concepts.len()), det.description.trim(), det.bbox);
        concept.colors = colors;
        concept.keypoints = keypoints;
        panel.concepts.push(concept);
    }

    let report = validate_panel(&panel);
    if !report.is_valid() {
        warnings.push(format!("panel failed validation: {report}"));
        panel.concepts.clear();
    }
    let exclude = panel.concepts.is_empty();
    PanelEntry { source_id: record.source_id.clone(), caption, provenance, panel, exclude, skipped, warnings }
}

/// Parse JSONL records; blank lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<DetectionRecord>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Record { line: i + 1, message: e.to_string() }))
        .collect()
}

/// Ingest records in parallel; output ordered by source id.
pub fn ingest_all(records: &[DetectionRecord], opts: &IngestOptions<'_>) -> Vec<PanelEntry> {
    let mut out: Vec<PanelEntry> = records.par_iter().map(|r| ingest_record(r, opts)).collect();
    out.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    out
}
