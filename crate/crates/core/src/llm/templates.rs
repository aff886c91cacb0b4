//! System-prompt templates, one per stage, with `{{name}}` slots.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::Stage;

pub const STAGES: [Stage; 5] = [Stage::Descriptions, Stage::Boxes, Stage::Colors, Stage::Keypoints, Stage::ChatEdit];

fn builtin_text(stage: Stage) -> &'static str {
    match stage {
        Stage::Descriptions => include_str!("../../assets/prompts/descriptions.txt"),
        Stage::Boxes => include_str!("../../assets/prompts/boxes.txt"),
        Stage::Colors => include_str!("../../assets/prompts/colors.txt"),
        Stage::Keypoints => include_str!("../../assets/prompts/keypoints.txt"),
        Stage::ChatEdit => include_str!("../../assets/prompts/chat_edit.txt"),
    }
}

fn slot() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").expect("static regex"))
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("cannot read template {path}: {message}")]
    Read { path: String, message: String },
    #[error("{stage} template slot {{{{{name}}}}} has no value")]
    Unfilled { stage: Stage, name: String },
}

/// Drop a leading `# template: ...` header line.
fn strip_header(text: &str) -> String {
    match text.split_once('\n') {
        Some((first, rest)) if first.starts_with("# template:") => rest.to_string(),
        None if text.starts_with("# template:") => String::new(),
        _ => text.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplateSet {
    templates: BTreeMap<&'static str, String>,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplateSet {
    /// The shipped v1 templates.
    pub fn builtin() -> Self {
        Self { templates: STAGES.iter().map(|&s| (s.name(), strip_header(builtin_text(s)))).collect() }
    }

    /// Built-in set with any `<stage>.txt` found in `dir` taking precedence.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for stage in STAGES {
            let path = dir.join(format!("{}.txt", stage.name()));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| TemplateError::Read { path: path.display().to_string(), message: e.to_string() })?;
            set.templates.insert(stage.name(), strip_header(&text));
        }
        Ok(set)
    }

    pub fn with_template(mut self, stage: Stage, text: impl Into<String>) -> Self {
        self.templates.insert(stage.name(), strip_header(&text.into()));
        self
    }

    pub fn raw(&self, stage: Stage) -> &str {
        &self.templates[stage.name()]
    }

    /// Slot names in order of first appearance.
    pub fn slots(&self, stage: Stage) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in slot().captures_iter(self.raw(stage)) {
            if !out.iter().any(|s| s == &cap[1]) {
                out.push(cap[1].to_string());
            }
        }
        out
    }

    /// Substitute every slot in one pass; injected values are not rescanned.
    pub fn render(&self, stage: Stage, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let text = self.raw(stage);
        if let Some(missing) = self.slots(stage).into_iter().find(|s| !values.iter().any(|(k, _)| k == s)) {
            return Err(TemplateError::Unfilled { stage, name: missing });
        }
        Ok(slot()
            .replace_all(text, |cap: &regex::Captures| {
                values.iter().find(|(k, _)| *k == &cap[1]).map(|(_, v)| v.to_string()).unwrap_or_default()
            })
            .trim_end()
            .to_string())
    }
}
