use serde::Serialize;

use super::TextEmbedder;
use crate::panel::{ConceptId, SemanticPanel};

/// Token range `[start, end)` of a description inside the prompt.
/// `fallback` marks a description that was not found, in which case the
/// span covers the whole prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub fallback: bool,
}

impl TokenSpan {
    pub fn contains(&self, token: usize) -> bool {
        (self.start..self.end).contains(&token)
    }
}

/// First occurrence of the description's tokens in the prompt tokens.
pub fn locate_description_tokens(prompt_tokens: &[String], description: &str, embedder: &dyn TextEmbedder) -> TokenSpan {
    let needle = embedder.tokenize(description);
    let whole = TokenSpan { start: 0, end: prompt_tokens.len(), fallback: true };
    if needle.is_empty() || needle.len() > prompt_tokens.len() {
        return whole;
    }
    prompt_tokens
        .windows(needle.len())
        .position(|w| w == needle.as_slice())
        .map(|start| TokenSpan { start, end: start + needle.len(), fallback: false })
        .unwrap_or(whole)
}

/// Image patch layout of one cross-attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalized center of patch `index` (row-major).
    pub fn center(&self, index: usize) -> (f64, f64) {
        let (r, c) = (index / self.cols, index % self.cols);
        ((c as f64 + 0.5) / self.cols as f64, (r as f64 + 0.5) / self.rows as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptSpan {
    pub id: ConceptId,
    pub span: TokenSpan,
    pub patches: Vec<usize>,
}

/// Binary `(N_I, N_T)` mask: rows are image patches, columns prompt tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub n_patches: usize,
    pub n_tokens: usize,
    pub bits: Vec<u8>,
    pub spans: Vec<ConceptSpan>,
}

impl AttentionMask {
    pub fn get(&self, patch: usize, token: usize) -> u8 {
        self.bits[patch * self.n_tokens + token]
    }

    pub fn row(&self, patch: usize) -> &[u8] {
        &self.bits[patch * self.n_tokens..(patch + 1) * self.n_tokens]
    }
}

/// Patches inside a concept's box attend only to that concept's description
/// tokens (OR-ed across overlapping concepts); patches claimed by no concept
/// keep an all-ones row.
pub fn build_attention_mask(
    panel: &SemanticPanel,
    grid: PatchGrid,
    prompt_tokens: &[String],
    embedder: &dyn TextEmbedder,
) -> AttentionMask {
    let (n_i, n_t) = (grid.len(), prompt_tokens.len());
    let spans: Vec<ConceptSpan> = panel
        .concepts
        .iter()
        .map(|c| {
            let corners = c.bbox.corners();
            let patches = (0..n_i)
                .filter(|&p| {
                    let (x, y) = grid.center(p);
                    corners.contains_center(x, y)
                })
                .collect();
            ConceptSpan {
                id: c.id.clone(),
                span: locate_description_tokens(prompt_tokens, &c.description, embedder),
                patches,
            }
        })
        .collect();

    let mut claimed = vec![false; n_i];
    let mut bits = vec![0u8; n_i * n_t];
    for s in &spans {
        for &p in &s.patches {
            claimed[p] = true;
            bits[p * n_t + s.span.start..p * n_t + s.span.end].fill(1);
        }
    }
    for (p, _) in claimed.iter().enumerate().filter(|(_, &c)| !c) {
        bits[p * n_t..(p + 1) * n_t].fill(1);
    }
    AttentionMask { n_patches: n_i, n_tokens: n_t, bits, spans }
}
