//! Encoder weights and chat provider selection shared by the CLI and server.

use std::path::Path;
use std::sync::Arc;

use clap::ValueEnum;
use semantic_panel::encoder::{read_weights, EncoderWeights, HashEmbedder};
use semantic_panel::llm::{ChatProvider, HttpChatProvider, HttpProviderConfig, MockProvider, RetryPolicy, Retrying, ENV_BASE_URL};

pub const DEFAULT_TEXT_DIM: usize = 32;
pub const DEFAULT_COLOR_DIM: usize = 16;
pub const DEFAULT_CHANNELS: usize = 4;
pub const DEFAULT_WEIGHT_SEED: u64 = 0;

/// Encoder weights plus a text embedder of matching width.
pub struct Encoding {
    pub weights: EncoderWeights,
    pub embedder: HashEmbedder,
}

impl Encoding {
    pub fn seeded(seed: u64) -> Self {
        Self::from_weights(EncoderWeights::from_seed(seed, DEFAULT_TEXT_DIM, DEFAULT_COLOR_DIM, DEFAULT_CHANNELS))
    }

    pub fn from_weights(weights: EncoderWeights) -> Self {
        let embedder = HashEmbedder::new(weights.text_dim);
        Self { weights, embedder }
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else { return Ok(Self::seeded(DEFAULT_WEIGHT_SEED)) };
        let mut f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let w = read_weights(&mut std::io::BufReader::new(&mut f)).map_err(|e| format!("{}: {e}", path.display()))?;
        w.check().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::from_weights(w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// Mock when a transcript is given, else HTTP when configured, else none.
    Auto,
    None,
    Mock,
    Http,
}

pub type SharedProvider = Arc<dyn ChatProvider>;

pub fn build_provider(kind: ProviderKind, transcript: Option<&Path>) -> Result<Option<SharedProvider>, String> {
    let mock = |path: &Path| -> Result<Option<SharedProvider>, String> {
        Ok(Some(Arc::new(MockProvider::load(path).map_err(|e| e.to_string())?)))
    };
    let http = || -> Result<Option<SharedProvider>, String> {
        let cfg = HttpProviderConfig::from_env().ok_or_else(|| format!("{ENV_BASE_URL} is not set"))?;
        Ok(Some(Arc::new(Retrying::new(HttpChatProvider::new(cfg), RetryPolicy::default()))))
    };
    match (kind, transcript) {
        (ProviderKind::None, _) => Ok(None),
        (ProviderKind::Mock, Some(p)) | (ProviderKind::Auto, Some(p)) => mock(p),
        (ProviderKind::Mock, None) => Err("mock provider needs a transcript file".into()),
        (ProviderKind::Http, _) => http(),
        (ProviderKind::Auto, None) if HttpProviderConfig::from_env().is_some() => http(),
        (ProviderKind::Auto, None) => Ok(None),
    }
}
