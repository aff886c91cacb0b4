//! `panel` command-line frontend.

use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use semantic_panel::edit::{apply_edits, diff_panels, EditOp};
use semantic_panel::encoder::{
    assemble_condition_map, build_attention_mask, write_attention_mask, write_condition, write_weights, EncoderWeights,
    LatentGrid, PatchGrid, TextEmbedder,
};
use semantic_panel::llm::{derive_ops, Bridge, SessionLog};
use semantic_panel::palette::Palette;
use semantic_panel::panel::{panel_from_json, panel_to_json, SemanticPanel};
use semantic_panel::pipeline::{
    gen_pseudo_sample, ingest_all, max_separation_select, parse_records, Blacklist, IngestOptions, ObjectPool,
    PanelEntry, Provenance, PseudoConfig, Relation,
};
use semantic_panel::render::{encode_image, render_edit, render_panel, ImageKind, RenderConfig};

use crate::api::{router, AppState};
use crate::config::{build_provider, Encoding, ProviderKind, DEFAULT_CHANNELS, DEFAULT_COLOR_DIM, DEFAULT_TEXT_DIM};

/// Failure reported on stderr as JSON, tagged with the module it came from.
#[derive(Debug)]
pub struct CliError {
    pub module: &'static str,
    pub message: String,
    pub stage: Option<String>,
}

impl CliError {
    pub fn new(module: &'static str, message: impl ToString) -> Self {
        Self { module, message: message.to_string(), stage: None }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut e = json!({ "module": self.module, "message": self.message });
        if let Some(s) = &self.stage {
            e["stage"] = json!(s);
        }
        json!({ "error": e })
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "panel", version, about = "Build, edit, encode and serve semantic scene panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ProviderArgs {
    /// Chat provider. HTTP settings come from PANEL_LLM_BASE_URL,
    /// PANEL_LLM_API_KEY and PANEL_LLM_MODEL.
    #[arg(long, value_enum, default_value = "auto", env = "PANEL_PROVIDER")]
    pub provider: ProviderKind,
    /// Mock transcript (JSON) replayed instead of a live model.
    #[arg(long, env = "PANEL_MOCK_TRANSCRIPT")]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Png,
    Ppm,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a panel from a prompt through the chat provider.
    Gen {
        #[arg(long)]
        prompt: String,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the session log (every exchange, retry and clamp) here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Apply an op, an array of ops, or `{"ops": [...]}` to a panel.
    Edit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        op: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the condition tensor (RANC) and optionally the attention mask (RANM).
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 512)]
        w: u32,
        #[arg(long, default_value_t = 512)]
        h: u32,
        /// RANW weights file; seeded defaults when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        attention: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        patch: u32,
    },
    /// Rasterize a panel, or an edit from `--from` to `--in`.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        w: u32,
        #[arg(long, default_value_t = 256)]
        h: u32,
        #[arg(long, value_enum, default_value = "png")]
        format: ImageFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adjusted concepts and the unit ops between two panels.
    Diff {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
    },
    /// Detection records (JSONL) to panel entries (JSONL). `-` is stdin/stdout.
    Ingest {
        #[arg(long = "in", default_value = "-")]
        input: String,
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long)]
        blacklist: Option<PathBuf>,
        /// Directory relative mask and image paths resolve against;
        /// defaults to the input file's directory.
        #[arg(long)]
        base_dir: Option<PathBuf>,
    },
    /// Pseudo samples as panel entries (JSONL).
    Pseudo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        relation: Option<String>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Candidates generated per sample; the best separated is kept.
        #[arg(long, default_value_t = 4)]
        candidates: usize,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Write seeded encoder weights (RANW).
    Weights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TEXT_DIM)]
        text_dim: usize,
        #[arg(long, default_value_t = DEFAULT_COLOR_DIM)]
        color_dim: usize,
        #[arg(long, default_value_t = DEFAULT_CHANNELS)]
        channels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080", env = "PANEL_LISTEN")]
        addr: SocketAddr,
        #[arg(long, env = "PANEL_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "PANEL_WEIGHTS")]
        weights: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

fn read_text(module: &'static str, path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::new(module, format!("{}: {e}", path.display())))
}

fn read_panel(path: &Path) -> CliResult<SemanticPanel> {
    panel_from_json(&read_text("panel-core", path)?).map_err(|e| CliError::new("panel-core", format!("{}: {e}", path.display())))
}

fn write_out(module: &'static str, out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, bytes).map_err(|e| CliError::new(module, format!("{}: {e}", p.display())))
        }
        _ => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(|e| CliError::new(module, e))
        }
    }
}

fn with_newline(mut s: String) -> Vec<u8> {
    s.push('\n');
    s.into_bytes()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OpFile {
    One(EditOp),
    Many(Vec<EditOp>),
    Batch { ops: Vec<EditOp> },
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen { prompt, provider, out, log } => {
            let p = build_provider(provider.provider, provider.transcript.as_deref())
                .map_err(|e| CliError::new("llm-bridge", e))?
                .ok_or_else(|| CliError::new("llm-bridge", "no chat provider configured (pass --transcript or set PANEL_LLM_BASE_URL)"))?;
            let bridge = Bridge::new(p);
            let mut session = SessionLog::default();
            let result = bridge.text_to_panel(&prompt, &mut session);
            if let Some(path) = &log {
                let text = serde_json::to_string_pretty(&session).expect("log serializes");
                write_out("llm-bridge", Some(path), &with_newline(text))?;
            }
            let panel = result.map_err(|e| CliError { module: "llm-bridge", message: e.to_string(), stage: Some(e.stage.to_string()) })?;
            write_out("llm-bridge", out.as_deref(), &with_newline(panel_to_json(&panel)))
        }
        Command::Edit { input, op, out } => {
            let panel = read_panel(&input)?;
            let ops = match serde_json::from_str::<OpFile>(&read_text("panel-edit", &op)?)
                .map_err(|e| CliError::new("panel-edit", format!("{}: {e}", op.display())))?
            {
                OpFile::One(o) => vec![o],
                OpFile::Many(v) | OpFile::Batch { ops: v } => v,
            };
            let next = apply_edits(&panel, &ops).map_err(|e| CliError::new("panel-edit", e))?;
            write_out("panel-edit", out.as_deref(), &with_newline(panel_to_json(&next)))
        }
        Command::Encode { input, w, h, weights, out, attention, patch } => {
            let panel = read_panel(&input)?;
            let enc = Encoding::load(weights.as_deref()).map_err(|e| CliError::new("condition-encoder", e))?;
            let grid = LatentGrid::for_image(w as usize, h as usize, enc.weights.channels)
                .map_err(|e| CliError::new("condition-encoder", e))?;
            let map = assemble_condition_map(&panel, &grid, &enc.embedder, &enc.weights)
                .map_err(|e| CliError::new("condition-encoder", e))?;
            let mut buf = Vec::new();
            write_condition(&mut buf, &map.data).map_err(|e| CliError::new("condition-encoder", e))?;
            write_out("condition-encoder", Some(&out), &buf)?;
            if let Some(path) = attention {
                if patch == 0 || w % patch != 0 || h % patch != 0 {
                    return Err(CliError::new("condition-encoder", format!("{w}x{h} is not a multiple of patch size {patch}")));
                }
                let tokens = enc.embedder.tokenize(&panel.prompt);
                let mask = build_attention_mask(&panel, PatchGrid::new((h / patch) as usize, (w / patch) as usize), &tokens, &enc.embedder);
                let mut buf = Vec::new();
                write_attention_mask(&mut buf, &mask).map_err(|e| CliError::new("condition-encoder", e))?;
                write_out("condition-encoder", Some(&path), &buf)?;
            }
            Ok(())
        }
        Command::Render { input, from, w, h, format, out } => {
            let panel = read_panel(&input)?;
            let cfg = RenderConfig::sized(w, h);
            let palette = Palette::standard();
            let img = match from {
                Some(old) => render_edit(&read_panel(&old)?, &panel, &cfg, palette),
                None => render_panel(&panel, &cfg, palette),
            }
            .map_err(|e| CliError::new("toy-renderer", e))?;
            let kind = match format {
                ImageFormat::Png => ImageKind::Png,
                ImageFormat::Ppm => ImageKind::Ppm,
            };
            let bytes = encode_image(&img, kind).map_err(|e| CliError::new("toy-renderer", e))?;
            write_out("toy-renderer", Some(&out), &bytes)
        }
        Command::Diff { old, new } => {
            let (a, b) = (read_panel(&old)?, read_panel(&new)?);
            let diff = diff_panels(&a, &b);
            let ops = derive_ops(&a, &b).map_err(|e| CliError::new("panel-edit", e))?;
            let text = serde_json::to_string_pretty(&json!({ "adjusted": diff.adjusted, "ops": ops })).expect("diff serializes");
            write_out("panel-edit", None, &with_newline(text))
        }
        Command::Ingest { input, out, blacklist, base_dir } => {
            let text = if input == "-" {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s).map_err(|e| CliError::new("data-pipeline", e))?;
                s
            } else {
                read_text("data-pipeline", Path::new(&input))?
            };
            let records = parse_records(&text).map_err(|e| CliError::new("data-pipeline", e))?;
            let bl = match blacklist {
                Some(p) => Blacklist::load(&p).map_err(|e| CliError::new("data-pipeline", e))?,
                None => Blacklist::standard().clone(),
            };
            let base = base_dir.or_else(|| (input != "-").then(|| Path::new(&input).parent().map(Path::to_path_buf)).flatten());
            let opts = IngestOptions { palette: Palette::standard(), blacklist: &bl, base_dir: base };
            let mut buf = String::new();
            for entry in ingest_all(&records, &opts) {
                buf.push_str(&serde_json::to_string(&entry).expect("entries serialize"));
                buf.push('\n');
            }
            write_out("data-pipeline", Some(Path::new(&out)), buf.as_bytes())
        }
        Command::Pseudo { seed, relation, n, candidates, pool, out } => {
            let pool = match pool {
                Some(p) => ObjectPool::from_json(&read_text("data-pipeline", &p)?).map_err(|e| CliError::new("data-pipeline", e))?,
                None => ObjectPool::standard().clone(),
            };
            let fixed = relation.map(|r| r.parse::<Relation>()).transpose().map_err(|e| CliError::new("data-pipeline", e))?;
            let cfg = PseudoConfig::default();
            let per = candidates.max(1) as u64;
            let mut buf = String::new();
            for i in 0..n as u64 {
                let rel = fixed.unwrap_or(Relation::ALL[((seed + i) % Relation::ALL.len() as u64) as usize]);
                let base = seed.wrapping_mul(1_000_003).wrapping_add(i * per);
                let samples = (0..per)
                    .map(|c| gen_pseudo_sample(base + c, rel, &pool, &cfg))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::new("data-pipeline", e))?;
                let panels: Vec<SemanticPanel> = samples.iter().map(|s| s.panel.clone()).collect();
                let best = &samples[max_separation_select(&panels, 1)[0]];
                let entry = PanelEntry {
                    source_id: format!("pseudo/{rel}/{seed}/{i}"),
                    caption: best.prompt.clone(),
                    provenance: Provenance::Pseudo,
                    panel: best.panel.clone(),
                    exclude: false,
                    skipped: vec![],
                    warnings: vec![],
                };
                buf.push_str(&serde_json::to_string(&entry).expect("entries serialize"));
                buf.push('\n');
            }
            write_out("data-pipeline", Some(Path::new(&out)), buf.as_bytes())
        }
        Command::Weights { seed, text_dim, color_dim, channels, out } => {
            let w = EncoderWeights::from_seed(seed, text_dim, color_dim, channels);
            let mut buf = Vec::new();
            write_weights(&mut buf, &w).map_err(|e| CliError::new("condition-encoder", e))?;
            write_out("condition-encoder", Some(&out), &buf)
        }
        Command::Serve { addr, data_dir, weights, provider } => {
            let p = build_provider(provider.provider, provider.transcript.as_deref()).map_err(|e| CliError::new("llm-bridge", e))?;
            if p.is_none() {
                tracing::warn!("no chat provider configured; llm sessions and chat are disabled");
            }
            let enc = Encoding::load(weights.as_deref()).map_err(|e| CliError::new("condition-encoder", e))?;
            let state = Arc::new(AppState::new(data_dir, p, enc).map_err(|e| CliError::new("service-cli", e))?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("service-cli", e))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::new("service-cli", e))?;
                tracing::info!(%addr, sessions = state.session_count(), "listening");
                axum::serve(listener, router(state)).await.map_err(|e| CliError::new("service-cli", e))
            })
        }
    }
}
