//! Acceptance gate: one PASS/FAIL line per criterion, each checked against
//! an independent oracle and its runtime bound.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semantic_panel::edit::{
    apply_edit, blend_latents, AttributeDelta, BoxPayload, ConceptDraft, EditOp, EditableRegionMask, LatentTensor,
};
use semantic_panel::encoder::{
    assemble_condition_map, build_attention_mask, read_condition, write_condition, EncoderWeights, HashEmbedder,
    LatentGrid, PatchGrid, TextEmbedder,
};
use semantic_panel::keypoints::{fps_sample, FpsConfig, RegionMask};
use semantic_panel::llm::{Bridge, MockProvider, SessionLog};
use semantic_panel::palette::{extract_colors, quantize_pixel, Palette};
use semantic_panel::panel::{panel_to_json, validate_panel, BinaryGrid, BoundingBox, ColorEntry, ConceptId, SemanticPanel};
use semantic_panel::pipeline::{dedup_boxes, gen_pseudo_sample, Detection, DetectionRecord, ObjectPool, PseudoConfig, Relation};

use common::{center_in_box, changed_boxes, iou, random_box, random_colors, random_panel, random_points_in, relations, WORDS};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn blend_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut extremes = 0;
    for t in 0..1000 {
        let (c, h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=16), rng.gen_range(1..=16));
        let mut tensor = || {
            let data = (0..c * h * w).map(|_| rng.gen_range(-100.0f32..100.0)).collect();
            LatentTensor::from_vec(c, h, w, data).unwrap()
        };
        let (old, new) = (tensor(), tensor());
        let mode = t % 10;
        let cells: Vec<u8> = (0..h * w)
            .map(|_| match mode {
                0 => 0,
                1 => 1,
                _ => rng.gen_range(0..=1),
            })
            .collect();
        let mask = EditableRegionMask(BinaryGrid { height: h, width: w, cells: cells.clone() });
        let got = blend_latents(&old, &new, &mask).map_err(|e| e.to_string())?;
        for ch in 0..c {
            for i in 0..h * w {
                let m = f32::from(cells[i]);
                let want = m * new.data[ch * h * w + i] + (1.0 - m) * old.data[ch * h * w + i];
                let g = got.data[ch * h * w + i];
                ensure(g.to_bits() == want.to_bits(), || format!("triple {t} ch {ch} cell {i}: {g} vs {want}"))?;
            }
        }
        let bits = |x: &LatentTensor| x.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if mode == 0 {
            ensure(bits(&got) == bits(&old), || format!("triple {t}: zero mask altered x_old"))?;
            extremes += 1;
        }
        if mode == 1 {
            ensure(bits(&got) == bits(&new), || format!("triple {t}: unit mask differs from x_new"))?;
            extremes += 1;
        }
    }
    Ok(format!("1000 triples, {extremes} extreme masks"))
}

fn random_op(rng: &mut ChaCha8Rng, kind: &str, panel: &SemanticPanel) -> EditOp {
    let target = panel.concepts.choose(rng).unwrap().id.clone();
    let draft = |rng: &mut ChaCha8Rng| {
        let bbox = random_box(rng);
        let mut d = ConceptDraft::new(*WORDS.choose(rng).unwrap(), bbox);
        d.colors = random_colors(rng);
        d.keypoints = random_points_in(rng, &bbox);
        d
    };
    match kind {
        "Add" => EditOp::Add { payload: draft(rng) },
        "Remove" => EditOp::Remove { target },
        "Replace" => EditOp::Replace { target, payload: draft(rng) },
        "Resize" => EditOp::Resize { target, payload: BoxPayload { bbox: random_box(rng) } },
        "Move" => {
            let old = panel.concept(&target).unwrap().bbox;
            let bbox = BoundingBox::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0), old.w, old.h);
            EditOp::Move { target, payload: BoxPayload { bbox } }
        }
        "AttributeRevise" => {
            let delta = AttributeDelta {
                description: rng.gen_bool(0.5).then(|| WORDS.choose(rng).unwrap().to_string()),
                colors: Some(random_colors(rng)),
                keypoints: None,
            };
            EditOp::AttributeRevise { target, payload: delta }
        }
        _ => unreachable!(),
    }
}

fn region_preservation() -> Outcome {
    use semantic_panel::render::{render_edit, render_panel, RenderConfig};
    let kinds = ["Add", "Remove", "Replace", "Resize", "Move", "AttributeRevise"];
    let palette = Palette::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut outside_pixels = 0usize;
    for kind in kinds {
        for n in 0..100 {
            let old = random_panel(&mut rng, 1, 5);
            let op = random_op(&mut rng, kind, &old);
            let new = apply_edit(&old, &op).map_err(|e| format!("{kind} #{n}: {e}"))?;
            let (w, h) = (8 * rng.gen_range(4..=12u32), 8 * rng.gen_range(4..=12u32));
            let cfg = RenderConfig::sized(w, h);
            let edited = render_edit(&old, &new, &cfg, palette).map_err(|e| e.to_string())?;
            let before = render_panel(&old, &cfg, palette).map_err(|e| e.to_string())?;
            let after = render_panel(&new, &cfg, palette).map_err(|e| e.to_string())?;
            let boxes = changed_boxes(&old, &new);
            let (lw, lh) = (w / 8, h / 8);
            for y in 0..h {
                for x in 0..w {
                    let (cx, cy) = ((f64::from(x / 8) + 0.5) / f64::from(lw), (f64::from(y / 8) + 0.5) / f64::from(lh));
                    let editable = boxes.iter().any(|b| center_in_box(b, cx, cy));
                    let got = edited.get_pixel(x, y);
                    if editable {
                        ensure(got == after.get_pixel(x, y), || format!("{kind} #{n}: ({x},{y}) inside region not from new render"))?;
                    } else {
                        outside_pixels += 1;
                        ensure(got == before.get_pixel(x, y), || format!("{kind} #{n}: ({x},{y}) outside region changed"))?;
                    }
                }
            }
        }
    }
    Ok(format!("6 kinds x 100 panels, {outside_pixels} preserved pixels"))
}

fn fps_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for t in 0..200u64 {
        let (h, w) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let density = rng.gen_range(0.05..=1.0);
        let mut cells: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(density)).collect();
        if !cells.iter().any(|&c| c) {
            cells[rng.gen_range(0..h * w)] = true;
        }
        let n = cells.iter().filter(|&&c| c).count();
        let first = ChaCha8Rng::seed_from_u64(t).gen_range(0..n);
        let want = common::fps_oracle(&cells, h, w, first, 8, 0.1);
        let got = fps_sample(&RegionMask::new(h, w, cells), &FpsConfig::with_seed(t)).map_err(|e| e.to_string())?;
        ensure(got.points == want, || format!("mask {t} ({h}x{w}): {:?} vs {want:?}", got.points))?;
    }
    // Stop conditions on constructed masks.
    let run = |mask: RegionMask| fps_sample(&mask, &FpsConfig::with_seed(5)).unwrap().points.len();
    ensure(run(RegionMask::from_fn(32, 32, |_, _| true)) == 8, || "full mask should hit the 8-point cap".into())?;
    ensure(run(RegionMask::from_fn(32, 32, |r, c| (10..12).contains(&r) && (10..12).contains(&c))) == 1, || {
        "2x2 blob is within 0.1 of its first point".into()
    })?;
    ensure(run(RegionMask::from_fn(32, 32, |r, c| r == 16 && (c == 2 || c == 29))) == 2, || "two far pixels give 2 points".into())?;
    let three = RegionMask::from_fn(32, 32, |r, c| (r == 2 && c == 2) || (r == 2 && c == 4) || (r == 29 && c == 29));
    ensure(run(three) == 2, || "a neighbor 2/32 away is below the threshold".into())?;
    Ok("200 random masks exact, 4 stop cases".into())
}

fn color_extraction() -> Outcome {
    let palette = Palette::standard();
    let rgb: Vec<[u8; 3]> = palette.entries().iter().map(|e| e.rgb).collect();
    let region = |spec: &[(usize, usize)]| -> Vec<[u8; 3]> {
        spec.iter().flat_map(|&(i, n)| std::iter::repeat_n(rgb[i], n)).collect()
    };
    let entries = |spec: &[(u16, f64)]| -> Vec<ColorEntry> {
        spec.iter().map(|&(index, p)| ColorEntry { index, proportion: Some(p) }).collect()
    };
    let got = extract_colors(&region(&[(10, 50), (40, 30), (80, 20)]), palette).unwrap();
    ensure(got.entries == entries(&[(10, 0.5), (40, 0.3), (80, 0.2)]), || format!("histogram: {got:?}"))?;

    let got = extract_colors(&region(&[(7, 95), (90, 5)]), palette).unwrap();
    ensure(got.entries == entries(&[(7, 0.95)]), || format!("exactly 5% must be dropped: {got:?}"))?;
    let got = extract_colors(&region(&[(7, 94), (90, 6)]), palette).unwrap();
    ensure(got.entries == entries(&[(7, 0.94), (90, 0.06)]), || format!("6% must be kept: {got:?}"))?;

    let counts = [20, 18, 16, 14, 12, 10, 6, 4];
    let idx = [100usize, 20, 60, 140, 30, 70, 110, 150];
    let spec: Vec<(usize, usize)> = idx.iter().copied().zip(counts).collect();
    let got = extract_colors(&region(&spec), palette).unwrap();
    let want: Vec<(u16, f64)> = spec.iter().take(6).map(|&(i, n)| (i as u16, n as f64 / 100.0)).collect();
    ensure(got.entries == entries(&want), || format!("top-6 cap: {got:?}"))?;

    let got = extract_colors(&region(&[(120, 50), (15, 50)]), palette).unwrap();
    ensure(got.entries == entries(&[(15, 0.5), (120, 0.5)]), || format!("tie order: {got:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for k in 0..10_000 {
        let px = [rng.gen(), rng.gen(), rng.gen()];
        let (got, want) = (quantize_pixel(px, palette), common::nearest_entry(px, &rgb));
        ensure(got == want, || format!("pixel {k} {px:?}: {got} vs {want}"))?;
    }
    Ok("4 histogram cases, 10000 pixels vs brute force".into())
}

fn attention_mask() -> Outcome {
    let embedder = HashEmbedder::new(8);
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let mut checked = 0usize;
    for n in [2usize, 4, 8] {
        for t in 0..200 {
            let mut panel = random_panel(&mut rng, 1, 4);
            // Some descriptions are left out of the prompt on purpose.
            let mut words: Vec<String> = vec!["A".into(), "Photo".into(), "of".into()];
            for c in &panel.concepts {
                if rng.gen_bool(0.8) {
                    words.extend(c.description.split(' ').map(|s| s.to_uppercase()));
                }
                words.push("and".into());
            }
            panel.prompt = words.join("  ");
            let tokens: Vec<String> = panel.prompt.split_whitespace().map(str::to_lowercase).collect();
            ensure(embedder.tokenize(&panel.prompt) == tokens, || "tokenizer splits on whitespace and lowercases".into())?;
            let mask = build_attention_mask(&panel, PatchGrid::new(n, n), &tokens, &embedder);
            ensure(mask.n_patches == n * n && mask.n_tokens == tokens.len(), || format!("{n}x{n} #{t}: shape"))?;
            let spans: Vec<(usize, usize)> = panel.concepts.iter().map(|c| common::token_span(&tokens, &c.description)).collect();
            for p in 0..n * n {
                let (x, y) = (((p % n) as f64 + 0.5) / n as f64, ((p / n) as f64 + 0.5) / n as f64);
                let owners: Vec<usize> = (0..panel.concepts.len()).filter(|&k| center_in_box(&panel.concepts[k].bbox, x, y)).collect();
                for tok in 0..tokens.len() {
                    let want = owners.is_empty() || owners.iter().any(|&k| (spans[k].0..spans[k].1).contains(&tok));
                    ensure(mask.get(p, tok) == u8::from(want), || format!("{n}x{n} #{t}: patch {p} token {tok}"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("600 panels over 2x2/4x4/8x8, {checked} entries"))
}

fn condition_map() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(67);
    let embedder = HashEmbedder::new(16);
    let mut worst = 0f64;
    for t in 0..100u64 {
        let weights = EncoderWeights::from_seed(t, 16, 8, 4);
        let grid = LatentGrid::new(rng.gen_range(2..=12), rng.gen_range(2..=12), 4);
        let panel = random_panel(&mut rng, 1, 6);
        let map = assemble_condition_map(&panel, &grid, &embedder, &weights).map_err(|e| e.to_string())?;

        let mut shuffled = panel.clone();
        shuffled.concepts.shuffle(&mut rng);
        let other = assemble_condition_map(&shuffled, &grid, &embedder, &weights).map_err(|e| e.to_string())?;
        let bits = |x: &LatentTensor| x.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&map.data) == bits(&other.data), || format!("panel {t}: concept order changed the map"))?;

        let n = map.provenance.len() as f64;
        for (i, &v) in map.data.data.iter().enumerate() {
            let mean = map.provenance.iter().map(|o| f64::from(o.map.data[i])).sum::<f64>() / n;
            let err = (f64::from(v) - mean).abs();
            let scale = mean.abs().max(f64::from(v).abs());
            if scale > 0.0 {
                worst = worst.max(err / scale);
            }
            ensure(err <= 1e-6 * scale, || format!("panel {t} elem {i}: {v} vs mean {mean}"))?;
        }

        let mut buf = Vec::new();
        write_condition(&mut buf, &map.data).map_err(|e| e.to_string())?;
        let back = read_condition(&mut buf.as_slice()).map_err(|e| e.to_string())?;
        ensure(back.shape() == map.data.shape() && bits(&back) == bits(&map.data), || format!("panel {t}: RANC round trip"))?;
    }
    Ok(format!("100 panels, worst mean error {worst:.1e} relative"))
}

fn parsers() -> Outcome {
    let corpus = common::corpus::parser_corpus();
    let failed: Vec<String> =
        corpus.iter().filter_map(|c| c.outcome.as_ref().err().map(|e| format!("{}: {e}", c.name))).collect();
    ensure(corpus.len() >= 30, || format!("corpus has only {} replies", corpus.len()))?;
    ensure(failed.is_empty(), || failed.join("; "))?;

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/full_transcript.json");
    let run = || -> Result<(String, String), String> {
        let bridge = Bridge::new(MockProvider::load(&path).map_err(|e| e.to_string())?);
        let mut log = SessionLog::default();
        let panel = bridge.text_to_panel("An orange cat sitting on a wooden bench", &mut log).map_err(|e| e.to_string())?;
        ensure(validate_panel(&panel).is_valid() && panel.concepts.len() == 2, || "mock panel is not a valid 2-concept panel".into())?;
        ensure(panel.concepts.iter().all(|c| !c.colors.is_empty() && !c.keypoints.is_empty()), || "panel is not fully attributed".into())?;
        Ok((panel_to_json(&panel), serde_json::to_string(&log).unwrap()))
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, || "text_to_panel differs between runs".into())?;
    Ok(format!("{} replies, text_to_panel byte-identical ({} bytes)", corpus.len(), a.0.len()))
}

fn normalize(s: &str) -> String {
    let joined = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    joined.trim_end_matches(['.', ',', ';', ':', '!', '?']).to_string()
}

fn random_record(rng: &mut ChaCha8Rng, k: usize) -> DetectionRecord {
    let mut dets: Vec<Detection> = Vec::new();
    for _ in 0..rng.gen_range(1..=10) {
        let det = if !dets.is_empty() && rng.gen_bool(0.4) {
            // Near-duplicate of an earlier detection.
            let src = dets.choose(rng).unwrap().clone();
            let j = |rng: &mut ChaCha8Rng| rng.gen_range(-0.01..=0.01);
            let bbox = BoundingBox::new(src.bbox.xc + j(rng), src.bbox.yc + j(rng), src.bbox.w, src.bbox.h);
            let description = match rng.gen_range(0..3) {
                0 => src.description.to_uppercase(),
                1 => format!(" {}. ", src.description),
                _ => src.description.clone(),
            };
            let confidence = if rng.gen_bool(0.3) { src.confidence } else { rng.gen_range(0.0..1.0) };
            Detection { description, bbox, confidence, mask_path: String::new() }
        } else {
            Detection {
                description: WORDS.choose(rng).unwrap().to_string(),
                bbox: random_box(rng),
                confidence: rng.gen_range(0.0..1.0),
                mask_path: String::new(),
            }
        };
        dets.push(det);
    }
    DetectionRecord {
        source_id: format!("r{k}"),
        caption: "c".into(),
        width: 64,
        height: 64,
        image_path: None,
        detections: dets,
        vqa_single_object: None,
        synthesized_caption: None,
    }
}

fn pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    let mut dropped = 0usize;
    for k in 0..500 {
        let rec = random_record(&mut rng, k);
        let once = dedup_boxes(&rec);
        ensure(dedup_boxes(&once) == once, || format!("record {k}: dedup not idempotent"))?;
        let kept = &once.detections;
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                let same = normalize(&kept[i].description) == normalize(&kept[j].description);
                ensure(!(same && iou(&kept[i].bbox, &kept[j].bbox) > 0.9), || format!("record {k}: {i},{j} survive as duplicates"))?;
            }
        }
        for d in rec.detections.iter().filter(|d| !kept.contains(d)) {
            dropped += 1;
            let covered = kept.iter().any(|s| {
                normalize(&s.description) == normalize(&d.description) && iou(&s.bbox, &d.bbox) > 0.9 && s.confidence >= d.confidence
            });
            ensure(covered, || format!("record {k}: {:?} dropped without a surviving duplicate", d.description))?;
        }
    }

    let pool = ObjectPool::standard();
    let cfg = PseudoConfig::default();
    for relation in Relation::ALL {
        for seed in 0..1000u64 {
            let s = gen_pseudo_sample(seed, relation, pool, &cfg).map_err(|e| format!("{relation} seed {seed}: {e}"))?;
            let boxes = |ids: &[ConceptId]| -> Vec<BoundingBox> { ids.iter().map(|id| s.panel.concept(id).unwrap().bbox).collect() };
            let refs: Vec<ConceptId> = s.references.iter().flat_map(|g| g.ids.clone()).collect();
            ensure(relations::holds(relation.name(), &boxes(&s.subject.ids), &boxes(&refs)), || {
                format!("{relation} seed {seed}: predicate fails")
            })?;
            let c = &s.panel.concepts;
            for i in 0..c.len() {
                for j in i + 1..c.len() {
                    ensure(iou(&c[i].bbox, &c[j].bbox) <= cfg.iou_cap, || format!("{relation} seed {seed}: overlap {i},{j}"))?;
                }
            }
            ensure(validate_panel(&s.panel).is_valid(), || format!("{relation} seed {seed}: invalid panel"))?;
        }
    }
    Ok(format!("500 records ({dropped} dropped), 7 relations x 1000 seeds"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("latent blend", Duration::from_secs(5), blend_rule),
        ("region preservation", Duration::from_secs(30), region_preservation),
        ("fps oracle", Duration::from_secs(20), fps_oracle),
        ("color extraction", Duration::from_secs(10), color_extraction),
        ("attention mask", Duration::MAX, attention_mask),
        ("condition map", Duration::MAX, condition_map),
        ("parsers", Duration::MAX, parsers),
        ("pipeline", Duration::MAX, pipeline),
    ];
    let mut failures = 0;
    for (name, bound, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panic".into()))
        });
        let took = start.elapsed();
        let bound_txt = if bound == Duration::MAX { String::new() } else { format!(" < {}s", bound.as_secs()) };
        let result = result.and_then(|detail| {
            if took < bound { Ok(detail) } else { Err(format!("{detail}; runtime {took:.2?} exceeds bound")) }
        });
        match result {
            Ok(detail) => println!("PASS  {name:<20} {took:>9.2?}{bound_txt}  {detail}"),
            Err(e) => {
                failures += 1;
                println!("FAIL  {name:<20} {took:>9.2?}{bound_txt}  {e}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
