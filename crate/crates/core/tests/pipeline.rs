mod common;

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use semantic_panel::keypoints::{fps_sample, FpsConfig, RegionMask};
use semantic_panel::palette::Palette;
use semantic_panel::panel::{validate_panel, BoundingBox};
use semantic_panel::pipeline::{
    detection_seed, ingest_all, ingest_record, parse_records, Blacklist, Detection, DetectionRecord, IngestOptions, Provenance,
};

const W: u32 = 40;
const H: u32 = 20;

/// Left half red, right half blue; masks cover one half each.
fn write_fixture(dir: &Path) {
    let img = RgbImage::from_fn(W, H, |x, _| if x < W / 2 { Rgb([220, 20, 20]) } else { Rgb([20, 20, 220]) });
    img.save(dir.join("img.png")).unwrap();
    let left = GrayImage::from_fn(W, H, |x, _| Luma([if x < W / 2 { 255 } else { 0 }]));
    let right = GrayImage::from_fn(W, H, |x, _| Luma([if x >= W / 2 { 255 } else { 0 }]));
    left.save(dir.join("left.pgm")).unwrap();
    right.save(dir.join("right.pgm")).unwrap();
    GrayImage::new(4, 4).save(dir.join("tiny.pgm")).unwrap();
}

fn det(description: &str, b: [f64; 4], confidence: f64, mask: &str) -> Detection {
    Detection { description: description.into(), bbox: b.into(), confidence, mask_path: mask.into() }
}

fn record(id: &str, dets: Vec<Detection>) -> DetectionRecord {
    DetectionRecord {
        source_id: id.into(),
        caption: "a red box and a blue box".into(),
        width: W,
        height: H,
        image_path: Some("img.png".into()),
        detections: dets,
        vqa_single_object: Some("Yes".into()),
        synthesized_caption: None,
    }
}

fn opts(dir: &Path) -> IngestOptions<'static> {
    IngestOptions { base_dir: Some(dir.to_path_buf()), ..IngestOptions::default() }
}

#[test]
fn ingest_builds_attributed_panel() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let rec = record(
        "img-1",
        vec![
            det("red box", [0.25, 0.5, 0.5, 1.0], 0.9, "left.pgm"),
            det("the image", [0.5, 0.5, 1.0, 1.0], 0.8, "left.pgm"),
            det("Red box.", [0.255, 0.5, 0.5, 1.0], 0.7, "left.pgm"),
            det("blue box", [0.75, 0.5, 0.5, 1.0], 0.95, "right.pgm"),
        ],
    );
    let e = ingest_record(&rec, &opts(dir.path()));
    assert!(!e.exclude);
    assert_eq!(e.provenance, Provenance::Raw);
    let p = &e.panel;
    assert!(validate_panel(p).is_valid());
    let ids: Vec<&str> = p.concepts.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["c0.0", "c0.1"]);
    assert_eq!(p.concepts[0].description, "red box");
    assert_eq!(p.concepts[1].description, "blue box");

    let pal = Palette::standard();
    assert_eq!(p.concepts[0].colors.indices().collect::<Vec<_>>(), [pal.quantize([220, 20, 20])]);
    assert_eq!(p.concepts[0].colors.entries[0].proportion, Some(1.0));
    assert_eq!(p.concepts[1].colors.indices().collect::<Vec<_>>(), [pal.quantize([20, 20, 220])]);

    // Keypoints are exactly FPS on the mask with the per-detection seed.
    let left = RegionMask::from_fn(H as usize, W as usize, |_, c| c < (W / 2) as usize);
    let want = fps_sample(&left, &FpsConfig::with_seed(detection_seed("img-1", 0))).unwrap();
    assert_eq!(p.concepts[0].keypoints, want.clamped_into(&BoundingBox::new(0.25, 0.5, 0.5, 1.0)));
    assert!(!p.concepts[1].keypoints.is_empty());
}

#[test]
fn blacklisted_only_record_is_excluded() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let rec = record("img-2", vec![det("Background", [0.5, 0.5, 1.0, 1.0], 0.9, "left.pgm")]);
    let e = ingest_record(&rec, &opts(dir.path()));
    assert!(e.exclude);
    assert!(e.panel.concepts.is_empty());
}

#[test]
fn mask_problems_skip_single_detections() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let rec = record(
        "img-3",
        vec![
            det("red box", [0.25, 0.5, 0.5, 1.0], 0.9, "tiny.pgm"),
            det("blue box", [0.75, 0.5, 0.5, 1.0], 0.9, "missing.pgm"),
            det("green box", [0.75, 0.5, 0.5, 1.0], 0.9, "right.pgm"),
        ],
    );
    let e = ingest_record(&rec, &opts(dir.path()));
    assert_eq!(e.skipped.len(), 2);
    assert!(e.skipped[0].reason.contains("4x4"), "{}", e.skipped[0].reason);
    assert_eq!(e.panel.concepts.len(), 1);
    assert_eq!(e.panel.concepts[0].id.as_str(), "c0.0");
}

#[test]
fn caption_audit_and_missing_image() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut rec = record("img-4", vec![det("red box", [0.25, 0.5, 0.5, 1.0], 0.9, "left.pgm")]);
    rec.vqa_single_object = Some("No.".into());
    rec.synthesized_caption = Some("a red box".into());
    rec.image_path = None;
    let e = ingest_record(&rec, &opts(dir.path()));
    assert_eq!(e.provenance, Provenance::Synthesized);
    assert_eq!(e.caption, "a red box");
    assert_eq!(e.panel.prompt, "a red box");
    assert!(e.panel.concepts[0].colors.is_empty());
    assert!(e.warnings.iter().any(|w| w.contains("image_path")));

    rec.vqa_single_object = Some("maybe".into());
    let e = ingest_record(&rec, &opts(dir.path()));
    assert_eq!(e.provenance, Provenance::Raw);
    assert!(e.warnings.iter().any(|w| w.contains("unrecognized")));
}

#[test]
fn ingest_all_is_sorted_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let lines: Vec<String> = ["z", "b", "m", "a"]
        .iter()
        .map(|id| serde_json::to_string(&record(id, vec![det("red box", [0.25, 0.5, 0.5, 1.0], 0.9, "left.pgm")])).unwrap())
        .collect();
    let recs = parse_records(&format!("{}\n\n", lines.join("\n"))).unwrap();
    let a = ingest_all(&recs, &opts(dir.path()));
    let ids: Vec<&str> = a.iter().map(|e| e.source_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "m", "z"]);
    assert_eq!(a, ingest_all(&recs, &opts(dir.path())));
    assert!(parse_records("{not json").is_err());
}

#[test]
fn custom_blacklist() {
    let bl = Blacklist::parse("# comment\nred box\n");
    assert!(bl.contains("The red box"));
    assert!(!bl.contains("blue box"));
}
