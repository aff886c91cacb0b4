//! Independent reference implementations and random fixtures shared by the
//! integration suites. Nothing here calls the library routine it checks.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use semantic_panel::panel::{BoundingBox, ColorSet, KeypointSet, SemanticPanel, VisualConcept};

pub mod corpus;

pub const WORDS: [&str; 10] = ["cat", "dog", "red apple", "blue cup", "tree", "small bird", "car", "lamp", "book", "chair"];

/// Half-open `[x1, x2) x [y1, y2)` test on corners clamped to the unit square.
pub fn center_in_box(b: &BoundingBox, x: f64, y: f64) -> bool {
    let x1 = (b.xc - b.w / 2.0).clamp(0.0, 1.0);
    let x2 = (b.xc + b.w / 2.0).clamp(0.0, 1.0);
    let y1 = (b.yc - b.h / 2.0).clamp(0.0, 1.0);
    let y2 = (b.yc + b.h / 2.0).clamp(0.0, 1.0);
    x >= x1 && x < x2 && y >= y1 && y < y2
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax1, ax2, ay1, ay2) = (a.xc - a.w / 2.0, a.xc + a.w / 2.0, a.yc - a.h / 2.0, a.yc + a.h / 2.0);
    let (bx1, bx2, by1, by2) = (b.xc - b.w / 2.0, b.xc + b.w / 2.0, b.yc - b.h / 2.0, b.yc + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.w * a.h + b.w * b.h - inter)
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.gen_range(0.05..=0.6);
    let h = rng.gen_range(0.05..=0.6);
    BoundingBox::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0), w, h)
}

pub fn random_points_in(rng: &mut ChaCha8Rng, b: &BoundingBox) -> KeypointSet {
    let x1 = (b.xc - b.w / 2.0).clamp(0.0, 1.0);
    let x2 = (b.xc + b.w / 2.0).clamp(0.0, 1.0);
    let y1 = (b.yc - b.h / 2.0).clamp(0.0, 1.0);
    let y2 = (b.yc + b.h / 2.0).clamp(0.0, 1.0);
    let n = rng.gen_range(0..=8);
    KeypointSet::new((0..n).map(|_| [rng.gen_range(x1..=x2), rng.gen_range(y1..=y2)]).collect())
}

pub fn random_colors(rng: &mut ChaCha8Rng) -> ColorSet {
    let mut idx: Vec<u16> = (0..156).collect();
    idx.shuffle(rng);
    ColorSet::from_indices(idx.into_iter().take(rng.gen_range(0..=6)))
}

pub fn random_concept(rng: &mut ChaCha8Rng, id: String) -> VisualConcept {
    let bbox = random_box(rng);
    let mut c = VisualConcept::new(id, *WORDS.choose(rng).unwrap(), bbox);
    c.colors = random_colors(rng);
    c.keypoints = random_points_in(rng, &bbox);
    c
}

pub fn random_panel(rng: &mut ChaCha8Rng, min: usize, max: usize) -> SemanticPanel {
    let n = rng.gen_range(min..=max);
    let mut p = SemanticPanel::new("a scene");
    p.version = rng.gen_range(0..5);
    for k in 0..n {
        p.concepts.push(random_concept(rng, format!("c0.{k}")));
    }
    p.prompt = p.concepts.iter().map(|c| format!("a {}", c.description)).collect::<Vec<_>>().join(" and ");
    p
}

/// Exhaustive farthest point sampling: every step recomputes each
/// candidate's distance to every chosen point.
pub fn fps_oracle(cells: &[bool], height: usize, width: usize, first: usize, max: usize, stop: f64) -> Vec<[f64; 2]> {
    let cands: Vec<[f64; 2]> = (0..height * width)
        .filter(|&i| cells[i])
        .map(|i| [((i % width) as f64 + 0.5) / width as f64, ((i / width) as f64 + 0.5) / height as f64])
        .collect();
    let mut chosen = vec![cands[first]];
    while chosen.len() < max {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in cands.iter().enumerate() {
            let d = chosen
                .iter()
                .map(|s| {
                    let (dx, dy) = (c[0] - s[0], c[1] - s[1]);
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, d) = best.unwrap();
        if d < stop {
            break;
        }
        chosen.push(cands[i]);
    }
    chosen
}

/// sRGB to CIELab, D65, written out from the standard formulas.
pub fn lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let d = 6.0f64 / 29.0;
    let f = |t: f64| if t > d * d * d { t.cbrt() } else { t / (3.0 * d * d) + 4.0 / 29.0 };
    let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Brute-force nearest palette entry by Lab distance, lowest index on ties.
pub fn nearest_entry(rgb: [u8; 3], palette_rgb: &[[u8; 3]]) -> u16 {
    let p = lab(rgb);
    let mut best = (0usize, f64::INFINITY);
    for (i, e) in palette_rgb.iter().enumerate() {
        let q = lab(*e);
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0 as u16
}

/// Prompt tokens a description covers: its first whole-token occurrence,
/// otherwise the entire prompt.
pub fn token_span(prompt: &[String], description: &str) -> (usize, usize) {
    let needle: Vec<String> = description.split_whitespace().map(str::to_lowercase).collect();
    if !needle.is_empty() && needle.len() <= prompt.len() {
        for s in 0..=prompt.len() - needle.len() {
            if prompt[s..s + needle.len()] == needle[..] {
                return (s, s + needle.len());
            }
        }
    }
    (0, prompt.len())
}

/// Ids whose concept differs between two panels, or exists in only one.
pub fn changed_boxes(old: &SemanticPanel, new: &SemanticPanel) -> Vec<BoundingBox> {
    let mut out = Vec::new();
    for o in &old.concepts {
        match new.concepts.iter().find(|n| n.id == o.id) {
            None => out.push(o.bbox),
            Some(n) => {
                if n.description != o.description || n.bbox != o.bbox || n.colors != o.colors || n.keypoints != o.keypoints {
                    out.push(o.bbox);
                    out.push(n.bbox);
                }
            }
        }
    }
    for n in &new.concepts {
        if !old.concepts.iter().any(|o| o.id == n.id) {
            out.push(n.bbox);
        }
    }
    out
}

/// Edge-based spatial predicates on unclamped extents.
pub mod relations {
    use semantic_panel::panel::BoundingBox;

    pub fn x1(b: &BoundingBox) -> f64 { b.xc - b.w / 2.0 }
    pub fn x2(b: &BoundingBox) -> f64 { b.xc + b.w / 2.0 }
    pub fn y1(b: &BoundingBox) -> f64 { b.yc - b.h / 2.0 }
    pub fn y2(b: &BoundingBox) -> f64 { b.yc + b.h / 2.0 }

    pub fn left(a: &BoundingBox, b: &BoundingBox) -> bool { x2(a) <= x1(b) }
    pub fn up(a: &BoundingBox, b: &BoundingBox) -> bool { y2(a) <= y1(b) }
    pub fn v_overlap(a: &BoundingBox, b: &BoundingBox) -> bool { y1(a) < y2(b) && y1(b) < y2(a) }

    pub fn next_to(a: &BoundingBox, b: &BoundingBox, gap: f64) -> bool {
        let gx = x1(a).max(x1(b)) - x2(a).min(x2(b));
        let gy = y1(a).max(y1(b)) - y2(a).min(y2(b));
        (gx >= 0.0 || gy >= 0.0) && gx.max(gy) <= gap
    }

    /// `name` is the relation's snake-case name.
    pub fn holds(name: &str, subject: &[BoundingBox], refs: &[BoundingBox]) -> bool {
        if subject.is_empty() || refs.is_empty() {
            return false;
        }
        let every = |f: &dyn Fn(&BoundingBox, &BoundingBox) -> bool| subject.iter().all(|a| refs.iter().all(|b| f(a, b)));
        match name {
            "left_of" => every(&|a, b| left(a, b)),
            "right_of" => every(&|a, b| left(b, a)),
            "above" => every(&|a, b| up(a, b)),
            "below" => every(&|a, b| up(b, a)),
            "next_to" => every(&|a, b| next_to(a, b, 0.1)),
            "between" => {
                refs.len() == 2
                    && subject.iter().all(|a| {
                        let ok = |l: &BoundingBox, r: &BoundingBox| left(l, a) && left(a, r) && v_overlap(l, a) && v_overlap(r, a);
                        ok(&refs[0], &refs[1]) || ok(&refs[1], &refs[0])
                    })
            }
            "surrounded_by" => {
                refs.len() == 4
                    && subject.iter().all(|a| {
                        // Some assignment of the four references to four sides.
                        let mut found = false;
                        for l in 0..4 {
                            for r in 0..4 {
                                for t in 0..4 {
                                    let Some(b) = 6usize.checked_sub(l + r + t) else { continue };
                                    let distinct = l != r && l != t && r != t && b < 4 && b != l && b != r && b != t;
                                    if distinct && left(&refs[l], a) && left(a, &refs[r]) && up(&refs[t], a) && up(a, &refs[b]) {
                                        found = true;
                                    }
                                }
                            }
                        }
                        found
                    })
            }
            _ => panic!("unknown relation {name}"),
        }
    }
}
