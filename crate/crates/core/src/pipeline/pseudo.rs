//! Rule-based pseudo samples: random objects arranged by a spatial relation.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::palette::{quantize_pixel, Palette};
use crate::panel::{box_iou, validate_panel, BoundingBox, ColorSet, ConceptId, SemanticPanel, VisualConcept};

/// Largest edge-to-edge gap for "next to".
pub const NEXT_TO_GAP: f64 = 0.1;
/// Clearance kept between regions during placement.
const MARGIN: f64 = 0.02;

const SHIPPED_POOL: &str = include_str!("../../assets/pseudo_pool.json");

/// Shipped spatial relations.
///
/// With `a` ranging over subject boxes and `b` over reference boxes (edges
/// from the unclamped extents):
/// * `left_of`: every `a.x2 <= b.x1`; `right_of`: every `a.x1 >= b.x2`
/// * `above`: every `a.y2 <= b.y1`; `below`: every `a.y1 >= b.y2`
/// * `next_to`: every pair has zero overlap area and an edge gap
///   `max(gap_x, gap_y) <= 0.1`
/// * `between`: two references; each `a` has one reference wholly to its
///   left and the other wholly to its right, both overlapping it vertically
/// * `surrounded_by`: four references; each `a` has a distinct reference
///   wholly left, right, above and below it
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    NextTo,
    Between,
    SurroundedBy,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
        Relation::NextTo,
        Relation::Between,
        Relation::SurroundedBy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::NextTo => "next_to",
            Relation::Between => "between",
            Relation::SurroundedBy => "surrounded_by",
        }
    }

    /// Phrase used in generated prompts.
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "on the left of",
            Relation::RightOf => "on the right of",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::NextTo => "next to",
            Relation::Between => "between",
            Relation::SurroundedBy => "surrounded by",
        }
    }

    fn subject_counts(self, max_count: u32) -> (u32, u32) {
        match self {
            Relation::Between | Relation::SurroundedBy => (1, 1),
            Relation::NextTo => (1, max_count.clamp(1, 2)),
            _ => (1, max_count.max(1)),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = String;

    /// Accepts the snake-case name or the prompt phrase.
    fn from_str(s: &str) -> Result<Self, String> {
        let k = s.trim().to_lowercase().replace(['-', ' '], "_");
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == k || r.phrase().replace(' ', "_") == k)
            .ok_or_else(|| format!("unknown relation {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolObject {
    pub name: String,
    pub plural: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolColor {
    pub word: String,
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPool {
    pub objects: Vec<PoolObject>,
    #[serde(default)]
    pub colors: Vec<PoolColor>,
}

impl ObjectPool {
    pub fn standard() -> &'static ObjectPool {
        static P: OnceLock<ObjectPool> = OnceLock::new();
        P.get_or_init(|| serde_json::from_str(SHIPPED_POOL).expect("shipped pool parses"))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoConfig {
    /// Pairwise IoU ceiling between any two concepts.
    pub iou_cap: f64,
    pub max_count: u32,
    pub color_probability: f64,
    pub attempts_per_seed: u32,
    pub reseeds: u32,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        Self { iou_cap: 0.05, max_count: 3, color_probability: 0.5, attempts_per_seed: 200, reseeds: 4 }
    }
}

/// Instances of one object in a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleGroup {
    pub description: String,
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub ids: Vec<ConceptId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSample {
    pub prompt: String,
    pub relation: Relation,
    pub subject: RoleGroup,
    pub references: Vec<RoleGroup>,
    pub panel: SemanticPanel,
}

#[derive(Debug, Error, PartialEq)]
pub enum PseudoError {
    #[error("object pool is empty")]
    EmptyPool,
    #[error("could not place a {relation} arrangement after {attempts} attempts")]
    Placement { relation: Relation, attempts: u32 },
}

#[derive(Clone, Copy)]
struct Rect {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

fn rect(b: &BoundingBox) -> Rect {
    Rect { x1: b.xc - b.w / 2.0, y1: b.yc - b.h / 2.0, x2: b.xc + b.w / 2.0, y2: b.yc + b.h / 2.0 }
}

fn left_of(a: &Rect, b: &Rect) -> bool {
    a.x2 <= b.x1
}

fn above(a: &Rect, b: &Rect) -> bool {
    a.y2 <= b.y1
}

fn v_overlap(a: &Rect, b: &Rect) -> bool {
    a.y1 < b.y2 && b.y1 < a.y2
}

fn next_to(a: &Rect, b: &Rect) -> bool {
    let ox = a.x2.min(b.x2) - a.x1.max(b.x1);
    let oy = a.y2.min(b.y2) - a.y1.max(b.y1);
    let disjoint = ox <= 0.0 || oy <= 0.0;
    let gap = (-ox).max(0.0).max((-oy).max(0.0));
    disjoint && gap <= NEXT_TO_GAP
}

/// Does the panel satisfy `relation` between the two groups of ids?
pub fn relation_holds(relation: Relation, panel: &SemanticPanel, subject: &[ConceptId], reference: &[ConceptId]) -> bool {
    let boxes = |ids: &[ConceptId]| -> Option<Vec<Rect>> { ids.iter().map(|id| panel.concept(id).map(|c| rect(&c.bbox))).collect() };
    let (Some(s), Some(r)) = (boxes(subject), boxes(reference)) else { return false };
    if s.is_empty() || r.is_empty() {
        return false;
    }
    let all = |f: &dyn Fn(&Rect, &Rect) -> bool| s.iter().all(|a| r.iter().all(|b| f(a, b)));
    match relation {
        Relation::LeftOf => all(&|a, b| left_of(a, b)),
        Relation::RightOf => all(&|a, b| left_of(b, a)),
        Relation::Above => all(&|a, b| above(a, b)),
        Relation::Below => all(&|a, b| above(b, a)),
        Relation::NextTo => all(&next_to),
        Relation::Between => {
            r.len() == 2
                && s.iter().all(|a| {
                    let ok = |l: &Rect, rt: &Rect| left_of(l, a) && left_of(a, rt) && v_overlap(l, a) && v_overlap(rt, a);
                    ok(&r[0], &r[1]) || ok(&r[1], &r[0])
                })
        }
        Relation::SurroundedBy => {
            const PERMS: [[usize; 4]; 24] = [
                [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
                [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
                [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
                [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
            ];
            r.len() == 4
                && s.iter().all(|a| {
                    PERMS.iter().any(|[l, rt, t, b]| {
                        left_of(&r[*l], a) && left_of(a, &r[*rt]) && above(&r[*t], a) && above(a, &r[*b])
                    })
                })
        }
    }
}

/// Box of random size inside `[x1, x2] x [y1, y2]`, or `None` if the
/// region cannot hold the minimum size.
fn box_in(rng: &mut ChaCha8Rng, x1: f64, y1: f64, x2: f64, y2: f64, min: f64, max: f64) -> Option<BoundingBox> {
    let (rw, rh) = (x2 - x1, y2 - y1);
    if rw < min || rh < min {
        return None;
    }
    let w = rng.gen_range(min..=max.min(rw));
    let h = rng.gen_range(min..=max.min(rh));
    let xc = rng.gen_range(x1 + w / 2.0..=x2 - w / 2.0);
    let yc = rng.gen_range(y1 + h / 2.0..=y2 - h / 2.0);
    Some(BoundingBox::new(xc, yc, w, h))
}

/// Center coordinate for an extent of `size` that overlaps `[lo, hi]` and
/// stays in the unit interval.
fn overlapping_center(rng: &mut ChaCha8Rng, lo: f64, hi: f64, size: f64) -> f64 {
    let min = (lo - size / 2.0 + MARGIN).max(size / 2.0);
    let max = (hi + size / 2.0 - MARGIN).min(1.0 - size / 2.0);
    if min >= max {
        (min + max) / 2.0
    } else {
        rng.gen_range(min..=max)
    }
}

fn place(relation: Relation, n_subject: usize, rng: &mut ChaCha8Rng) -> Option<(Vec<BoundingBox>, Vec<BoundingBox>)> {
    let mut subj = Vec::new();
    let mut refs = Vec::new();
    match relation {
        Relation::LeftOf | Relation::RightOf | Relation::Above | Relation::Below => {
            let s = rng.gen_range(0.35..=0.65);
            let (lo, hi) = (s - MARGIN, s + MARGIN);
            let (first, second) = ((0.0, lo), (hi, 1.0));
            let (sub_band, ref_band) = match relation {
                Relation::LeftOf | Relation::Above => (first, second),
                _ => (second, first),
            };
            let horizontal = matches!(relation, Relation::LeftOf | Relation::RightOf);
            let in_band = |rng: &mut ChaCha8Rng, (a, b): (f64, f64), min: f64, max: f64| {
                if horizontal {
                    box_in(rng, a, 0.0, b, 1.0, min, max)
                } else {
                    box_in(rng, 0.0, a, 1.0, b, min, max)
                }
            };
            for _ in 0..n_subject {
                subj.push(in_band(rng, sub_band, 0.08, 0.25)?);
            }
            refs.push(in_band(rng, ref_band, 0.1, 0.3)?);
        }
        Relation::NextTo => {
            let r = box_in(rng, 0.25, 0.25, 0.75, 0.75, 0.15, 0.3)?;
            let rr = rect(&r);
            refs.push(r);
            for _ in 0..n_subject {
                let w = rng.gen_range(0.08..=0.2);
                let h = rng.gen_range(0.08..=0.2);
                let gap = rng.gen_range(0.01..=0.08);
                let b = match rng.gen_range(0..4) {
                    0 => BoundingBox::new(rr.x1 - gap - w / 2.0, overlapping_center(rng, rr.y1, rr.y2, h), w, h),
                    1 => BoundingBox::new(rr.x2 + gap + w / 2.0, overlapping_center(rng, rr.y1, rr.y2, h), w, h),
                    2 => BoundingBox::new(overlapping_center(rng, rr.x1, rr.x2, w), rr.y1 - gap - h / 2.0, w, h),
                    _ => BoundingBox::new(overlapping_center(rng, rr.x1, rr.x2, w), rr.y2 + gap + h / 2.0, w, h),
                };
                subj.push(b);
            }
        }
        Relation::Between => {
            let a = box_in(rng, 0.35, 0.25, 0.65, 0.75, 0.1, 0.25)?;
            let ar = rect(&a);
            subj.push(a);
            for (x1, x2) in [(0.0, ar.x1 - MARGIN), (ar.x2 + MARGIN, 1.0)] {
                let w = rng.gen_range(0.06..=0.25f64.min(x2 - x1));
                let h = rng.gen_range(0.08..=0.3);
                let xc = rng.gen_range(x1 + w / 2.0..=x2 - w / 2.0);
                refs.push(BoundingBox::new(xc, overlapping_center(rng, ar.y1, ar.y2, h), w, h));
            }
        }
        Relation::SurroundedBy => {
            let a = box_in(rng, 0.35, 0.35, 0.65, 0.65, 0.12, 0.25)?;
            let ar = rect(&a);
            subj.push(a);
            let side = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
                let s = rng.gen_range(0.05..=0.2f64.min(hi - lo));
                (s, rng.gen_range(lo + s / 2.0..=hi - s / 2.0))
            };
            let (w, xc) = side(rng, 0.0, ar.x1 - MARGIN);
            let h = rng.gen_range(0.08..=0.25);
            refs.push(BoundingBox::new(xc, overlapping_center(rng, ar.y1, ar.y2, h), w, h));
            let (w, xc) = side(rng, ar.x2 + MARGIN, 1.0);
            let h = rng.gen_range(0.08..=0.25);
            refs.push(BoundingBox::new(xc, overlapping_center(rng, ar.y1, ar.y2, h), w, h));
            let (h, yc) = side(rng, 0.0, ar.y1 - MARGIN);
            let w = rng.gen_range(0.08..=0.25);
            refs.push(BoundingBox::new(overlapping_center(rng, ar.x1, ar.x2, w), yc, w, h));
            let (h, yc) = side(rng, ar.y2 + MARGIN, 1.0);
            let w = rng.gen_range(0.08..=0.25);
            refs.push(BoundingBox::new(overlapping_center(rng, ar.x1, ar.x2, w), yc, w, h));
        }
    }
    Some((subj, refs))
}

fn inside_unit(b: &BoundingBox) -> bool {
    let r = rect(b);
    b.is_valid() && r.x1 >= 0.0 && r.y1 >= 0.0 && r.x2 <= 1.0 && r.y2 <= 1.0
}

fn number_word(n: u32) -> String {
    match n {
        2 => "two".into(),
        3 => "three".into(),
        4 => "four".into(),
        5 => "five".into(),
        n => n.to_string(),
    }
}

fn noun_phrase(color: Option<&str>, object: &PoolObject, count: u32) -> String {
    let noun = if count == 1 { &object.name } else { &object.plural };
    let body = match color {
        Some(c) => format!("{c} {noun}"),
        None => noun.clone(),
    };
    if count == 1 {
        let article = if body.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
        format!("{article} {body}")
    } else {
        format!("{} {body}", number_word(count))
    }
}

struct GroupPlan<'a> {
    object: &'a PoolObject,
    color: Option<&'a PoolColor>,
    count: u32,
}

impl GroupPlan<'_> {
    fn description(&self) -> String {
        match self.color {
            Some(c) => format!("{} {}", c.word, self.object.name),
            None => self.object.name.clone(),
        }
    }

    fn phrase(&self) -> String {
        noun_phrase(self.color.map(|c| c.word.as_str()), self.object, self.count)
    }
}

fn reseed(seed: u64, round: u32) -> u64 {
    seed ^ (u64::from(round)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Deterministic pseudo sample for `seed`.
pub fn gen_pseudo_sample(
    seed: u64,
    relation: Relation,
    pool: &ObjectPool,
    cfg: &PseudoConfig,
) -> Result<PseudoSample, PseudoError> {
    if pool.objects.is_empty() {
        return Err(PseudoError::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick_color = |rng: &mut ChaCha8Rng| {
        if !pool.colors.is_empty() && rng.gen_bool(cfg.color_probability.clamp(0.0, 1.0)) {
            pool.colors.choose(rng)
        } else {
            None
        }
    };

    let order: Vec<&PoolObject> = pool.objects.choose_multiple(&mut rng, pool.objects.len().min(3)).collect();
    let other = |i: usize| order[i.min(order.len() - 1)];
    let (lo, hi) = relation.subject_counts(cfg.max_count);
    let subject = GroupPlan { object: order[0], count: rng.gen_range(lo..=hi), color: pick_color(&mut rng) };
    let mut references = Vec::new();
    match relation {
        Relation::Between => {
            if order.len() >= 3 && rng.gen_bool(0.5) {
                references.push(GroupPlan { object: other(1), count: 1, color: pick_color(&mut rng) });
                references.push(GroupPlan { object: other(2), count: 1, color: pick_color(&mut rng) });
            } else {
                references.push(GroupPlan { object: other(1), count: 2, color: pick_color(&mut rng) });
            }
        }
        Relation::SurroundedBy => references.push(GroupPlan { object: other(1), count: 4, color: pick_color(&mut rng) }),
        _ => references.push(GroupPlan { object: other(1), count: 1, color: pick_color(&mut rng) }),
    }

    let ref_phrase = match references.as_slice() {
        [a, b] => format!("{} and {}", a.phrase(), b.phrase()),
        [a] => a.phrase(),
        _ => unreachable!("one or two reference groups"),
    };
    let prompt = format!("{} {} {}", subject.phrase(), relation.phrase(), ref_phrase);

    let palette = Palette::standard();
    let colors = |g: &GroupPlan| g.color.map(|c| ColorSet::from_indices([quantize_pixel(c.rgb, palette)])).unwrap_or_default();

    let mut attempts = 0;
    for round in 0..=cfg.reseeds {
        let mut prng = ChaCha8Rng::seed_from_u64(reseed(rng.gen(), round));
        for _ in 0..cfg.attempts_per_seed {
            attempts += 1;
            let Some((sub_boxes, ref_boxes)) = place(relation, subject.count as usize, &mut prng) else { continue };
            let all: Vec<&BoundingBox> = sub_boxes.iter().chain(&ref_boxes).collect();
            if !all.iter().all(|b| inside_unit(b)) {
                continue;
            }
            let overlap = (0..all.len()).any(|i| (i + 1..all.len()).any(|j| box_iou(all[i], all[j]) > cfg.iou_cap));
            if overlap {
                continue;
            }

            let mut panel = SemanticPanel::new(prompt.clone());
            let mut push = |g: &GroupPlan, b: BoundingBox| {
                let id = ConceptId(format!("c0.{}", panel.concepts.len()));
                let mut c = VisualConcept::new(id.0.clone(), g.description(), b);
                c.colors = colors(g);
                panel.concepts.push(c);
                id
            };
            let sub_ids: Vec<ConceptId> = sub_boxes.into_iter().map(|b| push(&subject, b)).collect();
            let mut ref_groups = Vec::new();
            let mut ref_boxes = ref_boxes.into_iter();
            for g in &references {
                let ids: Vec<ConceptId> = (0..g.count).map(|_| push(g, ref_boxes.next().expect("one box per instance"))).collect();
                ref_groups.push(RoleGroup {
                    description: g.description(),
                    count: g.count,
                    color: g.color.map(|c| c.word.clone()),
                    ids,
                });
            }
            let ref_ids: Vec<ConceptId> = ref_groups.iter().flat_map(|g| g.ids.clone()).collect();
            if !relation_holds(relation, &panel, &sub_ids, &ref_ids) || !validate_panel(&panel).is_valid() {
                continue;
            }
            return Ok(PseudoSample {
                prompt,
                relation,
                subject: RoleGroup {
                    description: subject.description(),
                    count: subject.count,
                    color: subject.color.map(|c| c.word.clone()),
                    ids: sub_ids,
                },
                references: ref_groups,
                panel,
            });
        }
    }
    Err(PseudoError::Placement { relation, attempts })
}

/// Minimum pairwise center distance; 1.0 for fewer than two concepts.
pub fn separation_score(panel: &SemanticPanel) -> f64 {
    let c = &panel.concepts;
    if c.len() < 2 {
        return 1.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let (dx, dy) = (c[i].bbox.xc - c[j].bbox.xc, c[i].bbox.yc - c[j].bbox.yc);
            best = best.min((dx * dx + dy * dy).sqrt());
        }
    }
    best
}

/// Indices of the `k` best-separated candidates, best first (ties to the
/// lower index).
pub fn max_separation_select(candidates: &[SemanticPanel], k: usize) -> Vec<usize> {
    let scores: Vec<f64> = candidates.iter().map(separation_score).collect();
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
