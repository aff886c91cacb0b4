//! Line-oriented extraction of structured payloads from free-form LLM
//! replies. Non-matching lines (prose, markdown fences) are skipped; every
//! parser returns a value or a [`ParseError`], never panics.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("reply contains no {0}")]
    NoPayload(&'static str),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("expected {expected} entries, reply has {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("invalid panel JSON: {0}")]
    Json(String),
    #[error("{0}")]
    Invalid(String),
}

const NUM: &str = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?";

fn re(cell: &'static OnceLock<Regex>, pattern: impl FnOnce() -> String) -> &'static Regex {
    cell.get_or_init(|| Regex::new(&pattern()).expect("static regex"))
}

fn paren_group() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, || r"\(([^()]*)\)".to_string())
}

fn box_list() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, || format!(r"\[\s*({NUM})\s*,\s*({NUM})\s*,\s*({NUM})\s*,\s*({NUM})\s*\]"))
}

fn numeric_bracket() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, || r"\[[^\[\]]*\d[^\[\]]*,[^\[\]]*\]".to_string())
}

fn rgb_triple() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, || r"[\(\[]\s*(\d{1,4})\s*,\s*(\d{1,4})\s*,\s*(\d{1,4})\s*[\)\]]".to_string())
}

fn point_pair() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, || format!(r"[\(\[]\s*({NUM})\s*,\s*({NUM})\s*[\)\]]"))
}

fn index_prefix() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, || r"^\s*(?:[-*]\s*)?(?:\[(\d+)\]|(\d+)\s*[.):])".to_string())
}

/// Strip list bullets, numbering and emphasis from the start of a line.
fn strip_bullet(line: &str) -> &str {
    let t = line.trim_start();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')']) {
            return r.trim_start();
        }
    }
    t
}

fn clean_label(s: &str) -> String {
    s.trim()
        .trim_end_matches([':', '=', '-'])
        .trim()
        .trim_matches(['"', '\'', '*', '`', '_'])
        .trim()
        .to_string()
}

fn parse_num(s: &str, line: usize) -> Result<f64, ParseError> {
    let v: f64 = s.parse().map_err(|_| ParseError::Malformed { line, reason: format!("bad number {s:?}") })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ParseError::Malformed { line, reason: format!("non-finite number {s:?}") })
    }
}

/// `(description, count)` pairs; `(none)` alone means an empty scene.
pub fn parse_descriptions(reply: &str) -> Result<Vec<(String, u32)>, ParseError> {
    let mut out = Vec::new();
    let mut saw_none = false;
    for (n, line) in reply.lines().enumerate() {
        let line_no = n + 1;
        let leads_with_pair = strip_bullet(line).starts_with('(');
        for cap in paren_group().captures_iter(line) {
            let inner = cap[1].trim();
            if inner.eq_ignore_ascii_case("none") {
                saw_none = true;
                continue;
            }
            let Some((desc, count)) = inner.rsplit_once(',') else { continue };
            let desc = clean_label(desc);
            match count.trim().parse::<u32>() {
                Ok(c) if c >= 1 && !desc.is_empty() => out.push((desc, c)),
                Ok(_) if leads_with_pair => {
                    return Err(ParseError::Malformed { line: line_no, reason: format!("invalid entry ({inner})") })
                }
                Err(_) if leads_with_pair => {
                    return Err(ParseError::Malformed {
                        line: line_no,
                        reason: format!("count {:?} is not a positive integer", count.trim()),
                    })
                }
                _ => {}
            }
        }
    }
    if out.is_empty() && !saw_none {
        return Err(ParseError::NoPayload("(description, count) pairs"));
    }
    Ok(out)
}

/// `label: [xc, yc, w, h]` lines, in reply order.
pub fn parse_boxes(reply: &str) -> Result<Vec<(String, [f64; 4])>, ParseError> {
    let mut out = Vec::new();
    for (n, line) in reply.lines().enumerate() {
        let line_no = n + 1;
        let mut matched = false;
        for cap in box_list().captures_iter(line) {
            matched = true;
            let whole = cap.get(0).expect("group 0");
            let label = clean_label(strip_bullet(&line[..whole.start()]));
            let mut v = [0f64; 4];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = parse_num(&cap[k + 1], line_no)?;
            }
            out.push((label, v));
        }
        if !matched && numeric_bracket().is_match(line) {
            return Err(ParseError::Malformed { line: line_no, reason: "box must have exactly 4 numbers".into() });
        }
    }
    if out.is_empty() {
        return Err(ParseError::NoPayload("[x_c, y_c, w, h] boxes"));
    }
    Ok(out)
}

/// Assign per-line payloads to `n` numbered objects. Lines may start with
/// `[k]` or `k.`; unnumbered payload lines are accepted for a single object,
/// or positionally when there is exactly one per object.
fn per_object<T>(
    reply: &str,
    n: usize,
    what: &'static str,
    mut extract: impl FnMut(&str, usize) -> Result<Vec<T>, ParseError>,
) -> Result<Vec<Option<Vec<T>>>, ParseError> {
    let mut out: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
    let mut unnumbered = Vec::new();
    for (i, line) in reply.lines().enumerate() {
        let line_no = i + 1;
        let (index, body) = match index_prefix().captures(line) {
            Some(cap) => {
                let k: usize = cap.get(1).or(cap.get(2)).expect("one alternative").as_str().parse().unwrap_or(0);
                (Some(k), &line[cap.get(0).expect("group 0").end()..])
            }
            None => (None, line),
        };
        let values = extract(body, line_no)?;
        if values.is_empty() {
            continue;
        }
        match index {
            Some(k) if (1..=n).contains(&k) => out[k - 1].get_or_insert_with(Vec::new).extend(values),
            Some(k) => return Err(ParseError::Malformed { line: line_no, reason: format!("object number {k} out of range 1..={n}") }),
            None => unnumbered.push(values),
        }
    }
    if !unnumbered.is_empty() {
        if n == 1 {
            let slot = out[0].get_or_insert_with(Vec::new);
            unnumbered.into_iter().for_each(|v| slot.extend(v));
        } else if unnumbered.len() == n && out.iter().all(Option::is_none) {
            for (slot, v) in out.iter_mut().zip(unnumbered) {
                *slot = Some(v);
            }
        } else {
            return Err(ParseError::CountMismatch { expected: n, got: unnumbered.len() });
        }
    }
    if out.iter().all(Option::is_none) {
        return Err(ParseError::NoPayload(what));
    }
    Ok(out)
}

/// RGB triples per object; `None` marks an object the reply skipped.
pub fn parse_colors(reply: &str, n: usize) -> Result<Vec<Option<Vec<[u8; 3]>>>, ParseError> {
    per_object(reply, n, "RGB triples", |body, line| {
        rgb_triple()
            .captures_iter(body)
            .map(|cap| {
                let mut rgb = [0u8; 3];
                for (k, slot) in rgb.iter_mut().enumerate() {
                    let v: u32 = cap[k + 1].parse().unwrap_or(u32::MAX);
                    *slot = u8::try_from(v)
                        .map_err(|_| ParseError::Malformed { line, reason: format!("channel {v} above 255") })?;
                }
                Ok(rgb)
            })
            .collect()
    })
}

/// `(x, y)` points per object.
pub fn parse_points(reply: &str, n: usize) -> Result<Vec<Option<Vec<[f64; 2]>>>, ParseError> {
    per_object(reply, n, "(x, y) points", |body, line| {
        point_pair()
            .captures_iter(body)
            .map(|cap| Ok([parse_num(&cap[1], line)?, parse_num(&cap[2], line)?]))
            .collect()
    })
}

/// The JSON object in a reply: a fenced code block if present, otherwise
/// the span from the first `{` to the last `}`.
pub fn extract_json_object(reply: &str) -> Result<&str, ParseError> {
    let mut rest = reply;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let Some(end) = after.find("```") else { break };
        let block = &after[..end];
        let body = block.find('\n').map_or(block, |nl| &block[nl + 1..]);
        if body.trim_start().starts_with('{') {
            return Ok(body.trim());
        }
        rest = &after[end + 3..];
    }
    match (reply.find('{'), reply.rfind('}')) {
        (Some(a), Some(b)) if a < b => Ok(&reply[a..=b]),
        _ => Err(ParseError::NoPayload("JSON object")),
    }
}
