//! Canned model replies with their expected parse results.

use semantic_panel::llm::parse::{extract_json_object, parse_boxes, parse_colors, parse_descriptions, parse_points, ParseError};

/// Error shape without the free-text reason.
fn shape(e: &ParseError) -> String {
    match e {
        ParseError::NoPayload(_) => "NoPayload".into(),
        ParseError::Malformed { line, .. } => format!("Malformed@{line}"),
        ParseError::CountMismatch { expected, got } => format!("CountMismatch({expected},{got})"),
        ParseError::Json(_) => "Json".into(),
        ParseError::Invalid(_) => "Invalid".into(),
    }
}

fn check<T: PartialEq + std::fmt::Debug>(got: Result<T, ParseError>, want: Result<T, &str>) -> Result<(), String> {
    let got = got.map_err(|e| shape(&e));
    let want = want.map_err(str::to_string);
    if got == want {
        Ok(())
    } else {
        Err(format!("got {got:?}, want {want:?}"))
    }
}

fn d(pairs: &[(&str, u32)]) -> Vec<(String, u32)> {
    pairs.iter().map(|(s, n)| (s.to_string(), *n)).collect()
}

fn b(rows: &[(&str, [f64; 4])]) -> Vec<(String, [f64; 4])> {
    rows.iter().map(|(s, v)| (s.to_string(), *v)).collect()
}

pub struct Case {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

pub fn parser_corpus() -> Vec<Case> {
    let mut out = Vec::new();
    let mut add = |name: &'static str, outcome: Result<(), String>| out.push(Case { name, outcome });

    // Descriptions.
    add("desc/plain", check(parse_descriptions("(cat, 3)\n(dog, 1)"), Ok(d(&[("cat", 3), ("dog", 1)]))));
    add(
        "desc/prose",
        check(
            parse_descriptions("Sure! The objects are:\n(cat, 3)\n(dog, 1)\nLet me know if you need more."),
            Ok(d(&[("cat", 3), ("dog", 1)])),
        ),
    );
    add("desc/none", check(parse_descriptions("(none)"), Ok(vec![])));
    add(
        "desc/bullets",
        check(parse_descriptions("- (red apple, 2)\n- (wooden table, 1)"), Ok(d(&[("red apple", 2), ("wooden table", 1)]))),
    );
    add("desc/numbered", check(parse_descriptions("1. (cat, 1)\n2. (dog, 2)"), Ok(d(&[("cat", 1), ("dog", 2)]))));
    add("desc/inline", check(parse_descriptions("Objects: (cat, 1), (dog, 2)"), Ok(d(&[("cat", 1), ("dog", 2)]))));
    add("desc/emphasis", check(parse_descriptions("(**cat**, 1)"), Ok(d(&[("cat", 1)]))));
    add("desc/word-count", check(parse_descriptions("(cat, three)"), Err("Malformed@1")));
    add("desc/zero-count", check(parse_descriptions("ok\n(cat, 0)"), Err("Malformed@2")));
    add("desc/no-payload", check(parse_descriptions("There are no objects I can see."), Err("NoPayload")));

    // Boxes.
    add(
        "boxes/plain",
        check(
            parse_boxes("cat: [0.3, 0.5, 0.2, 0.2]\ndog: [0.7, 0.5, 0.2, 0.2]"),
            Ok(b(&[("cat", [0.3, 0.5, 0.2, 0.2]), ("dog", [0.7, 0.5, 0.2, 0.2])])),
        ),
    );
    add(
        "boxes/fenced",
        check(parse_boxes("Here you go:\n```\ncat: [0.3,0.5,0.2,0.2]\n```"), Ok(b(&[("cat", [0.3, 0.5, 0.2, 0.2])]))),
    );
    add("boxes/numbered", check(parse_boxes("1. cat: [0.1, 0.2, 0.3, 0.4]"), Ok(b(&[("cat", [0.1, 0.2, 0.3, 0.4])]))));
    add("boxes/three-numbers", check(parse_boxes("cat: [0.3, 0.5, 0.2]"), Err("Malformed@1")));
    add("boxes/five-numbers", check(parse_boxes("fine\ncat: [0.3, 0.5, 0.2, 0.2, 0.1]"), Err("Malformed@2")));
    add("boxes/no-payload", check(parse_boxes("I could not determine positions."), Err("NoPayload")));
    add("boxes/exponents", check(parse_boxes("cat: [3e-1, 5E-1, .2, 0.2]"), Ok(b(&[("cat", [0.3, 0.5, 0.2, 0.2])]))));
    add("boxes/out-of-range-raw", check(parse_boxes("cat: [1.4, 0.5, 0.2, 0.2]"), Ok(b(&[("cat", [1.4, 0.5, 0.2, 0.2])]))));
    add("boxes/equals-label", check(parse_boxes("\"cat\" = [0.5, 0.5, 1, 1]"), Ok(b(&[("cat", [0.5, 0.5, 1.0, 1.0])]))));

    // Colors.
    add("colors/single", check(parse_colors("(255, 0, 0)", 1), Ok(vec![Some(vec![[255, 0, 0]])])));
    add(
        "colors/bracket-index",
        check(
            parse_colors("[1] (255,0,0), (0,0,255)\n[2] (0,255,0)", 2),
            Ok(vec![Some(vec![[255, 0, 0], [0, 0, 255]]), Some(vec![[0, 255, 0]])]),
        ),
    );
    add(
        "colors/dot-index",
        check(parse_colors("1. (10, 20, 30)\n2. (40, 50, 60)", 2), Ok(vec![Some(vec![[10, 20, 30]]), Some(vec![[40, 50, 60]])])),
    );
    add(
        "colors/positional",
        check(parse_colors("(1,2,3)\n(4,5,6)", 2), Ok(vec![Some(vec![[1, 2, 3]]), Some(vec![[4, 5, 6]])])),
    );
    add("colors/skipped", check(parse_colors("[2] (9, 9, 9)", 2), Ok(vec![None, Some(vec![[9, 9, 9]])])));
    add("colors/channel-overflow", check(parse_colors("(300, 0, 0)", 1), Err("Malformed@1")));
    add("colors/count-mismatch", check(parse_colors("(1,2,3)\n(4,5,6)", 3), Err("CountMismatch(3,2)")));
    add("colors/index-range", check(parse_colors("[3] (1, 2, 3)", 2), Err("Malformed@1")));
    add("colors/no-payload", check(parse_colors("no colors here", 1), Err("NoPayload")));
    add("colors/bracket-triple", check(parse_colors("[12, 34, 56]", 1), Ok(vec![Some(vec![[12, 34, 56]])])));

    // Keypoints.
    add("points/single", check(parse_points("(0.3, 0.5), (0.32, 0.48)", 1), Ok(vec![Some(vec![[0.3, 0.5], [0.32, 0.48]])])));
    add(
        "points/indexed",
        check(
            parse_points("[1] (0.1, 0.2)\n[2] (0.5, 0.5), (0.6, 0.6)", 2),
            Ok(vec![Some(vec![[0.1, 0.2]]), Some(vec![[0.5, 0.5], [0.6, 0.6]])]),
        ),
    );
    add("points/no-payload", check(parse_points("nothing to report", 1), Err("NoPayload")));

    // JSON objects.
    add("json/fenced", check(extract_json_object("Here:\n```json\n{\"a\": 1}\n```\nDone."), Ok("{\"a\": 1}")));
    add("json/bare", check(extract_json_object("text {\"a\": {\"b\": 2}} trailing"), Ok("{\"a\": {\"b\": 2}}")));
    add("json/none", check(extract_json_object("no json at all"), Err("NoPayload")));
    add(
        "json/non-json-fence",
        check(extract_json_object("```\nnot json\n```\nthen {\"x\": 1}"), Ok("{\"x\": 1}")),
    );
    out
}
