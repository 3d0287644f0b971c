//! QuickDraw-style NDJSON: one JSON object per line with a "drawing" field
//! holding per-stroke parallel x/y arrays, plus an optional "word" category.

use crate::error::{Error, Result};
use crate::sketch::{Point, Sketch};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct Line {
    #[serde(default)]
    word: String,
    drawing: Vec<Vec<Vec<f64>>>,
}

/// Malformed-line handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    /// Any malformed line aborts the parse (default).
    Strict,
    /// Malformed lines are reported and skipped.
    Permissive,
}

#[derive(Debug)]
pub struct ParseOutcome {
    pub sketches: Vec<Sketch>,
    /// (1-based line number, reason) for lines skipped in permissive mode.
    pub skipped: Vec<(usize, String)>,
}

fn sketch_of(line: &str) -> std::result::Result<Sketch, String> {
    let parsed: Line = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if parsed.drawing.is_empty() {
        return Err("empty drawing".to_string());
    }
    let mut strokes = Vec::with_capacity(parsed.drawing.len());
    for (si, stroke) in parsed.drawing.iter().enumerate() {
        if stroke.len() != 2 {
            return Err(format!("stroke {} must hold [xs, ys], got {} arrays", si, stroke.len()));
        }
        let (xs, ys) = (&stroke[0], &stroke[1]);
        if xs.len() != ys.len() {
            return Err(format!("stroke {}: {} xs vs {} ys", si, xs.len(), ys.len()));
        }
        if xs.is_empty() {
            return Err(format!("stroke {} is empty", si));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(format!("stroke {}: non-numeric coordinate", si));
        }
        strokes.push(xs.iter().zip(ys.iter()).map(|(&x, &y)| Point::new(x, y)).collect());
    }
    Ok(Sketch::from_strokes(strokes, &parsed.word))
}

/// Parse NDJSON text into sketches, strict or permissive.
pub fn parse_ndjson(text: &str, strictness: Strictness) -> Result<ParseOutcome> {
    let mut sketches = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match sketch_of(line) {
            Ok(s) => sketches.push(s),
            Err(reason) => match strictness {
                Strictness::Strict => {
                    return Err(Error::Parse { line: i + 1, detail: reason });
                }
                Strictness::Permissive => skipped.push((i + 1, reason)),
            },
        }
    }
    Ok(ParseOutcome { sketches, skipped })
}

fn fmt_coord(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{}", v)
    }
}

/// Serialize sketches back to NDJSON (inverse of [`parse_ndjson`]).
pub fn write_ndjson(sketches: &[Sketch]) -> String {
    let mut out = String::new();
    for s in sketches {
        let strokes: Vec<String> = s
            .strokes
            .iter()
            .map(|st| {
                let xs: Vec<String> = st.points.iter().map(|p| fmt_coord(p.x)).collect();
                let ys: Vec<String> = st.points.iter().map(|p| fmt_coord(p.y)).collect();
                format!("[[{}],[{}]]", xs.join(","), ys.join(","))
            })
            .collect();
        out.push_str(&format!(
            "{{\"word\":{},\"drawing\":[{}]}}\n",
            serde_json::to_string(&s.category).expect("category encodes"),
            strokes.join(",")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_stroke() {
        let out = parse_ndjson(
            r#"{"word":"cat","drawing":[[[0,10,20],[5,6,7]]]}"#,
            Strictness::Strict,
        )
        .unwrap();
        assert_eq!(out.sketches.len(), 1);
        let s = &out.sketches[0];
        assert_eq!(s.category, "cat");
        assert_eq!(s.strokes.len(), 1);
        assert_eq!(s.strokes[0].points.len(), 3);
        assert_eq!(s.strokes[0].points[1], Point::new(10.0, 6.0));
    }

    #[test]
    fn preserves_stroke_order() {
        let out = parse_ndjson(
            r#"{"drawing":[[[0,1],[0,0]],[[5,6,7,8],[1,1,1,1]]]}"#,
            Strictness::Strict,
        )
        .unwrap();
        let s = &out.sketches[0];
        assert_eq!(s.strokes[0].points.len(), 2);
        assert_eq!(s.strokes[1].points.len(), 4);
        assert_eq!(s.point_count(), 6);
    }

    #[test]
    fn strict_rejects_with_line_number() {
        let text = "{\"drawing\":[[[0],[0]]]}\n{\"drawing\":[]}\n";
        match parse_ndjson(text, Strictness::Strict) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {:?}", other.map(|o| o.sketches.len())),
        }
    }

    #[test]
    fn permissive_skips_and_reports() {
        let text = "{\"drawing\":[[[0,1],[0,1]]]}\nnot json\n{\"drawing\":[[[2,3],[2,3]]]}\n";
        let out = parse_ndjson(text, Strictness::Permissive).unwrap();
        assert_eq!(out.sketches.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].0, 2);
    }

    #[test]
    fn rejects_ragged_stroke() {
        let text = r#"{"drawing":[[[0,1,2],[0,1]]]}"#;
        assert!(parse_ndjson(text, Strictness::Strict).is_err());
    }

    #[test]
    fn round_trip() {
        let text = "{\"word\":\"x\",\"drawing\":[[[0,10],[3,4]],[[7],[9]]]}\n";
        let out = parse_ndjson(text, Strictness::Strict).unwrap();
        let written = write_ndjson(&out.sketches);
        assert_eq!(written, text);
        let reparsed = parse_ndjson(&written, Strictness::Strict).unwrap();
        assert_eq!(reparsed.sketches, out.sketches);
    }
}
