//! Label annotation files: a header line, then one line of whitespace
//! separated label-name tokens per sketch. A line carries either one token
//! per point or one per stroke (broadcast). Names map to dense ids in
//! first-seen order across the whole file.

use crate::error::{Error, Result};
use crate::sketch::{LabeledSketch, Sketch};

pub const LABELS_HEADER: &str = "format=sketchseg-labels-v1";

/// Parsed annotation file: the shared dense dictionary plus raw token lines.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub names: Vec<String>,
    pub lines: Vec<Vec<String>>,
}

impl LabelFile {
    /// Attach line `index` to a sketch, broadcasting per-stroke tokens when
    /// the token count matches the stroke count.
    pub fn apply(&self, index: usize, sketch: &Sketch) -> Result<LabeledSketch> {
        let tokens = self.lines.get(index).ok_or_else(|| Error::Parse {
            line: index + 2,
            detail: format!("no label line {} (file has {})", index, self.lines.len()),
        })?;
        let id_of = |tok: &str| -> usize {
            self.names.iter().position(|n| n == tok).expect("token from this file")
        };
        let labels: Vec<usize> = if tokens.len() == sketch.strokes.len() {
            sketch
                .strokes
                .iter()
                .zip(tokens.iter())
                .flat_map(|(s, t)| std::iter::repeat(id_of(t)).take(s.points.len()))
                .collect()
        } else if tokens.len() == sketch.point_count() {
            tokens.iter().map(|t| id_of(t)).collect()
        } else {
            return Err(Error::LabelCount { got: tokens.len(), want: sketch.point_count() });
        };
        LabeledSketch::new(sketch.clone(), labels, self.names.clone())
    }
}

/// Parse an annotation file (header + token lines).
pub fn parse_label_file(text: &str) -> Result<LabelFile> {
    let mut lines_iter = text.lines();
    match lines_iter.next() {
        Some(h) if h.trim() == LABELS_HEADER => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                detail: format!("expected '{}', got {:?}", LABELS_HEADER, other.unwrap_or("")),
            })
        }
    }
    let mut names: Vec<String> = Vec::new();
    let mut lines = Vec::new();
    for raw in lines_iter {
        if raw.trim().is_empty() {
            continue;
        }
        let tokens: Vec<String> = raw.split_whitespace().map(|t| t.to_string()).collect();
        for t in &tokens {
            if !names.iter().any(|n| n == t) {
                names.push(t.clone());
            }
        }
        lines.push(tokens);
    }
    Ok(LabelFile { names, lines })
}

/// Parse a single annotation line against one sketch (the exemplar case).
pub fn parse_labels(text: &str, sketch: &Sketch) -> Result<LabeledSketch> {
    let file = parse_label_file(text)?;
    if file.lines.len() != 1 {
        return Err(Error::Parse {
            line: 2,
            detail: format!("expected one label line, got {}", file.lines.len()),
        });
    }
    file.apply(0, sketch)
}

/// Serialize an annotation file.
pub fn write_label_file(lines: &[Vec<String>]) -> String {
    let mut out = String::from(LABELS_HEADER);
    out.push('\n');
    for tokens in lines {
        out.push_str(&tokens.join(" "));
        out.push('\n');
    }
    out
}
