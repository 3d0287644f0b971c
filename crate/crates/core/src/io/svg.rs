//! SVG rendering of labeled sketches: one polyline per same-label run
//! within a stroke, colors keyed by label, with a legend. Output bytes are
//! deterministic for identical input.

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::sketch::LabeledSketch;
use std::path::Path;

const CANVAS: f64 = 512.0;
const MARGIN: f64 = 26.0;

/// 64 visually distinct colors, stepped around the hue wheel.
fn palette(i: usize) -> String {
    let h = (i as f64 * 47.0) % 360.0;
    let (s, l): (f64, f64) = if i % 2 == 0 { (0.72, 0.42) } else { (0.62, 0.58) };
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    format!(
        "#{:02x}{:02x}{:02x}",
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8
    )
}

fn px(v: f64) -> String {
    format!("{:.2}", v)
}

/// Render to an SVG string. Coordinates are assumed normalized (roughly
/// [-0.5, 0.5]); y points up in sketch space and down in SVG space.
pub fn svg_string(result: &LabeledSketch) -> Result<String> {
    let l = result.label_names.len();
    if l > 64 {
        return Err(Error::PaletteOverflow(l));
    }
    let scale = CANVAS - 2.0 * MARGIN;
    let map = |x: f64, y: f64| -> (f64, f64) {
        ((x + 0.5) * scale + MARGIN, (0.5 - y) * scale + MARGIN)
    };
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{c}\" height=\"{c}\" viewBox=\"0 0 {c} {c}\">\n",
        c = CANVAS as u32
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let mut offset = 0usize;
    for stroke in &result.sketch.strokes {
        let n = stroke.points.len();
        let labels = &result.labels[offset..offset + n];
        let mut start = 0usize;
        while start < n {
            let label = labels[start];
            let mut end = start + 1;
            while end < n && labels[end] == label {
                end += 1;
            }
            // extend by one point so consecutive runs connect visually
            let draw_end = (end + 1).min(n);
            let pts: Vec<String> = stroke.points[start..draw_end]
                .iter()
                .map(|p| {
                    let (x, y) = map(p.x, p.y);
                    format!("{},{}", px(x), px(y))
                })
                .collect();
            if pts.len() == 1 {
                let (x, y) = map(stroke.points[start].x, stroke.points[start].y);
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{}\"/>\n",
                    px(x),
                    px(y),
                    palette(label)
                ));
            } else {
                out.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2.2\" stroke-linecap=\"round\"/>\n",
                    pts.join(" "),
                    palette(label)
                ));
            }
            start = end;
        }
        offset += n;
    }
    for (i, name) in result.label_names.iter().enumerate() {
        let y = 18.0 + 16.0 * i as f64;
        let shown = if name.is_empty() { format!("label {}", i) } else { name.clone() };
        out.push_str(&format!(
            "<rect x=\"8\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            px(y - 9.0),
            palette(i)
        ));
        out.push_str(&format!(
            "<text x=\"22\" y=\"{}\" font-size=\"12\" font-family=\"monospace\">{}</text>\n",
            px(y),
            shown
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Render and write atomically.
pub fn render_svg(result: &LabeledSketch, path: &Path) -> Result<()> {
    let s = svg_string(result)?;
    write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point, Sketch};

    fn toy() -> LabeledSketch {
        let s = Sketch::from_strokes(
            vec![
                vec![
                    Point::new(-0.4, 0.0),
                    Point::new(-0.1, 0.2),
                    Point::new(0.1, 0.2),
                    Point::new(0.4, 0.0),
                ],
                vec![Point::new(0.0, -0.4)],
            ],
            "t",
        );
        LabeledSketch::new(s, vec![0, 0, 1, 1, 1], vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn single_label_single_color() {
        let s = Sketch::from_strokes(
            vec![vec![Point::new(-0.3, 0.0), Point::new(0.3, 0.0)]],
            "t",
        );
        let ls = LabeledSketch::new(s, vec![0, 0], vec!["only".into()]).unwrap();
        let svg = svg_string(&ls).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let color = palette(0);
        assert!(svg.contains(&color));
    }

    #[test]
    fn runs_split_within_stroke() {
        let svg = svg_string(&toy()).unwrap();
        // first stroke splits into two runs, second stroke is a dot
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn empty_names_show_ids() {
        let s = Sketch::from_strokes(vec![vec![Point::new(0.0, 0.0)]], "t");
        let ls = LabeledSketch::new(s, vec![0], vec!["".into()]).unwrap();
        let svg = svg_string(&ls).unwrap();
        assert!(svg.contains("label 0"));
    }

    #[test]
    fn too_many_labels_rejected() {
        let s = Sketch::from_strokes(vec![vec![Point::new(0.0, 0.0)]], "t");
        let names: Vec<String> = (0..65).map(|i| format!("l{}", i)).collect();
        let ls = LabeledSketch::new(s, vec![0], names).unwrap();
        assert!(matches!(svg_string(&ls), Err(Error::PaletteOverflow(65))));
    }

    #[test]
    fn byte_identical_output() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        render_svg(&toy(), &p1).unwrap();
        render_svg(&toy(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
