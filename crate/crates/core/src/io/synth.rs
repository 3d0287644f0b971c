//! Procedural toy categories: multi-stroke sketches with 2-4 semantic parts
//! in random global poses, serialized in the QuickDraw NDJSON layout with
//! stroke-level ground-truth labels.

use crate::error::{Error, Result};
use crate::io::labels::write_label_file;
use crate::io::manifest::DatasetManifest;
use crate::io::ndjson::write_ndjson;
use crate::io::write_atomic;
use crate::sketch::{Point, Sketch};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Lollipop,
    Arrow,
    Snowman,
}

impl SynthKind {
    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::Lollipop => "lollipop",
            SynthKind::Arrow => "arrow",
            SynthKind::Snowman => "snowman",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "lollipop" => Ok(SynthKind::Lollipop),
            "arrow" => Ok(SynthKind::Arrow),
            "snowman" => Ok(SynthKind::Snowman),
            other => Err(Error::Config(format!(
                "unknown synth kind '{}' (lollipop|arrow|snowman)",
                other
            ))),
        }
    }
}

/// One generated sketch with its per-stroke label tokens.
#[derive(Debug, Clone)]
pub struct SynthSketch {
    pub sketch: Sketch,
    pub stroke_labels: Vec<String>,
}

fn circle(center: (f64, f64), radius: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    (0..n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
            let r = radius * (1.0 + rng.gen_range(-0.02..0.02));
            Point::new(center.0 + r * a.cos(), center.1 + r * a.sin())
        })
        .collect()
}

fn segment(a: (f64, f64), b: (f64, f64), n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let wobble = if i == 0 || i == n - 1 { 0.0 } else { rng.gen_range(-0.004..0.004) };
            Point::new(a.0 + t * (b.0 - a.0) + wobble, a.1 + t * (b.1 - a.1) + wobble)
        })
        .collect()
}

fn canonical(kind: SynthKind, rng: &mut ChaCha8Rng) -> (Vec<Vec<Point>>, Vec<String>) {
    match kind {
        SynthKind::Lollipop => {
            let r = 0.20 * rng.gen_range(0.85..1.15);
            let cx = rng.gen_range(-0.04..0.04);
            let cy = 0.22 + rng.gen_range(-0.03..0.03);
            let candy = circle((cx, cy), r, 40, rng);
            let tilt = rng.gen_range(-0.12..0.12);
            let top = (cx + tilt * 0.1, cy - r);
            let len = rng.gen_range(0.45..0.60);
            let stick = segment(top, (top.0 + tilt * len, top.1 - len), 12, rng);
            (vec![candy, stick], vec!["candy".into(), "stick".into()])
        }
        SynthKind::Arrow => {
            let half = 0.12 * rng.gen_range(0.8..1.2);
            let tip = (0.48, 0.0);
            let shaft = segment((-0.45, 0.0), (tip.0, tip.1), 14, rng);
            let head_u = segment(tip, (tip.0 - 0.2, half), 7, rng);
            let head_l = segment(tip, (tip.0 - 0.2, -half), 7, rng);
            let f = rng.gen_range(0.8..1.2);
            let tail_a = segment((-0.33, 0.10 * f), (-0.45, -0.04 * f), 6, rng);
            let tail_b = segment((-0.38, 0.10 * f), (-0.50, -0.04 * f), 6, rng);
            (
                vec![shaft, head_u, head_l, tail_a, tail_b],
                vec!["shaft".into(), "head".into(), "head".into(), "tail".into(), "tail".into()],
            )
        }
        SynthKind::Snowman => {
            let jr = rng.gen_range(0.9..1.1);
            let base = circle((0.0, -0.26), 0.22 * jr, 28, rng);
            let body = circle((0.0, 0.04 + rng.gen_range(-0.02..0.02)), 0.16 * jr, 22, rng);
            let head = circle((0.0, 0.27), 0.11 * jr, 16, rng);
            let bw = 0.13 * rng.gen_range(0.85..1.15);
            let hat = segment((-bw, 0.38), (bw, 0.38), 8, rng);
            (
                vec![base, body, head, hat],
                vec!["base".into(), "body".into(), "head".into(), "hat".into()],
            )
        }
    }
}

/// Rotate/reflect into a random global pose, then fit into the integer
/// [0, 255] canvas QuickDraw uses.
fn pose_and_quantize(strokes: Vec<Vec<Point>>, rng: &mut ChaCha8Rng) -> Vec<Vec<Point>> {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let reflect = rng.gen_bool(0.5);
    let (s, c) = angle.sin_cos();
    let posed: Vec<Vec<Point>> = strokes
        .into_iter()
        .map(|pts| {
            pts.into_iter()
                .map(|p| {
                    let x = if reflect { -p.x } else { p.x };
                    Point::new(c * x - s * p.y, s * x + c * p.y)
                })
                .collect()
        })
        .collect();
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in posed.iter().flatten() {
        min.0 = min.0.min(p.x);
        min.1 = min.1.min(p.y);
        max.0 = max.0.max(p.x);
        max.1 = max.1.max(p.y);
    }
    let side = (max.0 - min.0).max(max.1 - min.1).max(1e-9);
    let scale = 239.0 / side;
    posed
        .into_iter()
        .map(|pts| {
            pts.into_iter()
                .map(|p| {
                    Point::new(
                        ((p.x - min.0) * scale + 8.0).round(),
                        ((p.y - min.1) * scale + 8.0).round(),
                    )
                })
                .collect()
        })
        .collect()
}

/// Generate `count` sketches of a kind, deterministic per seed.
pub fn synth_sketches(kind: SynthKind, count: usize, seed: u64) -> Result<Vec<SynthSketch>> {
    if count == 0 {
        return Err(Error::InvalidArgument { op: "synth", detail: "count must be >= 1".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (strokes, labels) = canonical(kind, &mut rng);
        let posed = pose_and_quantize(strokes, &mut rng);
        out.push(SynthSketch {
            sketch: Sketch::from_strokes(posed, kind.name()),
            stroke_labels: labels,
        });
    }
    Ok(out)
}

/// Generate a category on disk: NDJSON sketches, per-stroke truth labels,
/// and a manifest (exemplar is sketch 0). Returns the manifest.
pub fn synth_category(
    kind: SynthKind,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let sketches = synth_sketches(kind, count, seed)?;
    let name = kind.name();
    let ndjson: Vec<Sketch> = sketches.iter().map(|s| s.sketch.clone()).collect();
    let label_lines: Vec<Vec<String>> =
        sketches.iter().map(|s| s.stroke_labels.clone()).collect();
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io { path: out_dir.display().to_string(), source: e })?;
    write_atomic(&out_dir.join(format!("{}.ndjson", name)), write_ndjson(&ndjson).as_bytes())?;
    write_atomic(
        &out_dir.join(format!("{}.labels", name)),
        write_label_file(&label_lines).as_bytes(),
    )?;
    let manifest = DatasetManifest {
        category: name.to_string(),
        sketches: format!("{}.ndjson", name),
        truth_labels: Some(format!("{}.labels", name)),
        exemplar_index: 0,
        resample_seed: seed,
        n_points: crate::sketch::DEFAULT_POINT_COUNT,
    };
    write_atomic(
        &out_dir.join(format!("{}.manifest", name)),
        manifest.to_kv().as_bytes(),
    )?;
    Ok(manifest)
}
