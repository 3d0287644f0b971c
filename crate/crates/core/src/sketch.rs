//! Vector-sketch data model: strokes of 2D points, resampling to a fixed
//! point budget, bounding-box normalization, and rotation augmentation.

use crate::error::{Error, Result};
use rand::Rng;

pub const DEFAULT_POINT_COUNT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// An ordered polyline drawn without lifting the pen.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub points: Vec<Point>,
    pub stroke_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub strokes: Vec<Stroke>,
    pub category: String,
}

impl Sketch {
    pub fn from_strokes(strokes: Vec<Vec<Point>>, category: &str) -> Self {
        Sketch {
            strokes: strokes
                .into_iter()
                .enumerate()
                .map(|(i, points)| Stroke { points, stroke_index: i })
                .collect(),
            category: category.to_string(),
        }
    }

    pub fn point_count(&self) -> usize {
        self.strokes.iter().map(|s| s.points.len()).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    /// Flat [N,2] coordinate buffer in stroke order.
    pub fn coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.point_count() * 2);
        for p in self.points() {
            out.push(p.x);
            out.push(p.y);
        }
        out
    }

    /// stroke index of each point, length N.
    pub fn stroke_of_point(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.point_count());
        for (j, s) in self.strokes.iter().enumerate() {
            out.extend(std::iter::repeat(j).take(s.points.len()));
        }
        out
    }

    /// Rebuild a sketch with the same stroke structure but new coordinates
    /// (flat x,y pairs in point order).
    pub fn with_coords(&self, coords: &[f64]) -> Result<Sketch> {
        if coords.len() != self.point_count() * 2 {
            return Err(Error::ShapeMismatch {
                op: "with_coords",
                detail: format!("{} values for {} points", coords.len(), self.point_count()),
            });
        }
        let mut out = self.clone();
        let mut i = 0;
        for s in &mut out.strokes {
            for p in &mut s.points {
                p.x = coords[i];
                p.y = coords[i + 1];
                i += 2;
            }
        }
        Ok(out)
    }
}

/// A sketch with per-point part labels drawn from a dense dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSketch {
    pub sketch: Sketch,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
}

impl LabeledSketch {
    pub fn new(sketch: Sketch, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if labels.len() != sketch.point_count() {
            return Err(Error::LabelCount { got: labels.len(), want: sketch.point_count() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(Error::InvalidArgument {
                op: "labeled_sketch",
                detail: format!("label id {} outside dictionary of {}", bad, label_names.len()),
            });
        }
        Ok(LabeledSketch { sketch, labels, label_names })
    }

    pub fn label_count(&self) -> usize {
        self.label_names.len()
    }
}

/// Inverse transform captured by [`normalize`]: x' = (x - center) * scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub scale: f64,
    pub center: (f64, f64),
}

impl NormalizationRecord {
    pub fn identity() -> Self {
        NormalizationRecord { scale: 1.0, center: (0.0, 0.0) }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new((p.x - self.center.0) * self.scale, (p.y - self.center.1) * self.scale)
    }

    pub fn invert(&self, p: Point) -> Point {
        Point::new(p.x / self.scale + self.center.0, p.y / self.scale + self.center.1)
    }
}

/// Isotropically scale and translate so the longer bounding-box side spans
/// exactly [-0.5, 0.5]. Rejects sketches whose points all coincide.
pub fn normalize(sketch: &Sketch) -> Result<(Sketch, NormalizationRecord)> {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for p in sketch.points() {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::NonFinite("normalize"));
        }
        min.0 = min.0.min(p.x);
        min.1 = min.1.min(p.y);
        max.0 = max.0.max(p.x);
        max.1 = max.1.max(p.y);
        any = true;
    }
    if !any {
        return Err(Error::EmptyPointSet("normalize"));
    }
    let side = (max.0 - min.0).max(max.1 - min.1);
    if side <= 0.0 {
        return Err(Error::DegenerateSketch);
    }
    let record = NormalizationRecord {
        scale: 1.0 / side,
        center: ((min.0 + max.0) / 2.0, (min.1 + max.1) / 2.0),
    };
    let mut out = sketch.clone();
    for s in &mut out.strokes {
        for p in &mut s.points {
            *p = record.apply(*p);
        }
    }
    Ok((out, record))
}

/// Rotate every point about the origin by `angle` radians. Stroke membership
/// and point order are untouched.
pub fn rotate_about_origin(sketch: &Sketch, angle: f64) -> Sketch {
    let (c, s) = (angle.cos(), angle.sin());
    let mut out = sketch.clone();
    for st in &mut out.strokes {
        for p in &mut st.points {
            let (x, y) = (p.x, p.y);
            p.x = c * x - s * y;
            p.y = s * x + c * y;
        }
    }
    out
}

/// Mirror every point about the y axis.
pub fn reflect_x(sketch: &Sketch) -> Sketch {
    let mut out = sketch.clone();
    for st in &mut out.strokes {
        for p in &mut st.points {
            p.x = -p.x;
        }
    }
    out
}

pub const AUGMENT_MAX_ANGLE: f64 = std::f64::consts::PI / 12.0;

/// Rotate by a fixed angle and re-normalize.
pub fn augment_with_angle(sketch: &Sketch, angle: f64) -> Result<Sketch> {
    let rotated = rotate_about_origin(sketch, angle);
    Ok(normalize(&rotated)?.0)
}

/// Rotate about the origin by one shared angle drawn uniformly from
/// [-pi/12, pi/12], then re-normalize.
pub fn augment_rotate<R: Rng>(sketch: &Sketch, rng: &mut R) -> Result<Sketch> {
    let angle = rng.gen_range(-AUGMENT_MAX_ANGLE..AUGMENT_MAX_ANGLE);
    augment_with_angle(sketch, angle)
}

// ---- resampling ------------------------------------------------------------

fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 <= 0.0 {
        return p.dist(&a);
    }
    let t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
    let t = t.clamp(0.0, 1.0);
    p.dist(&Point::new(a.x + t * dx, a.y + t * dy))
}

/// Ramer-Douglas-Peucker keep-set for one polyline. An interior point is kept
/// while the farthest deviation is >= tol, so tol = 0 keeps every point.
fn rdp_keep(points: &[Point], tol: f64) -> Vec<bool> {
    let n = points.len();
    let mut keep = vec![false; n];
    if n == 0 {
        return keep;
    }
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (mut best, mut best_d) = (lo + 1, f64::NEG_INFINITY);
        for i in lo + 1..hi {
            let d = point_segment_dist(points[i], points[lo], points[hi]);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        if best_d >= tol {
            keep[best] = true;
            stack.push((lo, best));
            stack.push((best, hi));
        }
    }
    keep
}

fn simplified_count(sketch: &Sketch, tol: f64) -> usize {
    sketch
        .strokes
        .iter()
        .map(|s| rdp_keep(&s.points, tol).iter().filter(|&&k| k).count())
        .sum()
}

fn apply_rdp(sketch: &Sketch, tol: f64) -> Sketch {
    let mut out = sketch.clone();
    for s in &mut out.strokes {
        let keep = rdp_keep(&s.points, tol);
        let mut i = 0;
        s.points.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    }
    out
}

fn sketch_diag(sketch: &Sketch) -> f64 {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in sketch.points() {
        min.0 = min.0.min(p.x);
        min.1 = min.1.min(p.y);
        max.0 = max.0.max(p.x);
        max.1 = max.1.max(p.y);
    }
    ((max.0 - min.0).powi(2) + (max.1 - min.1).powi(2)).sqrt()
}

/// Split one segment from the longest quartile at its midpoint. Returns false
/// when no splittable segment exists.
fn split_longest_quartile<R: Rng>(sketch: &mut Sketch, rng: &mut R) -> bool {
    let mut segs: Vec<(usize, usize, f64)> = Vec::new();
    for (si, s) in sketch.strokes.iter().enumerate() {
        for i in 0..s.points.len().saturating_sub(1) {
            segs.push((si, i, s.points[i].dist(&s.points[i + 1])));
        }
    }
    if segs.is_empty() {
        return false;
    }
    segs.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let quartile = (segs.len() + 3) / 4;
    let pick = rng.gen_range(0..quartile);
    let (si, i, _) = segs[pick];
    let (a, b) = (sketch.strokes[si].points[i], sketch.strokes[si].points[i + 1]);
    let mid = Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    sketch.strokes[si].points.insert(i + 1, mid);
    true
}

/// Uniformly drop one interior point. Returns false when every stroke is down
/// to its endpoints.
fn drop_interior<R: Rng>(sketch: &mut Sketch, rng: &mut R) -> bool {
    let mut interior: Vec<(usize, usize)> = Vec::new();
    for (si, s) in sketch.strokes.iter().enumerate() {
        for i in 1..s.points.len().saturating_sub(1) {
            interior.push((si, i));
        }
    }
    if interior.is_empty() {
        return false;
    }
    let (si, i) = interior[rng.gen_range(0..interior.len())];
    sketch.strokes[si].points.remove(i);
    true
}

const RDP_BISECT_RESOLUTION: f64 = 1e-6;

/// Resample to exactly `n` points: RDP simplification with the tolerance
/// bisected until the count lands at or below `n`, then midpoint splits of
/// randomly chosen longest-quartile segments until the count reaches `n`,
/// then (defensively) uniform drops of interior points back down to `n`.
/// Every stroke keeps its endpoints and at least one point.
pub fn resample<R: Rng>(sketch: &Sketch, n: usize, rng: &mut R) -> Result<Sketch> {
    if sketch.strokes.is_empty() || sketch.strokes.iter().any(|s| s.points.is_empty()) {
        return Err(Error::EmptyPointSet("resample"));
    }
    if n < sketch.strokes.len() {
        return Err(Error::ResampleBudget { n, min: sketch.strokes.len() });
    }
    let endpoint_min: usize = sketch.strokes.iter().map(|s| s.points.len().min(2)).sum();
    if n < endpoint_min {
        return Err(Error::ResampleBudget { n, min: endpoint_min });
    }

    let mut out = if simplified_count(sketch, 0.0) <= n {
        sketch.clone()
    } else {
        let mut lo = 0.0f64;
        let mut hi = sketch_diag(sketch).max(1.0);
        while simplified_count(sketch, hi) > n {
            hi *= 2.0;
        }
        while hi - lo > RDP_BISECT_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            if simplified_count(sketch, mid) <= n {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        apply_rdp(sketch, hi)
    };

    while out.point_count() < n {
        if !split_longest_quartile(&mut out, rng) {
            return Err(Error::ResampleBudget { n, min: out.point_count() });
        }
    }
    while out.point_count() > n {
        if !drop_interior(&mut out, rng) {
            return Err(Error::ResampleBudget { n, min: out.point_count() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn resample_adds_midpoint() {
        let s = Sketch::from_strokes(vec![vec![Point::new(0.0, 0.0), Point::new(4.0, 0.0)]], "t");
        let out = resample(&s, 3, &mut rng(0)).unwrap();
        assert_eq!(out.point_count(), 3);
        assert_eq!(out.strokes[0].points[1], Point::new(2.0, 0.0));
    }

    #[test]
    fn resample_identity_when_at_budget() {
        let s = Sketch::from_strokes(
            vec![
                vec![Point::new(0.0, 0.0), Point::new(1.0, 0.3), Point::new(2.0, -0.1)],
                vec![Point::new(0.0, 1.0), Point::new(1.5, 1.2)],
            ],
            "t",
        );
        let out = resample(&s, 5, &mut rng(0)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn resample_rejects_small_budget() {
        let s = Sketch::from_strokes(
            vec![vec![Point::new(0.0, 0.0)], vec![Point::new(1.0, 1.0)]],
            "t",
        );
        assert!(matches!(resample(&s, 1, &mut rng(0)), Err(Error::ResampleBudget { .. })));
    }

    #[test]
    fn resample_points_stay_on_polyline() {
        // 300-point random walk in three strokes, down to 256.
        let mut r = rng(7);
        let mut strokes = Vec::new();
        for _ in 0..3 {
            let mut pts = vec![Point::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))];
            for _ in 1..100 {
                let last = *pts.last().unwrap();
                pts.push(Point::new(
                    last.x + r.gen_range(-0.1..0.1),
                    last.y + r.gen_range(-0.1..0.1),
                ));
            }
            strokes.push(pts);
        }
        let sketch = Sketch::from_strokes(strokes, "walk");
        let out = resample(&sketch, 256, &mut rng(1)).unwrap();
        assert_eq!(out.point_count(), 256);
        for (si, s) in out.strokes.iter().enumerate() {
            for p in &s.points {
                let src = &sketch.strokes[si].points;
                let mind = (0..src.len() - 1)
                    .map(|i| point_segment_dist(*p, src[i], src[i + 1]))
                    .fold(f64::INFINITY, f64::min);
                assert!(mind < 1e-9, "stroke {} point off polyline by {}", si, mind);
            }
        }
        // endpoints retained
        for (si, s) in out.strokes.iter().enumerate() {
            assert_eq!(s.points.first(), sketch.strokes[si].points.first());
            assert_eq!(s.points.last(), sketch.strokes[si].points.last());
        }
    }

    #[test]
    fn resample_single_point_stroke_kept() {
        let s = Sketch::from_strokes(
            vec![vec![Point::new(0.5, 0.5)], vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]],
            "t",
        );
        let out = resample(&s, 6, &mut rng(3)).unwrap();
        assert_eq!(out.point_count(), 6);
        assert_eq!(out.strokes[0].points.len(), 1);
    }

    #[test]
    fn normalize_aspect_preserved() {
        let s = Sketch::from_strokes(
            vec![vec![Point::new(0.0, 0.0), Point::new(10.0, 5.0), Point::new(10.0, 0.0)]],
            "t",
        );
        let (out, _) = normalize(&s).unwrap();
        let xs: Vec<f64> = out.points().map(|p| p.x).collect();
        let ys: Vec<f64> = out.points().map(|p| p.y).collect();
        let (xmin, xmax) = (xs.iter().cloned().fold(f64::MAX, f64::min), xs.iter().cloned().fold(f64::MIN, f64::max));
        let (ymin, ymax) = (ys.iter().cloned().fold(f64::MAX, f64::min), ys.iter().cloned().fold(f64::MIN, f64::max));
        assert!((xmin + 0.5).abs() < 1e-12 && (xmax - 0.5).abs() < 1e-12);
        assert!((ymin + 0.25).abs() < 1e-12 && (ymax - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normalize_identity_on_normalized() {
        let s = Sketch::from_strokes(
            vec![vec![Point::new(-0.5, -0.25), Point::new(0.5, 0.25)]],
            "t",
        );
        let (out, rec) = normalize(&s).unwrap();
        assert_eq!(rec, NormalizationRecord::identity());
        assert_eq!(out, s);
    }

    #[test]
    fn normalize_round_trip() {
        let mut r = rng(11);
        let pts: Vec<Point> =
            (0..40).map(|_| Point::new(r.gen_range(-30.0..90.0), r.gen_range(5.0..25.0))).collect();
        let s = Sketch::from_strokes(vec![pts.clone()], "t");
        let (out, rec) = normalize(&s).unwrap();
        for (orig, norm) in pts.iter().zip(out.points()) {
            let back = rec.invert(*norm);
            assert!((back.x - orig.x).abs() < 1e-12 && (back.y - orig.y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let s = Sketch::from_strokes(vec![vec![Point::new(1.0, 1.0), Point::new(1.0, 1.0)]], "t");
        assert!(matches!(normalize(&s), Err(Error::DegenerateSketch)));
    }

    #[test]
    fn normalize_idempotent() {
        let mut r = rng(13);
        let pts: Vec<Point> =
            (0..25).map(|_| Point::new(r.gen_range(-3.0..9.0), r.gen_range(0.0..2.0))).collect();
        let s = Sketch::from_strokes(vec![pts], "t");
        let (once, _) = normalize(&s).unwrap();
        let (twice, _) = normalize(&once).unwrap();
        for (a, b) in once.points().zip(twice.points()) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_zero_is_identity() {
        let raw = Sketch::from_strokes(
            vec![vec![Point::new(-0.5, 0.0), Point::new(0.5, 0.1)]],
            "t",
        );
        let (s, _) = normalize(&raw).unwrap();
        let out = augment_with_angle(&s, 0.0).unwrap();
        for (a, b) in s.points().zip(out.points()) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_formula() {
        let s = Sketch::from_strokes(vec![vec![Point::new(0.5, 0.0)]], "t");
        let out = rotate_about_origin(&s, std::f64::consts::PI / 12.0);
        let p = out.strokes[0].points[0];
        let a = std::f64::consts::PI / 12.0;
        assert!((p.x - 0.5 * a.cos()).abs() < 1e-15);
        assert!((p.y - 0.5 * a.sin()).abs() < 1e-15);
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let mut r = rng(17);
        let pts: Vec<Point> =
            (0..20).map(|_| Point::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5))).collect();
        let s = Sketch::from_strokes(vec![pts.clone()], "t");
        let out = rotate_about_origin(&s, 0.9);
        let rpts: Vec<Point> = out.points().cloned().collect();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert!((pts[i].dist(&pts[j]) - rpts[i].dist(&rpts[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn augment_preserves_structure_and_bounds() {
        let s = Sketch::from_strokes(
            vec![
                vec![Point::new(-0.5, -0.2), Point::new(0.0, 0.2), Point::new(0.5, -0.1)],
                vec![Point::new(0.0, -0.3), Point::new(0.1, 0.3)],
            ],
            "t",
        );
        let mut r = rng(23);
        let out = augment_rotate(&s, &mut r).unwrap();
        assert_eq!(out.strokes.len(), s.strokes.len());
        for (a, b) in s.strokes.iter().zip(out.strokes.iter()) {
            assert_eq!(a.points.len(), b.points.len());
        }
        for p in out.points() {
            assert!(p.x >= -0.5 - 1e-12 && p.x <= 0.5 + 1e-12);
            assert!(p.y >= -0.5 - 1e-12 && p.y <= 0.5 + 1e-12);
        }
    }
}
