//! Unsupervised keypoints, Chamfer distance, and the analytic sketch-level
//! rigid alignment (rotation or reflection plus translation).

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::MlpVars;
use crate::sketch::{Point, Sketch};

/// Keypoint count of the alignment head.
pub const KEYPOINT_COUNT: usize = 256;

/// M keypoints as an [M,2] value.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub coords: Tensor,
}

/// Per-point keypoint probabilities, N x M; column j is a distribution over
/// points and sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub probs: Tensor,
}

/// Rigid sketch-level transform: x' = R x + t with R orthogonal (rotation or
/// reflection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalTransform {
    pub r: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl GlobalTransform {
    pub fn identity() -> Self {
        GlobalTransform { r: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] }
    }

    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        GlobalTransform { r: [[c, -s], [s, c]], t: [0.0, 0.0] }
    }

    pub fn reflection_x() -> Self {
        GlobalTransform { r: [[-1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] }
    }

    pub fn with_translation(mut self, t: [f64; 2]) -> Self {
        self.t = t;
        self
    }

    pub fn det(&self) -> f64 {
        self.r[0][0] * self.r[1][1] - self.r[0][1] * self.r[1][0]
    }

    pub fn apply_point(&self, p: Point) -> Point {
        Point::new(
            self.r[0][0] * p.x + self.r[0][1] * p.y + self.t[0],
            self.r[1][0] * p.x + self.r[1][1] * p.y + self.t[1],
        )
    }

    /// Compose: (self o other)(x) = self(other(x)).
    pub fn compose(&self, other: &GlobalTransform) -> GlobalTransform {
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = self.r[i][0] * other.r[0][j] + self.r[i][1] * other.r[1][j];
            }
        }
        let t = [
            self.r[0][0] * other.t[0] + self.r[0][1] * other.t[1] + self.t[0],
            self.r[1][0] * other.t[0] + self.r[1][1] * other.t[1] + self.t[1],
        ];
        GlobalTransform { r, t }
    }
}

/// Pointwise affine map of a whole sketch.
pub fn apply_global(sketch: &Sketch, g: &GlobalTransform) -> Sketch {
    let mut out = sketch.clone();
    for s in &mut out.strokes {
        for p in &mut s.points {
            *p = g.apply_point(*p);
        }
    }
    out
}

/// Inverse transform: (R^T, -R^T t). Valid because R is orthogonal.
pub fn invert_global(g: &GlobalTransform) -> GlobalTransform {
    let rt = [[g.r[0][0], g.r[1][0]], [g.r[0][1], g.r[1][1]]];
    GlobalTransform {
        r: rt,
        t: [
            -(rt[0][0] * g.t[0] + rt[0][1] * g.t[1]),
            -(rt[1][0] * g.t[0] + rt[1][1] * g.t[1]),
        ],
    }
}

// ---- Chamfer distance ------------------------------------------------------

fn nearest_indices(a: &Tensor, b: &Tensor) -> Vec<usize> {
    let (na, _) = a.shape();
    let (nb, _) = b.shape();
    let mut out = Vec::with_capacity(na);
    for i in 0..na {
        let (ax, ay) = (a.get(i, 0), a.get(i, 1));
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for j in 0..nb {
            let dx = ax - b.get(j, 0);
            let dy = ay - b.get(j, 1);
            let d = dx * dx + dy * dy;
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        out.push(best);
    }
    out
}

/// Symmetric mean of squared nearest-neighbor distances; the assignment is
/// treated as constant so gradients flow through coordinates only.
pub fn chamfer_on_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (na, ca) = tape.value(a).shape();
    let (nb, cb) = tape.value(b).shape();
    if na == 0 || nb == 0 {
        return Err(Error::EmptyPointSet("chamfer"));
    }
    if ca != 2 || cb != 2 {
        return Err(Error::ShapeMismatch {
            op: "chamfer",
            detail: format!("{}x{} vs {}x{}", na, ca, nb, cb),
        });
    }
    let idx_ab = nearest_indices(tape.value(a), tape.value(b));
    let idx_ba = nearest_indices(tape.value(b), tape.value(a));
    let b_sel = tape.gather_rows(b, &idx_ab)?;
    let d1 = tape.sub(a, b_sel)?;
    let d1 = tape.square(d1);
    let s1 = tape.sum(d1);
    let s1 = tape.scale(s1, 1.0 / na as f64)?;
    let a_sel = tape.gather_rows(a, &idx_ba)?;
    let d2 = tape.sub(b, a_sel)?;
    let d2 = tape.square(d2);
    let s2 = tape.sum(d2);
    let s2 = tape.scale(s2, 1.0 / nb as f64)?;
    tape.add(s1, s2)
}

/// Chamfer distance between plain point buffers (x,y pairs).
pub fn chamfer(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyPointSet("chamfer"));
    }
    let ta = Tensor::new(a.len() / 2, 2, a.to_vec())?;
    let tb = Tensor::new(b.len() / 2, 2, b.to_vec())?;
    let one_way = |x: &Tensor, y: &Tensor| -> f64 {
        let idx = nearest_indices(x, y);
        let mut s = 0.0;
        for (i, &j) in idx.iter().enumerate() {
            let dx = x.get(i, 0) - y.get(j, 0);
            let dy = x.get(i, 1) - y.get(j, 1);
            s += dx * dx + dy * dy;
        }
        s / x.rows() as f64
    };
    Ok(one_way(&ta, &tb) + one_way(&tb, &ta))
}

// ---- keypoint prediction ---------------------------------------------------

/// Keypoints still attached to a tape: an [M,2] var plus the [M,N]
/// point-distribution rows it was pooled with.
#[derive(Debug, Clone, Copy)]
pub struct TapeKeypoints {
    pub coords: Var,
    /// Softmax rows over points, [M,N]; the probability map transposed.
    pub point_dist: Var,
}

impl TapeKeypoints {
    pub fn detach(&self, tape: &Tape) -> (ProbabilityMap, KeypointSet) {
        let rows = tape.value(self.point_dist);
        let (m, n) = rows.shape();
        let mut probs = vec![0.0; n * m];
        for j in 0..m {
            for i in 0..n {
                probs[i * m + j] = rows.get(j, i);
            }
        }
        (
            ProbabilityMap { probs: Tensor::new(n, m, probs).expect("probmap shape") },
            KeypointSet { coords: tape.value(self.coords).clone() },
        )
    }
}

/// Apply the keypoint head to per-point features: per-point logits are
/// softmaxed over the point axis and keypoints are the probability-weighted
/// means of the sketch points.
pub fn predict_keypoints(
    tape: &mut Tape,
    per_point: Var,
    coords: Var,
    omega: &MlpVars,
) -> Result<TapeKeypoints> {
    let logits = omega.forward(tape, per_point)?;
    let mt = tape.transpose(logits);
    let point_dist = tape.softmax_rows(mt);
    let kps = tape.matmul(point_dist, coords)?;
    Ok(TapeKeypoints { coords: kps, point_dist })
}

/// Chamfer anchor pulling keypoints onto the strokes.
pub fn keypoint_anchor_loss(tape: &mut Tape, coords: Var, keypoints: Var) -> Result<Var> {
    chamfer_on_tape(tape, coords, keypoints)
}

// ---- rigid alignment -------------------------------------------------------

/// Rigid transform vars still attached to a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeGlobalTransform {
    /// 2x2
    pub r: Var,
    /// 1x2
    pub t: Var,
}

fn plain_branch(src: &Tensor, dst: &Tensor, flip: bool) -> (f64, f64, f64) {
    let m = src.rows();
    let inv = 1.0 / m as f64;
    let (mut sxm, mut sym, mut dxm, mut dym) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..m {
        sxm += src.get(i, 0);
        sym += src.get(i, 1);
        dxm += dst.get(i, 0);
        dym += dst.get(i, 1);
    }
    sxm *= inv;
    sym *= inv;
    dxm *= inv;
    dym *= inv;
    let (mut cross, mut dot) = (0.0, 0.0);
    for i in 0..m {
        let mut sx = src.get(i, 0) - sxm;
        let sy = src.get(i, 1) - sym;
        if flip {
            sx = -sx;
        }
        let dx = dst.get(i, 0) - dxm;
        let dy = dst.get(i, 1) - dym;
        cross += sx * dy - sy * dx;
        dot += sx * dx + sy * dy;
    }
    let theta = cross.atan2(dot);
    let (st, ct) = theta.sin_cos();
    let mut resid = 0.0;
    for i in 0..m {
        let mut sx = src.get(i, 0) - sxm;
        let sy = src.get(i, 1) - sym;
        if flip {
            sx = -sx;
        }
        let rx = ct * sx - st * sy;
        let ry = st * sx + ct * sy;
        let dx = dst.get(i, 0) - dxm;
        let dy = dst.get(i, 1) - dym;
        resid += (rx - dx).powi(2) + (ry - dy).powi(2);
    }
    (theta, resid * inv, cross.abs() + dot.abs())
}

/// Solve min over orthogonal R and t of (1/M) sum ||R src_i + t - dst_i||^2
/// with index-matched correspondences. Two closed-form candidates are tried:
/// a pure rotation, and the best rotation composed with an x-flip of the
/// source; the smaller residual wins (ties prefer the rotation). The chosen
/// branch is built on the tape so gradients reach both keypoint sets; the
/// branch choice itself is a constant.
pub fn rigid_solve_on_tape(
    tape: &mut Tape,
    src: Var,
    dst: Var,
) -> Result<(TapeGlobalTransform, GlobalTransform)> {
    let (m, cs) = tape.value(src).shape();
    let (md, cd) = tape.value(dst).shape();
    if cs != 2 || cd != 2 || m != md {
        return Err(Error::ShapeMismatch {
            op: "rigid_solve",
            detail: format!("{}x{} vs {}x{}", m, cs, md, cd),
        });
    }
    if m < 2 {
        return Err(Error::DegenerateKeypoints);
    }
    {
        let sv = tape.value(src);
        let mean_x: f64 = (0..m).map(|i| sv.get(i, 0)).sum::<f64>() / m as f64;
        let mean_y: f64 = (0..m).map(|i| sv.get(i, 1)).sum::<f64>() / m as f64;
        let spread: f64 = (0..m)
            .map(|i| (sv.get(i, 0) - mean_x).powi(2) + (sv.get(i, 1) - mean_y).powi(2))
            .sum();
        if spread < 1e-18 {
            return Err(Error::DegenerateKeypoints);
        }
    }
    let (_, resid_rot, mag_rot) = plain_branch(tape.value(src), tape.value(dst), false);
    let (_, resid_ref, mag_ref) = plain_branch(tape.value(src), tape.value(dst), true);
    let use_flip = resid_ref < resid_rot;
    if (use_flip && mag_ref < 1e-30) || (!use_flip && mag_rot < 1e-30) {
        return Err(Error::DegenerateKeypoints);
    }

    let inv_m = tape.constant(Tensor::new(1, m, vec![1.0 / m as f64; m])?);
    let src_mean = tape.matmul(inv_m, src)?;
    let dst_mean = tape.matmul(inv_m, dst)?;
    let mut sc = tape.sub(src, src_mean)?;
    let dc = tape.sub(dst, dst_mean)?;
    if use_flip {
        let fx = tape.constant(Tensor::row(&[-1.0, 1.0]));
        sc = tape.mul(sc, fx)?;
    }
    let sx = tape.slice_cols(sc, 0, 1)?;
    let sy = tape.slice_cols(sc, 1, 2)?;
    let dx = tape.slice_cols(dc, 0, 1)?;
    let dy = tape.slice_cols(dc, 1, 2)?;
    let sxdy = tape.mul(sx, dy)?;
    let sydx = tape.mul(sy, dx)?;
    let cross_terms = tape.sub(sxdy, sydx)?;
    let cross = tape.sum(cross_terms);
    let sxdx = tape.mul(sx, dx)?;
    let sydy = tape.mul(sy, dy)?;
    let dot_terms = tape.add(sxdx, sydy)?;
    let dot = tape.sum(dot_terms);
    let theta = tape.atan2(cross, dot)?;
    let c = tape.cos(theta);
    let s = tape.sin(theta);
    let ns = tape.scale(s, -1.0)?;
    let r0 = tape.concat(&[c, ns], 1)?;
    let r1 = tape.concat(&[s, c], 1)?;
    let mut r = tape.concat(&[r0, r1], 0)?;
    if use_flip {
        let flip = tape.constant(Tensor::new(2, 2, vec![-1.0, 0.0, 0.0, 1.0])?);
        r = tape.matmul(r, flip)?;
    }
    let rt = tape.transpose(r);
    let rotated_mean = tape.matmul(src_mean, rt)?;
    let t = tape.sub(dst_mean, rotated_mean)?;

    let rv = tape.value(r);
    let tv = tape.value(t);
    let plain = GlobalTransform {
        r: [[rv.get(0, 0), rv.get(0, 1)], [rv.get(1, 0), rv.get(1, 1)]],
        t: [tv.get(0, 0), tv.get(0, 1)],
    };
    Ok((TapeGlobalTransform { r, t }, plain))
}

/// Plain-value rigid solve over x,y pair buffers.
pub fn rigid_solve(src: &[f64], dst: &[f64]) -> Result<GlobalTransform> {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::new(src.len() / 2, 2, src.to_vec())?);
    let d = tape.constant(Tensor::new(dst.len() / 2, 2, dst.to_vec())?);
    Ok(rigid_solve_on_tape(&mut tape, s, d)?.1)
}

/// x' = x R^T + t on the tape (row-major points).
pub fn apply_global_on_tape(tape: &mut Tape, points: Var, g: TapeGlobalTransform) -> Result<Var> {
    let rt = tape.transpose(g.r);
    let rotated = tape.matmul(points, rt)?;
    tape.add(rotated, g.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::nn::Mlp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn chamfer_value(a: &[f64], b: &[f64]) -> f64 {
        chamfer(a, b).unwrap()
    }

    #[test]
    fn chamfer_identical_zero() {
        let a = [0.0, 0.0, 1.0, 2.0, -3.0, 0.5];
        assert_eq!(chamfer_value(&a, &a), 0.0);
    }

    #[test]
    fn chamfer_single_pair() {
        assert!((chamfer_value(&[0.0, 0.0], &[3.0, 4.0]) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn chamfer_asymmetric_sizes() {
        let got = chamfer_value(&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0]);
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chamfer_symmetry_nonneg() {
        let mut r = rng(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..14).map(|_| r.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..10).map(|_| r.gen_range(-1.0..1.0)).collect();
            let ab = chamfer_value(&a, &b);
            let ba = chamfer_value(&b, &a);
            assert!((ab - ba).abs() < 1e-12);
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn chamfer_rejects_empty() {
        assert!(matches!(chamfer(&[], &[0.0, 0.0]), Err(Error::EmptyPointSet(_))));
    }

    #[test]
    fn chamfer_matches_brute_force_oracle() {
        let mut r = rng(5);
        for _ in 0..10 {
            let a: Vec<f64> = (0..16).map(|_| r.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mut want = 0.0;
            let (na, nb) = (a.len() / 2, b.len() / 2);
            for i in 0..na {
                let mut best = f64::INFINITY;
                for j in 0..nb {
                    let d = (a[2 * i] - b[2 * j]).powi(2) + (a[2 * i + 1] - b[2 * j + 1]).powi(2);
                    best = best.min(d);
                }
                want += best / na as f64;
            }
            for j in 0..nb {
                let mut best = f64::INFINITY;
                for i in 0..na {
                    let d = (a[2 * i] - b[2 * j]).powi(2) + (a[2 * i + 1] - b[2 * j + 1]).powi(2);
                    best = best.min(d);
                }
                want += best / nb as f64;
            }
            assert!((chamfer_value(&a, &b) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn keypoints_uniform_is_mean() {
        let mut tape = Tape::new();
        let feats = tape.constant(Tensor::zeros(2, 4));
        let coords = tape.constant(Tensor::new(2, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap());
        let omega = Mlp { layers: vec![crate::nn::Dense::zeros(4, 3)] }.register(&mut tape, false);
        let kp = predict_keypoints(&mut tape, feats, coords, &omega).unwrap();
        let (pm, ks) = kp.detach(&tape);
        for j in 0..3 {
            assert!((ks.coords.get(j, 0) - 1.0).abs() < 1e-12);
            assert!(ks.coords.get(j, 1).abs() < 1e-12);
            let col_sum: f64 = (0..2).map(|i| pm.probs.get(i, j)).sum();
            assert!((col_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn keypoints_one_hot_selects_point() {
        let mut tape = Tape::new();
        // feature row i is a scaled one-hot; a diagonal head makes logits
        // hugely favor point i for keypoint i.
        let feats = tape.constant(Tensor::new(2, 2, vec![50.0, 0.0, 0.0, 50.0]).unwrap());
        let coords = tape.constant(Tensor::new(2, 2, vec![0.25, -0.5, -0.125, 0.4]).unwrap());
        let omega = Mlp {
            layers: vec![crate::nn::Dense {
                w: Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                b: Tensor::zeros(1, 2),
            }],
        }
        .register(&mut tape, false);
        let kp = predict_keypoints(&mut tape, feats, coords, &omega).unwrap();
        let (_, ks) = kp.detach(&tape);
        assert!((ks.coords.get(0, 0) - 0.25).abs() < 1e-9);
        assert!((ks.coords.get(0, 1) + 0.5).abs() < 1e-9);
        assert!((ks.coords.get(1, 0) + 0.125).abs() < 1e-9);
        assert!((ks.coords.get(1, 1) - 0.4).abs() < 1e-9);
    }

    /// Andrew's monotone chain + point-in-polygon, test-only oracle.
    fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        if pts.len() < 3 {
            return pts;
        }
        let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
            (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
        };
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
            while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
        hull
    }

    fn inside_hull(hull: &[(f64, f64)], p: (f64, f64), tol: f64) -> bool {
        let n = hull.len();
        for i in 0..n {
            let a = hull[i];
            let b = hull[(i + 1) % n];
            let cr = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cr < -tol {
                return false;
            }
        }
        true
    }

    #[test]
    fn keypoints_inside_convex_hull() {
        let mut r = rng(9);
        let n = 12;
        let coords_data: Vec<f64> = (0..n * 2).map(|_| r.gen_range(-0.5..0.5)).collect();
        let feats_data: Vec<f64> = (0..n * 8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let omega = Mlp::xavier(&mut r, &[8, 16, 5], 1.0);
        let mut tape = Tape::new();
        let feats = tape.constant(Tensor::new(n, 8, feats_data).unwrap());
        let coords = tape.constant(Tensor::new(n, 2, coords_data.clone()).unwrap());
        let ov = omega.register(&mut tape, false);
        let kp = predict_keypoints(&mut tape, feats, coords, &ov).unwrap();
        let (_, ks) = kp.detach(&tape);
        let pts: Vec<(f64, f64)> =
            (0..n).map(|i| (coords_data[2 * i], coords_data[2 * i + 1])).collect();
        let hull = convex_hull(&pts);
        for j in 0..5 {
            assert!(inside_hull(&hull, (ks.coords.get(j, 0), ks.coords.get(j, 1)), 1e-9));
        }
    }

    #[test]
    fn anchor_loss_zero_when_keypoints_cover_points() {
        let mut tape = Tape::new();
        let pts = tape.constant(Tensor::new(3, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap());
        let kps = tape.constant(Tensor::new(3, 2, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap());
        let l = keypoint_anchor_loss(&mut tape, pts, kps).unwrap();
        assert_eq!(tape.value(l).scalar_value(), 0.0);
    }

    #[test]
    fn anchor_loss_collapsed_centroid_closed_form() {
        let mut tape = Tape::new();
        let pts = tape.constant(Tensor::new(3, 2, vec![-1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let kps = tape.constant(Tensor::new(4, 2, vec![0.0; 8]).unwrap());
        let l = keypoint_anchor_loss(&mut tape, pts, kps).unwrap();
        assert!((tape.value(l).scalar_value() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_loss_decreases_under_gradient_steps() {
        // Frozen features, trainable head; plain gradient descent.
        let mut r = rng(33);
        let n = 10;
        let feats = Tensor::new(n, 6, (0..n * 6).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let coords = Tensor::new(n, 2, (0..n * 2).map(|_| r.gen_range(-0.5..0.5)).collect()).unwrap();
        let mut omega = Mlp::xavier(&mut r, &[6, 12, 4], 1.0);
        let loss_of = |m: &Mlp| {
            let mut tape = Tape::new();
            let f = tape.constant(feats.clone());
            let c = tape.constant(coords.clone());
            let ov = m.register(&mut tape, false);
            let kp = predict_keypoints(&mut tape, f, c, &ov).unwrap();
            let l = keypoint_anchor_loss(&mut tape, c, kp.coords).unwrap();
            tape.value(l).scalar_value()
        };
        let initial = loss_of(&omega);
        for _ in 0..40 {
            let mut tape = Tape::new();
            let f = tape.constant(feats.clone());
            let c = tape.constant(coords.clone());
            let ov = omega.register(&mut tape, true);
            let kp = predict_keypoints(&mut tape, f, c, &ov).unwrap();
            let l = keypoint_anchor_loss(&mut tape, c, kp.coords).unwrap();
            let before: Vec<crate::nn::DenseVars> = ov.layers.clone();
            let grads = tape.backward(l).unwrap();
            for (layer, vars) in omega.layers.iter_mut().zip(before.iter()) {
                let gw = grads.wrt(vars.w).unwrap();
                let gb = grads.wrt(vars.b).unwrap();
                let lr = 0.05;
                let w: Vec<f64> =
                    layer.w.data().iter().zip(gw.data()).map(|(p, g)| p - lr * g).collect();
                let b: Vec<f64> =
                    layer.b.data().iter().zip(gb.data()).map(|(p, g)| p - lr * g).collect();
                layer.w = Tensor::new(layer.w.rows(), layer.w.cols(), w).unwrap();
                layer.b = Tensor::new(layer.b.rows(), layer.b.cols(), b).unwrap();
            }
        }
        let after = loss_of(&omega);
        assert!(after < initial, "{} !< {}", after, initial);
    }

    fn random_spread_points(r: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        (0..m * 2).map(|_| r.gen_range(-0.5..0.5)).collect()
    }

    fn transform_points(pts: &[f64], g: &GlobalTransform) -> Vec<f64> {
        pts.chunks(2)
            .flat_map(|p| {
                let q = g.apply_point(Point::new(p[0], p[1]));
                [q.x, q.y]
            })
            .collect()
    }

    #[test]
    fn rigid_identity() {
        let mut r = rng(1);
        let src = random_spread_points(&mut r, 12);
        let g = rigid_solve(&src, &src).unwrap();
        assert!((g.r[0][0] - 1.0).abs() < 1e-12 && (g.r[1][1] - 1.0).abs() < 1e-12);
        assert!(g.r[0][1].abs() < 1e-12 && g.r[1][0].abs() < 1e-12);
        assert!(g.t[0].abs() < 1e-12 && g.t[1].abs() < 1e-12);
    }

    #[test]
    fn rigid_pure_translation() {
        let mut r = rng(2);
        let src = random_spread_points(&mut r, 10);
        let dst: Vec<f64> =
            src.chunks(2).flat_map(|p| [p[0] + 2.0, p[1] + 3.0]).collect();
        let g = rigid_solve(&src, &dst).unwrap();
        assert!((g.t[0] - 2.0).abs() < 1e-9 && (g.t[1] - 3.0).abs() < 1e-9);
        assert!((g.r[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rigid_recovers_rotation_and_translation() {
        let mut r = rng(3);
        let src = random_spread_points(&mut r, 16);
        let want = GlobalTransform::rotation(37f64.to_radians()).with_translation([1.0, -1.0]);
        let dst = transform_points(&src, &want);
        let g = rigid_solve(&src, &dst).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.r[i][j] - want.r[i][j]).abs() < 1e-9);
            }
            assert!((g.t[i] - want.t[i]).abs() < 1e-9);
        }
        let back = transform_points(&src, &g);
        let resid: f64 = back.iter().zip(dst.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(resid < 1e-18);
    }

    #[test]
    fn rigid_recovers_reflection() {
        let mut r = rng(4);
        let src = random_spread_points(&mut r, 16);
        let want =
            GlobalTransform::rotation(0.4).compose(&GlobalTransform::reflection_x()).with_translation([0.3, 0.7]);
        let dst = transform_points(&src, &want);
        let g = rigid_solve(&src, &dst).unwrap();
        assert!((g.det() + 1.0).abs() < 1e-9, "det {}", g.det());
        let back = transform_points(&src, &g);
        let resid: f64 =
            back.iter().zip(dst.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 16.0;
        assert!(resid < 1e-18, "residual {}", resid);
    }

    #[test]
    fn rigid_beats_identity_residual() {
        let mut r = rng(6);
        for _ in 0..20 {
            let src = random_spread_points(&mut r, 8);
            let dst = random_spread_points(&mut r, 8);
            let g = rigid_solve(&src, &dst).unwrap();
            let back = transform_points(&src, &g);
            let resid: f64 = back.iter().zip(dst.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            let ident: f64 = src.iter().zip(dst.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(resid <= ident + 1e-12);
        }
    }

    #[test]
    fn rigid_equivariance() {
        let mut r = rng(7);
        let src = random_spread_points(&mut r, 12);
        let dst = random_spread_points(&mut r, 12);
        let g = rigid_solve(&src, &dst).unwrap();
        let q = GlobalTransform::rotation(0.77);
        let qsrc = transform_points(&src, &q);
        let qdst = transform_points(&dst, &q);
        let gq = rigid_solve(&qsrc, &qdst).unwrap();
        // conjugation: R' = Q R Q^T
        let qi = invert_global(&q);
        let want = q.compose(&g).compose(&qi);
        for i in 0..2 {
            for j in 0..2 {
                assert!((gq.r[i][j] - want.r[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rigid_rejects_coincident_sources() {
        let src = vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let dst = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        assert!(matches!(rigid_solve(&src, &dst), Err(Error::DegenerateKeypoints)));
    }

    #[test]
    fn rigid_orthogonality_invariant() {
        let mut r = rng(8);
        for _ in 0..50 {
            let src = random_spread_points(&mut r, 9);
            let dst = random_spread_points(&mut r, 9);
            let g = rigid_solve(&src, &dst).unwrap();
            // R^T R = I
            for i in 0..2 {
                for j in 0..2 {
                    let dot = g.r[0][i] * g.r[0][j] + g.r[1][i] * g.r[1][j];
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-9);
                }
            }
            assert!((g.det().abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rigid_solve_differentiable_within_branch() {
        let mut r = rng(10);
        let src = Tensor::new(8, 2, random_spread_points(&mut r, 8)).unwrap();
        let dst_data = random_spread_points(&mut r, 8);
        let rep = grad_check(
            |tape, v| {
                let d = tape.constant(Tensor::new(8, 2, dst_data.clone()).unwrap());
                let (g, _) = rigid_solve_on_tape(tape, v, d)?;
                let aligned = apply_global_on_tape(tape, v, g)?;
                let diff = tape.sub(aligned, d)?;
                let sq = tape.square(diff);
                Ok(tape.sum(sq))
            },
            &src,
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "rel err {}", rep.max_rel_error);
    }

    #[test]
    fn apply_and_invert_round_trip() {
        let mut r = rng(11);
        let g = GlobalTransform::rotation(1.1).with_translation([0.4, -0.2]);
        let sketch = crate::sketch::Sketch::from_strokes(
            vec![(0..10)
                .map(|_| Point::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)))
                .collect()],
            "t",
        );
        let fwd = apply_global(&sketch, &g);
        let back = apply_global(&fwd, &invert_global(&g));
        for (a, b) in sketch.points().zip(back.points()) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_rotation_quarter_turn() {
        let g = GlobalTransform::rotation(std::f64::consts::FRAC_PI_2);
        let p = g.apply_point(Point::new(1.0, 0.0));
        assert!(p.x.abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
    }
}
