//! Per-stroke constrained transforms of the exemplar toward the aligned
//! target: prediction head, decoding, application, and the soft constraint
//! penalties plus the stroke-level loss.

use crate::align::chamfer_on_tape;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::MlpVars;
use crate::sketch::Sketch;

/// One stroke's transform: x' = R diag(sigma) x + t. R is only softly
/// orthogonal; all constraints are loss-enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeTransform {
    pub r: [[f64; 2]; 2],
    pub t: [f64; 2],
    pub sigma: [f64; 2],
}

impl StrokeTransform {
    pub fn identity() -> Self {
        StrokeTransform { r: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0], sigma: [1.0, 1.0] }
    }

    /// Rotation angle encoded by the matrix.
    pub fn angle(&self) -> f64 {
        self.r[1][0].atan2(self.r[0][0])
    }
}

/// Exemplar warped by per-stroke transforms; stroke structure is unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformedExemplar {
    pub sketch: Sketch,
    pub transforms: Vec<StrokeTransform>,
}

/// Decoded transform vars on a tape: matrix entries [S,4] in r11,r12,r21,r22
/// order, translations [S,2], scales [S,2].
#[derive(Debug, Clone, Copy)]
pub struct TapeStrokeTransforms {
    pub rot: Var,
    pub trans: Var,
    pub sigma: Var,
}

impl TapeStrokeTransforms {
    pub fn detach(&self, tape: &Tape) -> Vec<StrokeTransform> {
        let r = tape.value(self.rot);
        let t = tape.value(self.trans);
        let s = tape.value(self.sigma);
        (0..r.rows())
            .map(|j| StrokeTransform {
                r: [[r.get(j, 0), r.get(j, 1)], [r.get(j, 2), r.get(j, 3)]],
                t: [t.get(j, 0), t.get(j, 1)],
                sigma: [s.get(j, 0), s.get(j, 1)],
            })
            .collect()
    }
}

/// Predict per-stroke transforms from the aligned target's sketch embedding,
/// the exemplar's sketch embedding, and each exemplar stroke's embedding.
/// The 8 raw outputs decode so that zero output is the identity transform:
/// matrix entries are offset by (1,0,0,1) and scales by 1.
pub fn predict_stroke_transforms(
    tape: &mut Tape,
    f_target_sketch: Var,
    f_exemplar_sketch: Var,
    f_exemplar_strokes: Var,
    phi: &MlpVars,
) -> Result<TapeStrokeTransforms> {
    let n_strokes = tape.value(f_exemplar_strokes).rows();
    let zeros = vec![0usize; n_strokes];
    let target_rep = tape.gather_rows(f_target_sketch, &zeros)?;
    let exemplar_rep = tape.gather_rows(f_exemplar_sketch, &zeros)?;
    let input = tape.concat(&[target_rep, exemplar_rep, f_exemplar_strokes], 1)?;
    let raw = phi.forward(tape, input)?;
    if tape.value(raw).cols() != 8 {
        return Err(Error::ShapeMismatch {
            op: "predict_stroke_transforms",
            detail: format!("head must emit 8 values, got {}", tape.value(raw).cols()),
        });
    }
    let rot_raw = tape.slice_cols(raw, 0, 4)?;
    let rot_offset = tape.constant(Tensor::row(&[1.0, 0.0, 0.0, 1.0]));
    let rot = tape.add(rot_raw, rot_offset)?;
    let trans = tape.slice_cols(raw, 4, 6)?;
    let sigma_raw = tape.slice_cols(raw, 6, 8)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let sigma = tape.add(sigma_raw, one)?;
    Ok(TapeStrokeTransforms { rot, trans, sigma })
}

/// Warp exemplar points by their stroke's transform: scale, then rotate,
/// then translate.
pub fn apply_stroke_transforms_on_tape(
    tape: &mut Tape,
    exemplar_coords: Var,
    stroke_of_point: &[usize],
    transforms: TapeStrokeTransforms,
) -> Result<Var> {
    let n = tape.value(exemplar_coords).rows();
    let n_strokes = tape.value(transforms.rot).rows();
    if stroke_of_point.len() != n {
        return Err(Error::ShapeMismatch {
            op: "apply_stroke_transforms",
            detail: format!("{} stroke ids for {} points", stroke_of_point.len(), n),
        });
    }
    if let Some(&bad) = stroke_of_point.iter().find(|&&j| j >= n_strokes) {
        return Err(Error::TransformCount { got: n_strokes, want: bad + 1 });
    }
    let rot = tape.gather_rows(transforms.rot, stroke_of_point)?;
    let trans = tape.gather_rows(transforms.trans, stroke_of_point)?;
    let sigma = tape.gather_rows(transforms.sigma, stroke_of_point)?;
    let scaled = tape.mul(exemplar_coords, sigma)?;
    let sx = tape.slice_cols(scaled, 0, 1)?;
    let sy = tape.slice_cols(scaled, 1, 2)?;
    let r11 = tape.slice_cols(rot, 0, 1)?;
    let r12 = tape.slice_cols(rot, 1, 2)?;
    let r21 = tape.slice_cols(rot, 2, 3)?;
    let r22 = tape.slice_cols(rot, 3, 4)?;
    let xa = tape.mul(r11, sx)?;
    let xb = tape.mul(r12, sy)?;
    let x_rot = tape.add(xa, xb)?;
    let ya = tape.mul(r21, sx)?;
    let yb = tape.mul(r22, sy)?;
    let y_rot = tape.add(ya, yb)?;
    let rotated = tape.concat(&[x_rot, y_rot], 1)?;
    tape.add(rotated, trans)
}

/// Plain-value stroke warp with explicit transforms.
pub fn apply_stroke_transforms(
    exemplar: &Sketch,
    transforms: &[StrokeTransform],
) -> Result<DeformedExemplar> {
    if transforms.len() != exemplar.strokes.len() {
        return Err(Error::TransformCount { got: transforms.len(), want: exemplar.strokes.len() });
    }
    let mut out = exemplar.clone();
    for (s, tr) in out.strokes.iter_mut().zip(transforms.iter()) {
        for p in &mut s.points {
            let sx = tr.sigma[0] * p.x;
            let sy = tr.sigma[1] * p.y;
            p.x = tr.r[0][0] * sx + tr.r[0][1] * sy + tr.t[0];
            p.y = tr.r[1][0] * sx + tr.r[1][1] * sy + tr.t[1];
        }
    }
    Ok(DeformedExemplar { sketch: out, transforms: transforms.to_vec() })
}

/// Admissible range of the cosine entries for |angle| <= 30 degrees.
pub const ROT_COS_RANGE: (f64, f64) = (0.866025403784438646763, 1.0);
/// Admissible range of the sine entries.
pub const ROT_SIN_RANGE: (f64, f64) = (-0.5, 0.5);
/// Admissible per-axis scale range.
pub const SIGMA_RANGE: (f64, f64) = (0.5, 2.0);

/// Which constraint penalties participate in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstraintDrops {
    pub orth: bool,
    pub rot: bool,
    pub sigma: bool,
    pub trans: bool,
}

impl ConstraintDrops {
    pub fn none() -> Self {
        ConstraintDrops::default()
    }

    pub fn all() -> Self {
        ConstraintDrops { orth: true, rot: true, sigma: true, trans: true }
    }
}

/// Per-stroke constraint vars, each [S,1].
#[derive(Debug, Clone, Copy)]
pub struct TapeConstraintLosses {
    pub orth: Var,
    pub rot: Var,
    pub sigma: Var,
    pub trans: Var,
}

fn hinge(tape: &mut Tape, x: Var, lo: f64, hi: f64) -> Result<Var> {
    let lo_c = tape.constant(Tensor::scalar(lo));
    let hi_c = tape.constant(Tensor::scalar(hi));
    let below = tape.sub(lo_c, x)?;
    let below = tape.clamp_min_zero(below);
    let above = tape.sub(x, hi_c)?;
    let above = tape.clamp_min_zero(above);
    tape.add(below, above)
}

/// Constraint penalties for a batch of decoded transforms:
/// orthogonality ||I - R R^T||^2, entry-range hinges keeping |angle| within
/// 30 degrees, scale hinges keeping sigma in [0.5, 2], and the unsquared
/// translation norm.
pub fn constraint_losses_on_tape(
    tape: &mut Tape,
    tr: TapeStrokeTransforms,
) -> Result<TapeConstraintLosses> {
    let r11 = tape.slice_cols(tr.rot, 0, 1)?;
    let r12 = tape.slice_cols(tr.rot, 1, 2)?;
    let r21 = tape.slice_cols(tr.rot, 2, 3)?;
    let r22 = tape.slice_cols(tr.rot, 3, 4)?;
    let one = tape.constant(Tensor::scalar(1.0));

    // I - R R^T, entrywise from the four entries.
    let r11sq = tape.square(r11);
    let r12sq = tape.square(r12);
    let row1 = tape.add(r11sq, r12sq)?;
    let e11 = tape.sub(one, row1)?;
    let r21sq = tape.square(r21);
    let r22sq = tape.square(r22);
    let row2 = tape.add(r21sq, r22sq)?;
    let e22 = tape.sub(one, row2)?;
    let a = tape.mul(r11, r21)?;
    let b = tape.mul(r12, r22)?;
    let e12 = tape.add(a, b)?;
    let e11sq = tape.square(e11);
    let e22sq = tape.square(e22);
    let e12sq = tape.square(e12);
    let e12sq2 = tape.scale(e12sq, 2.0)?;
    let orth_part = tape.add(e11sq, e22sq)?;
    let orth = tape.add(orth_part, e12sq2)?;

    let h11 = hinge(tape, r11, ROT_COS_RANGE.0, ROT_COS_RANGE.1)?;
    let h22 = hinge(tape, r22, ROT_COS_RANGE.0, ROT_COS_RANGE.1)?;
    let h12 = hinge(tape, r12, ROT_SIN_RANGE.0, ROT_SIN_RANGE.1)?;
    let h21 = hinge(tape, r21, ROT_SIN_RANGE.0, ROT_SIN_RANGE.1)?;
    let rot_a = tape.add(h11, h22)?;
    let rot_b = tape.add(h12, h21)?;
    let rot = tape.add(rot_a, rot_b)?;

    let sx = tape.slice_cols(tr.sigma, 0, 1)?;
    let sy = tape.slice_cols(tr.sigma, 1, 2)?;
    let hsx = hinge(tape, sx, SIGMA_RANGE.0, SIGMA_RANGE.1)?;
    let hsy = hinge(tape, sy, SIGMA_RANGE.0, SIGMA_RANGE.1)?;
    let sigma = tape.add(hsx, hsy)?;

    let tx = tape.slice_cols(tr.trans, 0, 1)?;
    let ty = tape.slice_cols(tr.trans, 1, 2)?;
    let txsq = tape.square(tx);
    let tysq = tape.square(ty);
    let norm_sq = tape.add(txsq, tysq)?;
    let trans = tape.sqrt(norm_sq);

    Ok(TapeConstraintLosses { orth, rot, sigma, trans })
}

/// Plain-value constraint penalties for one transform:
/// (orth, rot, sigma, trans).
pub fn constraint_losses(tr: &StrokeTransform) -> (f64, f64, f64, f64) {
    let hinge = |x: f64, lo: f64, hi: f64| (lo - x).max(0.0) + (x - hi).max(0.0);
    let [[r11, r12], [r21, r22]] = tr.r;
    let e11 = 1.0 - (r11 * r11 + r12 * r12);
    let e22 = 1.0 - (r21 * r21 + r22 * r22);
    let e12 = -(r11 * r21 + r12 * r22);
    let orth = e11 * e11 + 2.0 * e12 * e12 + e22 * e22;
    let rot = hinge(r11, ROT_COS_RANGE.0, ROT_COS_RANGE.1)
        + hinge(r22, ROT_COS_RANGE.0, ROT_COS_RANGE.1)
        + hinge(r12, ROT_SIN_RANGE.0, ROT_SIN_RANGE.1)
        + hinge(r21, ROT_SIN_RANGE.0, ROT_SIN_RANGE.1);
    let sigma = hinge(tr.sigma[0], SIGMA_RANGE.0, SIGMA_RANGE.1)
        + hinge(tr.sigma[1], SIGMA_RANGE.0, SIGMA_RANGE.1);
    let trans = (tr.t[0] * tr.t[0] + tr.t[1] * tr.t[1]).sqrt();
    (orth, rot, sigma, trans)
}

/// Full stroke-level training loss: beta-weighted Chamfer between the
/// deformed exemplar and the aligned target, gamma-weighted keypoint MSE,
/// and gamma-weighted mean of the per-stroke constraint penalties.
#[allow(clippy::too_many_arguments)]
pub fn stroke_level_loss(
    tape: &mut Tape,
    deformed: Var,
    aligned_target: Var,
    kp_deformed: Var,
    kp_target: Var,
    transforms: TapeStrokeTransforms,
    beta: f64,
    gamma: f64,
    drops: ConstraintDrops,
) -> Result<Var> {
    let (mk, ck) = tape.value(kp_deformed).shape();
    let (mt, ct) = tape.value(kp_target).shape();
    if (mk, ck) != (mt, ct) {
        return Err(Error::ShapeMismatch {
            op: "stroke_level_loss",
            detail: format!("keypoints {}x{} vs {}x{}", mk, ck, mt, ct),
        });
    }
    let cd = chamfer_on_tape(tape, deformed, aligned_target)?;
    let cd = tape.scale(cd, beta)?;

    let kp_diff = tape.sub(kp_deformed, kp_target)?;
    let kp_sq = tape.square(kp_diff);
    let kp_sum = tape.sum(kp_sq);
    let mse = tape.scale(kp_sum, gamma / mk as f64)?;

    let con = constraint_losses_on_tape(tape, transforms)?;
    let mut per_stroke: Option<Var> = None;
    for (v, dropped) in [
        (con.orth, drops.orth),
        (con.rot, drops.rot),
        (con.sigma, drops.sigma),
        (con.trans, drops.trans),
    ] {
        if dropped {
            continue;
        }
        per_stroke = Some(match per_stroke {
            None => v,
            Some(acc) => tape.add(acc, v)?,
        });
    }
    let mut total = tape.add(cd, mse)?;
    if let Some(ps) = per_stroke {
        let mean = tape.mean(ps);
        let weighted = tape.scale(mean, gamma)?;
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}
