//! Model parameters for the full pipeline and the shared deformation
//! forward pass: encode, predict keypoints, align globally, deform the
//! exemplar stroke-wise.

use crate::align::{
    apply_global_on_tape, chamfer, predict_keypoints, rigid_solve_on_tape, GlobalTransform,
    TapeKeypoints, KEYPOINT_COUNT,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::deform::{
    apply_stroke_transforms_on_tape, predict_stroke_transforms, ConstraintDrops,
    TapeStrokeTransforms,
};
use crate::error::{Error, Result};
use crate::graph::{
    encode_points, static_edges, EncodeMode, EncoderParams, EncoderVars, TapeEmbeddings,
    FEATURE_DIM,
};
use crate::nn::{Mlp, MlpVars};
use crate::sketch::{Point, Sketch};
use rand::Rng;

/// Pathway switches for ablation runs. All off is the full pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationToggles {
    /// Skip global alignment; the target is used as-is.
    pub no_global_align: bool,
    /// Solve the global transform by a dense Chamfer grid instead of
    /// keypoints (no gradient through the alignment).
    pub chamfer_global_align: bool,
    /// Align the exemplar toward the target instead of the reverse.
    pub reverse_global_align: bool,
    /// Zero the stroke embedding fed to the label head.
    pub no_stroke_feature: bool,
    /// Constraint penalties removed from the stroke loss.
    pub drop_constraints: ConstraintDrops,
}

/// Angle resolution of the Chamfer-grid alignment ablation.
pub const CHAMFER_GRID_ANGLES: usize = 720;

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub omega: Mlp,
    pub phi: Mlp,
    pub tau: Mlp,
    pub n_labels: usize,
}

/// Registered tape handles for every parameter tensor.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub omega: MlpVars,
    pub phi: MlpVars,
    pub tau: MlpVars,
}

impl ModelParams {
    /// Fresh parameters for a category with `n_labels` parts. The stroke
    /// transform head's final layer starts at zero so training begins from
    /// identity deformations.
    pub fn init<R: Rng>(rng: &mut R, n_labels: usize) -> Self {
        let encoder = EncoderParams::init(rng, 1.0);
        let omega = Mlp::xavier(rng, &[FEATURE_DIM, 128, 128, KEYPOINT_COUNT], 1.0);
        let mut phi = Mlp::xavier(rng, &[3 * FEATURE_DIM, 256, 256, 8], 1.0);
        phi.zero_final_layer();
        let tau = Mlp::xavier(rng, &[2 + 2 * FEATURE_DIM, 256, 256, 256, n_labels], 1.0);
        ModelParams { encoder, omega, phi, tau, n_labels }
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            encoder: self.encoder.register(tape, trainable),
            omega: self.omega.register(tape, trainable),
            phi: self.phi.register(tape, trainable),
            tau: self.tau.register(tape, trainable),
        }
    }

    /// Stable (name, tensor) pairs covering every parameter.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.layer{}.w", i), &l.w));
            out.push((format!("encoder.layer{}.b", i), &l.b));
        }
        out.push(("encoder.proj.w".to_string(), &self.encoder.proj.w));
        out.push(("encoder.proj.b".to_string(), &self.encoder.proj.b));
        for (name, mlp) in [("omega", &self.omega), ("phi", &self.phi), ("tau", &self.tau)] {
            for (i, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{}.layer{}.w", name, i), &l.w));
                out.push((format!("{}.layer{}.b", name, i), &l.b));
            }
        }
        out
    }

    /// Mutable access in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in self.encoder.layers.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.encoder.proj.w);
        out.push(&mut self.encoder.proj.b);
        for mlp in [&mut self.omega, &mut self.phi, &mut self.tau] {
            for l in mlp.layers.iter_mut() {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}

impl ModelVars {
    /// Vars in the same order as [`ModelParams::named_tensors`].
    pub fn all_vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.encoder.layers {
            out.push(l.w);
            out.push(l.b);
        }
        out.push(self.encoder.proj.w);
        out.push(self.encoder.proj.b);
        for mlp in [&self.omega, &self.phi, &self.tau] {
            for l in &mlp.layers {
                out.push(l.w);
                out.push(l.b);
            }
        }
        out
    }
}

/// Dense-grid Chamfer alignment: try `n_angles` rotations, each with and
/// without an x-reflection of the source, translating by mean matching;
/// return the transform with the smallest Chamfer distance to `dst`.
pub fn chamfer_grid_align(src: &[f64], dst: &[f64], n_angles: usize) -> Result<GlobalTransform> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptyPointSet("chamfer_grid_align"));
    }
    let n = src.len() / 2;
    let m = dst.len() / 2;
    let mean = |pts: &[f64], count: usize| -> (f64, f64) {
        let mut mx = 0.0;
        let mut my = 0.0;
        for p in pts.chunks(2) {
            mx += p[0];
            my += p[1];
        }
        (mx / count as f64, my / count as f64)
    };
    let (sx, sy) = mean(src, n);
    let (dx, dy) = mean(dst, m);
    let mut best = (f64::INFINITY, GlobalTransform::identity());
    let mut moved = vec![0.0; src.len()];
    for flip in [false, true] {
        for a in 0..n_angles {
            let theta = (a as f64) * std::f64::consts::TAU / (n_angles as f64);
            let (s, c) = theta.sin_cos();
            let fs = if flip { -1.0 } else { 1.0 };
            // R = rot(theta) . diag(fs, 1)
            let r = [[c * fs, -s], [s * fs, c]];
            let t = [
                dx - (r[0][0] * sx + r[0][1] * sy),
                dy - (r[1][0] * sx + r[1][1] * sy),
            ];
            for (o, p) in moved.chunks_mut(2).zip(src.chunks(2)) {
                o[0] = r[0][0] * p[0] + r[0][1] * p[1] + t[0];
                o[1] = r[1][0] * p[0] + r[1][1] * p[1] + t[1];
            }
            let cd = chamfer(&moved, dst)?;
            if cd < best.0 {
                best = (cd, GlobalTransform { r, t });
            }
        }
    }
    Ok(best.1)
}

/// Everything the deformation stage computes for one (target, exemplar)
/// pair, with vars still on the tape.
pub struct DeformationForward {
    /// Raw target coordinates.
    pub x: Var,
    /// Globally aligned target coordinates.
    pub x_hat: Var,
    /// The global transform applied to the target (identity under
    /// no_global_align and reverse_global_align).
    pub global: GlobalTransform,
    pub emb_x: TapeEmbeddings,
    pub emb_xhat: TapeEmbeddings,
    /// Embeddings of the stroke-morph source (the exemplar, or the globally
    /// pre-aligned exemplar under reverse_global_align).
    pub emb_e: TapeEmbeddings,
    pub emb_ehat: TapeEmbeddings,
    /// Keypoints of the raw target (anchor loss input).
    pub kp_x: TapeKeypoints,
    pub kp_xhat: TapeKeypoints,
    pub kp_ehat: TapeKeypoints,
    pub transforms: TapeStrokeTransforms,
    /// Warped exemplar coordinates.
    pub deformed: Var,
}

/// Encode + keypoints + global alignment + stroke deformation for one pair.
pub fn deformation_forward<R: Rng>(
    tape: &mut Tape,
    target: &Sketch,
    exemplar: &Sketch,
    vars: &ModelVars,
    toggles: &AblationToggles,
    mode: EncodeMode,
    rng: &mut R,
) -> Result<DeformationForward> {
    deformation_forward_aligned(tape, target, exemplar, vars, toggles, mode, None, rng)
}

/// [`deformation_forward`] with the global alignment pinned to a given
/// transform instead of solved from keypoints.
#[allow(clippy::too_many_arguments)]
pub fn deformation_forward_aligned<R: Rng>(
    tape: &mut Tape,
    target: &Sketch,
    exemplar: &Sketch,
    vars: &ModelVars,
    toggles: &AblationToggles,
    mode: EncodeMode,
    align_override: Option<GlobalTransform>,
    rng: &mut R,
) -> Result<DeformationForward> {
    let nx = target.point_count();
    let ne = exemplar.point_count();
    let x = tape.constant(Tensor::new(nx, 2, target.coords())?);
    let e = tape.constant(Tensor::new(ne, 2, exemplar.coords())?);
    let x_statics = static_edges(target);
    let e_statics = static_edges(exemplar);
    let x_map = target.stroke_of_point();
    let e_map = exemplar.stroke_of_point();

    let (emb_x, _) = encode_points(
        tape, x, &x_map, target.strokes.len(), &x_statics, &vars.encoder, mode, None, rng,
    )?;
    let (emb_e_raw, _) = encode_points(
        tape, e, &e_map, exemplar.strokes.len(), &e_statics, &vars.encoder, mode, None, rng,
    )?;
    let kp_x = predict_keypoints(tape, emb_x.per_point, x, &vars.omega)?;
    let kp_e = predict_keypoints(tape, emb_e_raw.per_point, e, &vars.omega)?;

    // Global stage.
    let mut global = GlobalTransform::identity();
    let mut x_hat = x;
    let mut emb_xhat = emb_x;
    let mut e_base = e;
    let mut emb_e = emb_e_raw;
    if let Some(g) = align_override {
        let r = tape.constant(Tensor::new(2, 2, vec![g.r[0][0], g.r[0][1], g.r[1][0], g.r[1][1]])?);
        let t = tape.constant(Tensor::new(1, 2, g.t.to_vec())?);
        x_hat = apply_global_on_tape(tape, x, crate::align::TapeGlobalTransform { r, t })?;
        global = g;
        let (emb, _) = encode_points(
            tape, x_hat, &x_map, target.strokes.len(), &x_statics, &vars.encoder, mode, None, rng,
        )?;
        emb_xhat = emb;
    } else if toggles.no_global_align {
        // nothing to do
    } else if toggles.chamfer_global_align {
        let g = chamfer_grid_align(
            tape.value(x).data(),
            tape.value(e).data(),
            CHAMFER_GRID_ANGLES,
        )?;
        let r = tape.constant(Tensor::new(2, 2, vec![g.r[0][0], g.r[0][1], g.r[1][0], g.r[1][1]])?);
        let t = tape.constant(Tensor::new(1, 2, g.t.to_vec())?);
        x_hat = apply_global_on_tape(tape, x, crate::align::TapeGlobalTransform { r, t })?;
        global = g;
        let (emb, _) = encode_points(
            tape, x_hat, &x_map, target.strokes.len(), &x_statics, &vars.encoder, mode, None, rng,
        )?;
        emb_xhat = emb;
    } else if toggles.reverse_global_align {
        // Exemplar moves toward the target; the target stays put.
        let (g, _) = rigid_solve_on_tape(tape, kp_e.coords, kp_x.coords)?;
        e_base = apply_global_on_tape(tape, e, g)?;
        let (emb, _) = encode_points(
            tape, e_base, &e_map, exemplar.strokes.len(), &e_statics, &vars.encoder, mode, None,
            rng,
        )?;
        emb_e = emb;
    } else {
        let (g, plain) = rigid_solve_on_tape(tape, kp_x.coords, kp_e.coords)?;
        x_hat = apply_global_on_tape(tape, x, g)?;
        global = plain;
        let (emb, _) = encode_points(
            tape, x_hat, &x_map, target.strokes.len(), &x_statics, &vars.encoder, mode, None, rng,
        )?;
        emb_xhat = emb;
    }

    // Stroke stage: morph the exemplar toward the aligned target.
    let transforms =
        predict_stroke_transforms(tape, emb_xhat.sketch, emb_e.sketch, emb_e.per_stroke, &vars.phi)?;
    let deformed = apply_stroke_transforms_on_tape(tape, e_base, &e_map, transforms)?;
    let (emb_ehat, _) = encode_points(
        tape, deformed, &e_map, exemplar.strokes.len(), &e_statics, &vars.encoder, mode, None, rng,
    )?;
    let kp_xhat = if toggles.no_global_align || toggles.reverse_global_align {
        kp_x
    } else {
        predict_keypoints(tape, emb_xhat.per_point, x_hat, &vars.omega)?
    };
    let kp_ehat = predict_keypoints(tape, emb_ehat.per_point, deformed, &vars.omega)?;

    Ok(DeformationForward {
        x,
        x_hat,
        global,
        emb_x,
        emb_xhat,
        emb_e,
        emb_ehat,
        kp_x,
        kp_xhat,
        kp_ehat,
        transforms,
        deformed,
    })
}

/// Mean keypoint drift when a sketch is reflected and the predicted
/// keypoints are reflected back; small values mean the keypoint head is
/// robust to reflection.
pub fn keypoint_reflection_drift<R: Rng>(
    sketch: &Sketch,
    params: &ModelParams,
    rng: &mut R,
) -> Result<f64> {
    let kps_of = |s: &Sketch, tape: &mut Tape, rng: &mut R| -> Result<Tensor> {
        let vars = params.register(tape, false);
        let coords = tape.constant(Tensor::new(s.point_count(), 2, s.coords())?);
        let statics = static_edges(s);
        let (emb, _) = encode_points(
            tape,
            coords,
            &s.stroke_of_point(),
            s.strokes.len(),
            &statics,
            &vars.encoder,
            EncodeMode::Eval,
            None,
            rng,
        )?;
        let kp = predict_keypoints(tape, emb.per_point, coords, &vars.omega)?;
        Ok(tape.value(kp.coords).clone())
    };
    let mut tape = Tape::new();
    let base = kps_of(sketch, &mut tape, rng)?;
    let reflected = crate::sketch::reflect_x(sketch);
    let mut tape2 = Tape::new();
    let kr = kps_of(&reflected, &mut tape2, rng)?;
    let m = base.rows();
    let mut total = 0.0;
    for j in 0..m {
        let p = Point::new(-kr.get(j, 0), kr.get(j, 1));
        let dx = base.get(j, 0) - p.x;
        let dy = base.get(j, 1) - p.y;
        total += (dx * dx + dy * dy).sqrt();
    }
    Ok(total / m as f64)
}
