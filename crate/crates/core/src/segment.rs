//! Point-label prediction head, its cross-entropy loss, the full one-shot
//! segmentation pipeline, and stroke-dominant label refinement.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::EncodeMode;
use crate::align::GlobalTransform;
use crate::model::{deformation_forward_aligned, AblationToggles, ModelParams};
use crate::nn::MlpVars;
use crate::sketch::{LabeledSketch, Sketch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-point label probabilities, N x L; rows sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub probs: Tensor,
}

/// Gather each point's stroke embedding (zeroed under the
/// no_stroke_feature toggle).
pub fn stroke_features_per_point(
    tape: &mut Tape,
    per_stroke: Var,
    stroke_of_point: &[usize],
    toggles: &AblationToggles,
) -> Result<Var> {
    let feats = tape.gather_rows(per_stroke, stroke_of_point)?;
    if toggles.no_stroke_feature {
        tape.scale(feats, 0.0)
    } else {
        Ok(feats)
    }
}

/// Label head: softmax over labels of an MLP applied to each point's
/// (coordinates, stroke embedding, sketch embedding) concatenation.
pub fn predict_labels(
    tape: &mut Tape,
    points: Var,
    f_strokes_per_point: Var,
    f_sketch: Var,
    tau: &MlpVars,
) -> Result<Var> {
    let n = tape.value(points).rows();
    let sketch_rep = tape.gather_rows(f_sketch, &vec![0usize; n])?;
    let input = tape.concat(&[points, f_strokes_per_point, sketch_rep], 1)?;
    let logits = tau.forward(tape, input)?;
    Ok(tape.softmax_rows(logits))
}

/// Sum over points of -log p(true label), probabilities floored at 1e-12.
pub fn segmentation_loss(tape: &mut Tape, dist: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy_rows(dist, labels)
}

/// Transfer the exemplar's labels to a target sketch: estimate the
/// hierarchical deformation, classify the aligned target's points (with the
/// deformed exemplar's sketch embedding), and carry the labels back onto the
/// original target coordinates.
pub fn segment(
    target: &Sketch,
    exemplar: &LabeledSketch,
    params: &ModelParams,
) -> Result<LabeledSketch> {
    segment_with(target, exemplar, params, &AblationToggles::default())
}

/// [`segment`] with ablation toggles applied to the inference pathway.
pub fn segment_with(
    target: &Sketch,
    exemplar: &LabeledSketch,
    params: &ModelParams,
    toggles: &AblationToggles,
) -> Result<LabeledSketch> {
    segment_impl(target, exemplar, params, toggles, None)
}

pub(crate) fn segment_impl(
    target: &Sketch,
    exemplar: &LabeledSketch,
    params: &ModelParams,
    toggles: &AblationToggles,
    align_override: Option<GlobalTransform>,
) -> Result<LabeledSketch> {
    if exemplar.label_names.is_empty() {
        return Err(Error::UnlabeledExemplar);
    }
    if params.n_labels != exemplar.label_names.len() {
        return Err(Error::InvalidArgument {
            op: "segment",
            detail: format!(
                "model has {} labels, exemplar {}",
                params.n_labels,
                exemplar.label_names.len()
            ),
        });
    }
    // Inference is deterministic: eval mode never consumes randomness.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let fwd = deformation_forward_aligned(
        &mut tape,
        target,
        &exemplar.sketch,
        &vars,
        toggles,
        EncodeMode::Eval,
        align_override,
        &mut rng,
    )?;
    let stroke_feats = stroke_features_per_point(
        &mut tape,
        fwd.emb_xhat.per_stroke,
        &target.stroke_of_point(),
        toggles,
    )?;
    let dist = predict_labels(
        &mut tape,
        fwd.x_hat,
        stroke_feats,
        fwd.emb_ehat.sketch,
        &vars.tau,
    )?;
    let probs = tape.value(dist);
    let (n, l) = probs.shape();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = 0usize;
        let mut best_p = f64::NEG_INFINITY;
        for c in 0..l {
            let p = probs.get(i, c);
            if p > best_p {
                best_p = p;
                best = c;
            }
        }
        labels.push(best);
    }
    LabeledSketch::new(target.clone(), labels, exemplar.label_names.clone())
}

/// Replace every point's label with its stroke's most frequent label;
/// ties go to the smallest label id.
pub fn refine_by_stroke(result: &LabeledSketch) -> LabeledSketch {
    let n_labels = result.label_names.len().max(1);
    let mut labels = result.labels.clone();
    let mut offset = 0usize;
    for stroke in &result.sketch.strokes {
        let len = stroke.points.len();
        let mut counts = vec![0usize; n_labels];
        for &l in &labels[offset..offset + len] {
            counts[l] += 1;
        }
        let mut best = 0usize;
        for (l, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = l;
            }
        }
        for l in &mut labels[offset..offset + len] {
            *l = best;
        }
        offset += len;
    }
    LabeledSketch {
        sketch: result.sketch.clone(),
        labels,
        label_names: result.label_names.clone(),
    }
}
