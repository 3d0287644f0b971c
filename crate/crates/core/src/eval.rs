//! Segmentation accuracy metrics (point and component level) and the
//! label-granularity masking used when exemplar and target annotations
//! differ in detail.

use crate::error::{Error, Result};
use crate::sketch::LabeledSketch;

/// Fraction of correct components counted at this threshold (inclusive).
pub const COMPONENT_THRESHOLD: f64 = 0.75;

/// Fraction of unmasked points whose predicted label matches the truth.
/// `mask[i] = true` excludes point i.
pub fn p_metric(pred: &[usize], truth: &[usize], mask: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() || mask.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            op: "p_metric",
            detail: format!("{} pred, {} truth, {} mask", pred.len(), truth.len(), mask.len()),
        });
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..truth.len() {
        if mask[i] {
            continue;
        }
        total += 1;
        if pred[i] == truth[i] {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(correct as f64 / total as f64)
}

/// Component accuracy. A component is a maximal run of consecutive
/// same-truth-label unmasked points within one stroke; it counts as correct
/// when at least 75% of its points carry its truth label in the prediction.
pub fn c_metric(
    pred: &[usize],
    truth: &[usize],
    stroke_of_point: &[usize],
    mask: &[bool],
) -> Result<f64> {
    let n = truth.len();
    if pred.len() != n || stroke_of_point.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch {
            op: "c_metric",
            detail: format!(
                "{} pred, {} truth, {} strokes, {} mask",
                pred.len(),
                n,
                stroke_of_point.len(),
                mask.len()
            ),
        });
    }
    let mut components = 0usize;
    let mut correct = 0usize;
    let mut i = 0usize;
    while i < n {
        if mask[i] {
            i += 1;
            continue;
        }
        let stroke = stroke_of_point[i];
        let label = truth[i];
        let mut len = 0usize;
        let mut hits = 0usize;
        while i < n && !mask[i] && stroke_of_point[i] == stroke && truth[i] == label {
            len += 1;
            if pred[i] == label {
                hits += 1;
            }
            i += 1;
        }
        components += 1;
        if hits as f64 >= COMPONENT_THRESHOLD * len as f64 {
            correct += 1;
        }
    }
    if components == 0 {
        return Err(Error::NoComponents);
    }
    Ok(correct as f64 / components as f64)
}

/// Mask target points whose ground-truth label does not occur among the
/// exemplar's point labels. Requires a shared label dictionary.
pub fn granularity_mask(truth: &LabeledSketch, exemplar: &LabeledSketch) -> Vec<bool> {
    let mut present = vec![false; exemplar.label_names.len().max(truth.label_names.len())];
    for &l in &exemplar.labels {
        if l < present.len() {
            present[l] = true;
        }
    }
    truth.labels.iter().map(|&l| l >= present.len() || !present[l]).collect()
}

/// Per-sketch metric pair.
#[derive(Debug, Clone)]
pub struct SketchEval {
    pub index: usize,
    pub p: f64,
    pub c: f64,
}

/// Aggregate segmentation report over a set of sketches.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub p_metric: f64,
    pub c_metric: f64,
    pub per_sketch: Vec<SketchEval>,
    pub masked_points: usize,
}

/// Score predictions against ground truth with granularity masking relative
/// to the exemplar.
pub fn evaluate(
    preds: &[LabeledSketch],
    truths: &[LabeledSketch],
    exemplar: &LabeledSketch,
) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            detail: format!("{} predictions for {} truths", preds.len(), truths.len()),
        });
    }
    let mut per_sketch = Vec::with_capacity(preds.len());
    let mut masked_points = 0usize;
    for (i, (pred, truth)) in preds.iter().zip(truths.iter()).enumerate() {
        let mask = granularity_mask(truth, exemplar);
        masked_points += mask.iter().filter(|&&m| m).count();
        let p = p_metric(&pred.labels, &truth.labels, &mask)?;
        let c = c_metric(&pred.labels, &truth.labels, &truth.sketch.stroke_of_point(), &mask)?;
        per_sketch.push(SketchEval { index: i, p, c });
    }
    if per_sketch.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = per_sketch.len() as f64;
    Ok(EvalReport {
        p_metric: per_sketch.iter().map(|s| s.p).sum::<f64>() / n,
        c_metric: per_sketch.iter().map(|s| s.c).sum::<f64>() / n,
        per_sketch,
        masked_points,
    })
}

/// Render category rows (mean and standard deviation over exemplar runs) as
/// a fixed-width text table. The component convention is stated in the
/// header since annotated datasets do not define it.
pub fn render_report_table(rows: &[(String, String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    out.push_str("# segmentation report v1\n");
    out.push_str(
        "# component = maximal same-label run within a stroke; correct at >= 75% of points\n",
    );
    out.push_str(&format!(
        "{:<16} {:<12} {:>8} {:>8} {:>8} {:>8}\n",
        "category", "exemplar", "P-mu", "P-sigma", "C-mu", "C-sigma"
    ));
    for (category, exemplar, metrics) in rows {
        let n = metrics.len().max(1) as f64;
        let pm = metrics.iter().map(|m| m.0).sum::<f64>() / n;
        let cm = metrics.iter().map(|m| m.1).sum::<f64>() / n;
        let ps = (metrics.iter().map(|m| (m.0 - pm).powi(2)).sum::<f64>() / n).sqrt();
        let cs = (metrics.iter().map(|m| (m.1 - cm).powi(2)).sum::<f64>() / n).sqrt();
        out.push_str(&format!(
            "{:<16} {:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            category, exemplar, pm, ps, cm, cs
        ));
    }
    out
}
