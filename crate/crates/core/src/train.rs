//! Joint optimization of the encoder and the three heads over one category:
//! per-batch Adam on the full loss, rotation augmentation, a per-epoch probe,
//! and best-checkpoint tracking. Also exemplar selection for few-shot use.

use crate::align::keypoint_anchor_loss;
use crate::autodiff::{Tape, Tensor};
use crate::deform::stroke_level_loss;
use crate::error::{Error, Result};
use crate::eval::p_metric;
use crate::graph::EncodeMode;
use crate::model::{deformation_forward, AblationToggles, ModelParams, ModelVars};
use crate::segment::{predict_labels, segment_with, segmentation_loss, stroke_features_per_point};
use crate::sketch::{augment_rotate, LabeledSketch, Sketch};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod checkpoint;

/// Training hyperparameters and ablation toggles.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rotation augmentation of targets and exemplar.
    pub augment: bool,
    /// Targets probed with the current model each epoch.
    pub probe_size: usize,
    pub toggles: AblationToggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 0.2,
            gamma: 50.0,
            delta: 0.02,
            learning_rate: 5e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 24,
            epochs: 300,
            seed: 7,
            augment: true,
            probe_size: 4,
            toggles: AblationToggles::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{} must be positive, got {}", name, v)));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{} must be non-negative, got {}", name, v)));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{} must be in [0,1), got {}", name, v)));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Loss components of one (target, exemplar) pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub anchor: f64,
    pub strokes: f64,
    pub cross_entropy: f64,
}

/// Build one member's loss on the tape; returns the scalar var and the
/// detached component values.
fn member_loss<R: Rng>(
    tape: &mut Tape,
    target: &Sketch,
    exemplar: &LabeledSketch,
    vars: &ModelVars,
    cfg: &TrainConfig,
    mode: EncodeMode,
    rng: &mut R,
) -> Result<(crate::autodiff::Var, LossParts)> {
    let fwd =
        deformation_forward(tape, target, &exemplar.sketch, vars, &cfg.toggles, mode, rng)?;
    let anchor = keypoint_anchor_loss(tape, fwd.x, fwd.kp_x.coords)?;
    let anchor_w = tape.scale(anchor, cfg.alpha)?;
    let strokes = stroke_level_loss(
        tape,
        fwd.deformed,
        fwd.x_hat,
        fwd.kp_ehat.coords,
        fwd.kp_xhat.coords,
        fwd.transforms,
        cfg.beta,
        cfg.gamma,
        cfg.toggles.drop_constraints,
    )?;
    let stroke_feats = stroke_features_per_point(
        tape,
        fwd.emb_ehat.per_stroke,
        &exemplar.sketch.stroke_of_point(),
        &cfg.toggles,
    )?;
    let dist = predict_labels(tape, fwd.deformed, stroke_feats, fwd.emb_ehat.sketch, &vars.tau)?;
    let ce = segmentation_loss(tape, dist, &exemplar.labels)?;
    let ce_w = tape.scale(ce, cfg.delta)?;
    let partial = tape.add(anchor_w, strokes)?;
    let total = tape.add(partial, ce_w)?;
    let parts = LossParts {
        total: tape.value(total).scalar_value(),
        anchor: tape.value(anchor).scalar_value(),
        strokes: tape.value(strokes).scalar_value(),
        cross_entropy: tape.value(ce).scalar_value(),
    };
    Ok((total, parts))
}

/// Full training loss over a batch: the mean of the per-member losses
/// (anchor Chamfer, stroke-level loss, weighted cross-entropy).
pub fn joint_loss(
    batch: &[Sketch],
    exemplar: &LabeledSketch,
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyPointSet("joint_loss"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = 0.0;
    for target in batch {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let (_, parts) =
            member_loss(&mut tape, target, exemplar, &vars, cfg, EncodeMode::Eval, &mut rng)?;
        total += parts.total;
    }
    Ok(total / batch.len() as f64)
}

/// First and second Adam moments, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let shapes: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState { step: 0, m: shapes.clone(), v: shapes }
    }
}

/// One Adam update with bias correction. Rejects NaN gradients.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
    if grads.len() != names.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!("{} grads for {} tensors", grads.len(), names.len()),
        });
    }
    for (g, name) in grads.iter().zip(names.iter()) {
        if g.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NanGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
    for ((p, g), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (rows, cols) = p.shape();
        let mut pd = p.data().to_vec();
        let mut md = m.data().to_vec();
        let mut vd = v.data().to_vec();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = cfg.adam_beta1 * md[i] + (1.0 - cfg.adam_beta1) * gi;
            vd[i] = cfg.adam_beta2 * vd[i] + (1.0 - cfg.adam_beta2) * gi * gi;
            let mhat = md[i] / bc1;
            let vhat = vd[i] / bc2;
            pd[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_epsilon);
        }
        *p = Tensor::new(rows, cols, pd)?;
        *m = Tensor::new(rows, cols, md)?;
        *v = Tensor::new(rows, cols, vd)?;
    }
    Ok(())
}

/// One epoch record of the metrics log.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub joint_loss: f64,
    pub anchor: f64,
    pub strokes: f64,
    pub cross_entropy: f64,
    pub probe_p_metric: Option<f64>,
}

/// Result of a training run: final checkpoint (best probe metric, or lowest
/// loss when no probe labels exist), the full log, and a divergence note if
/// the run aborted early.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_probe: Option<f64>,
    pub diverged: Option<String>,
}

/// Train on a category: shuffled mini-batches of targets are each aligned to
/// the (augmented) exemplar and the joint loss is minimized with Adam.
/// `truths` may supply per-target ground-truth labels (exemplar label ids)
/// for the probe metric; pass an empty slice when unavailable.
pub fn train(
    targets: &[Sketch],
    truths: &[Option<Vec<usize>>],
    exemplar: &LabeledSketch,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(Error::EmptyPointSet("train"));
    }
    if exemplar.label_names.is_empty() {
        return Err(Error::UnlabeledExemplar);
    }
    if !truths.is_empty() && truths.len() != targets.len() {
        return Err(Error::LabelCount { got: truths.len(), want: targets.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(&mut rng, exemplar.label_names.len());
    let mut state = AdamState::new(&params);
    let mut log = Vec::with_capacity(cfg.epochs);

    let probe_count = cfg.probe_size.min(targets.len());
    let probe_indices: Vec<usize> = (0..probe_count)
        .filter(|&i| truths.get(i).map(|t| t.is_some()).unwrap_or(false))
        .collect();

    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_probe: Option<f64> = None;
    let mut best_loss = f64::INFINITY;

    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_parts = LossParts::default();
        let mut had_nan: Option<String> = None;
        for batch in order.chunks(cfg.batch_size) {
            let exemplar_batch = if cfg.augment {
                LabeledSketch {
                    sketch: augment_rotate(&exemplar.sketch, &mut rng)?,
                    labels: exemplar.labels.clone(),
                    label_names: exemplar.label_names.clone(),
                }
            } else {
                exemplar.clone()
            };
            let mut grad_acc: Vec<Tensor> = params
                .named_tensors()
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            let inv_batch = 1.0 / batch.len() as f64;
            for &ti in batch {
                let target = if cfg.augment {
                    augment_rotate(&targets[ti], &mut rng)?
                } else {
                    targets[ti].clone()
                };
                let mut tape = Tape::new();
                let vars = params.register(&mut tape, true);
                let var_handles = vars.all_vars();
                let (loss, parts) = member_loss(
                    &mut tape,
                    &target,
                    &exemplar_batch,
                    &vars,
                    cfg,
                    EncodeMode::Train,
                    &mut rng,
                )?;
                if !parts.total.is_finite() {
                    had_nan = Some(format!("loss {} at epoch {}", parts.total, epoch));
                    break;
                }
                epoch_parts.total += parts.total * inv_batch;
                epoch_parts.anchor += parts.anchor * inv_batch;
                epoch_parts.strokes += parts.strokes * inv_batch;
                epoch_parts.cross_entropy += parts.cross_entropy * inv_batch;
                let grads = tape.backward(loss)?;
                for (acc, var) in grad_acc.iter_mut().zip(var_handles.iter()) {
                    let g = grads.wrt(*var).expect("trainable leaf");
                    let (rows, cols) = acc.shape();
                    let merged: Vec<f64> = acc
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(a, b)| a + b * inv_batch)
                        .collect();
                    *acc = Tensor::new(rows, cols, merged)?;
                }
            }
            if had_nan.is_some() {
                break;
            }
            match adam_step(&mut params, &grad_acc, &mut state, cfg) {
                Ok(()) => {}
                Err(Error::NanGradient(which)) => {
                    had_nan = Some(format!("gradient NaN in {} at epoch {}", which, epoch));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(msg) = had_nan {
            if log.is_empty() {
                return Err(Error::Diverged(msg));
            }
            return Ok(TrainOutcome {
                params: best_params,
                log,
                best_epoch,
                best_probe,
                diverged: Some(msg),
            });
        }

        // normalize component means over the number of batches
        let n_batches = order.chunks(cfg.batch_size).count() as f64;
        let entry_loss = epoch_parts.total / n_batches;
        let probe_p = if probe_indices.is_empty() {
            None
        } else {
            let mut correct = 0usize;
            let mut total = 0usize;
            for &pi in &probe_indices {
                let truth = truths[pi].as_ref().expect("probe index has truth");
                let pred = segment_with(&targets[pi], exemplar, &params, &cfg.toggles)?;
                let mask = vec![false; truth.len()];
                let p = p_metric(&pred.labels, truth, &mask)?;
                correct += (p * truth.len() as f64).round() as usize;
                total += truth.len();
            }
            Some(correct as f64 / total as f64)
        };
        match probe_p {
            Some(p) => {
                if best_probe.map(|b| p > b).unwrap_or(true) {
                    best_probe = Some(p);
                    best_epoch = epoch;
                    best_params = params.clone();
                }
            }
            None => {
                if entry_loss < best_loss {
                    best_loss = entry_loss;
                    best_epoch = epoch;
                    best_params = params.clone();
                }
            }
        }
        log.push(EpochLog {
            epoch,
            joint_loss: entry_loss,
            anchor: epoch_parts.anchor / n_batches,
            strokes: epoch_parts.strokes / n_batches,
            cross_entropy: epoch_parts.cross_entropy / n_batches,
            probe_p_metric: probe_p,
        });
    }
    if cfg.epochs == 0 {
        best_params = params;
    }
    Ok(TrainOutcome { params: best_params, log, best_epoch, best_probe, diverged: None })
}

/// Chamfer distance between the stroke-deformed exemplar and the aligned
/// target, the few-shot selection criterion.
pub fn deformation_chamfer(
    target: &Sketch,
    exemplar: &LabeledSketch,
    params: &ModelParams,
    toggles: &AblationToggles,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let fwd = deformation_forward(
        &mut tape,
        target,
        &exemplar.sketch,
        &vars,
        toggles,
        EncodeMode::Eval,
        &mut rng,
    )?;
    let cd = crate::align::chamfer_on_tape(&mut tape, fwd.deformed, fwd.x_hat)?;
    Ok(tape.value(cd).scalar_value())
}

/// Among several exemplars, pick the one whose deformed copy lands closest
/// to the aligned target (smallest Chamfer distance; ties to the lowest
/// index).
pub fn select_exemplar(
    exemplars: &[LabeledSketch],
    target: &Sketch,
    params: &ModelParams,
) -> Result<usize> {
    if exemplars.is_empty() {
        return Err(Error::EmptyPointSet("select_exemplar"));
    }
    let mut best = 0usize;
    let mut best_cd = f64::INFINITY;
    for (i, ex) in exemplars.iter().enumerate() {
        let cd = deformation_chamfer(target, ex, params, &AblationToggles::default())?;
        if cd < best_cd {
            best_cd = cd;
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{normalize, Point};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy(seed: u64) -> Sketch {
        let mut r = rng(seed);
        let mk = |r: &mut ChaCha8Rng, n: usize| {
            (0..n)
                .map(|_| Point::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)))
                .collect::<Vec<_>>()
        };
        let a = mk(&mut r, 8);
        let b = mk(&mut r, 8);
        normalize(&Sketch::from_strokes(vec![a, b], "toy")).unwrap().0
    }

    fn toy_exemplar(seed: u64) -> LabeledSketch {
        let s = toy(seed);
        let n = s.point_count();
        LabeledSketch::new(
            s,
            (0..n).map(|i| usize::from(i >= 8)).collect(),
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 2, probe_size: 0, ..Default::default() }
    }

    #[test]
    fn joint_loss_zero_weights() {
        let cfg = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            ..tiny_cfg()
        };
        let exemplar = toy_exemplar(1);
        let params = ModelParams::init(&mut rng(2), 2);
        let l = joint_loss(&[toy(3)], &exemplar, &params, &cfg).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn joint_loss_single_member_is_pair_loss() {
        let cfg = tiny_cfg();
        let exemplar = toy_exemplar(4);
        let params = ModelParams::init(&mut rng(5), 2);
        let a = joint_loss(&[toy(6)], &exemplar, &params, &cfg).unwrap();
        let b = joint_loss(&[toy(6)], &exemplar, &params, &cfg).unwrap();
        assert_eq!(a, b);
        let both = joint_loss(&[toy(6), toy(7)], &exemplar, &params, &cfg).unwrap();
        let other = joint_loss(&[toy(7)], &exemplar, &params, &cfg).unwrap();
        assert!((both - 0.5 * (a + other)).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_recomposition() {
        // joint_loss == alpha*anchor + strokes + delta*ce assembled from
        // component ops
        let cfg = tiny_cfg();
        let exemplar = toy_exemplar(8);
        let params = ModelParams::init(&mut rng(9), 2);
        let target = toy(10);
        let got = joint_loss(std::slice::from_ref(&target), &exemplar, &params, &cfg).unwrap();

        let mut r = rng(cfg.seed);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let fwd = deformation_forward(
            &mut tape,
            &target,
            &exemplar.sketch,
            &vars,
            &cfg.toggles,
            EncodeMode::Eval,
            &mut r,
        )
        .unwrap();
        let anchor = keypoint_anchor_loss(&mut tape, fwd.x, fwd.kp_x.coords).unwrap();
        let strokes = stroke_level_loss(
            &mut tape,
            fwd.deformed,
            fwd.x_hat,
            fwd.kp_ehat.coords,
            fwd.kp_xhat.coords,
            fwd.transforms,
            cfg.beta,
            cfg.gamma,
            cfg.toggles.drop_constraints,
        )
        .unwrap();
        let sf = stroke_features_per_point(
            &mut tape,
            fwd.emb_ehat.per_stroke,
            &exemplar.sketch.stroke_of_point(),
            &cfg.toggles,
        )
        .unwrap();
        let dist =
            predict_labels(&mut tape, fwd.deformed, sf, fwd.emb_ehat.sketch, &vars.tau).unwrap();
        let ce = segmentation_loss(&mut tape, dist, &exemplar.labels).unwrap();
        let want = cfg.alpha * tape.value(anchor).scalar_value()
            + tape.value(strokes).scalar_value()
            + cfg.delta * tape.value(ce).scalar_value();
        assert!((got - want).abs() < 1e-10, "{} vs {}", got, want);
    }

    #[test]
    fn adam_zero_gradients_fresh_state() {
        let mut params = ModelParams::init(&mut rng(11), 2);
        let before = params.clone();
        let zeros: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &zeros, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(params, before);
        assert!(state.m.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adam_moments_decay_after_zero_grads() {
        let mut params = ModelParams::init(&mut rng(12), 2);
        let cfg = TrainConfig::default();
        let ones: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::new(t.rows(), t.cols(), vec![1.0; t.data().len()]).unwrap())
            .collect();
        let zeros: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &ones, &mut state, &cfg).unwrap();
        let m_before = state.m[0].data()[0];
        adam_step(&mut params, &zeros, &mut state, &cfg).unwrap();
        assert!((state.m[0].data()[0] - cfg.adam_beta1 * m_before).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_update_approaches_lr() {
        // scalar oracle simulated independently
        let cfg = TrainConfig::default();
        let g = 0.37;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut last_update = 0.0;
        for t in 1..=400 {
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
            let mhat = m / (1.0 - cfg.adam_beta1.powi(t));
            let vhat = v / (1.0 - cfg.adam_beta2.powi(t));
            last_update = cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_epsilon);
        }
        assert!((last_update - cfg.learning_rate).abs() < 0.05 * cfg.learning_rate);

        // the implementation matches the oracle on a 1-element tensor
        let mut params = ModelParams::init(&mut rng(13), 2);
        let mut state = AdamState::new(&params);
        let before = params.named_tensors()[1].1.data()[0]; // encoder.layer0.b[0]
        let grads: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| {
                Tensor::new(t.rows(), t.cols(), vec![g; t.data().len()]).unwrap()
            })
            .collect();
        for _ in 0..400 {
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        let after = params.named_tensors()[1].1.data()[0];
        let total_moved = before - after;
        let mut oracle_total = 0.0;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=400 {
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
            let mhat = m / (1.0 - cfg.adam_beta1.powi(t));
            let vhat = v / (1.0 - cfg.adam_beta2.powi(t));
            oracle_total += cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_epsilon);
        }
        assert!((total_moved - oracle_total).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut params = ModelParams::init(&mut rng(14), 2);
        let mut grads: Vec<Tensor> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let (r, c) = grads[0].shape();
        let mut bad = grads[0].data().to_vec();
        bad[0] = f64::NAN;
        grads[0] = Tensor::new(r, c, bad).unwrap();
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state, &TrainConfig::default()),
            Err(Error::NanGradient(_))
        ));
    }

    #[test]
    fn train_zero_epochs_returns_initialization() {
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let exemplar = toy_exemplar(15);
        let out = train(&[toy(16)], &[], &exemplar, &cfg).unwrap();
        let mut r = rng(cfg.seed);
        let want = ModelParams::init(&mut r, 2);
        assert_eq!(out.params, want);
        assert!(out.log.is_empty());
    }

    #[test]
    fn train_two_runs_bit_identical() {
        let cfg = TrainConfig { epochs: 2, batch_size: 2, probe_size: 0, ..Default::default() };
        let exemplar = toy_exemplar(17);
        let data = vec![toy(18), toy(19), toy(20)];
        let a = train(&data, &[], &exemplar, &cfg).unwrap();
        let b = train(&data, &[], &exemplar, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        for (x, y) in a.log.iter().zip(b.log.iter()) {
            assert_eq!(x.joint_loss.to_bits(), y.joint_loss.to_bits());
        }
    }

    #[test]
    fn select_exemplar_single_is_zero() {
        let params = ModelParams::init(&mut rng(21), 2);
        let idx = select_exemplar(&[toy_exemplar(22)], &toy(23), &params).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn select_exemplar_prefers_identical() {
        let params = ModelParams::init(&mut rng(24), 2);
        let target = toy(25);
        let same = LabeledSketch::new(
            target.clone(),
            (0..target.point_count()).map(|i| usize::from(i >= 8)).collect(),
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let exemplars = vec![toy_exemplar(26), same, toy_exemplar(27)];
        let idx = select_exemplar(&exemplars, &target, &params).unwrap();
        assert_eq!(idx, 1);
    }

    #[test]
    fn select_exemplar_permutation_consistent() {
        let params = ModelParams::init(&mut rng(28), 2);
        let target = toy(29);
        let exemplars = vec![toy_exemplar(30), toy_exemplar(31), toy_exemplar(32)];
        let idx = select_exemplar(&exemplars, &target, &params).unwrap();
        let swapped = vec![exemplars[2].clone(), exemplars[1].clone(), exemplars[0].clone()];
        let idx2 = select_exemplar(&swapped, &target, &params).unwrap();
        let map = [2usize, 1, 0];
        assert_eq!(map[idx2], idx);
    }
}
