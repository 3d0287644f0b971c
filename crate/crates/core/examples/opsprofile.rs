// Rough per-op timing of one member forward+backward at production shapes.

use sketchseg::autodiff::{Tape, Tensor};
use sketchseg::model::{deformation_forward, AblationToggles, ModelParams};
use sketchseg::graph::EncodeMode;
use sketchseg::io::synth::{synth_sketches, SynthKind};
use sketchseg::sketch::{normalize, resample, LabeledSketch};
use sketchseg::segment::{predict_labels, segmentation_loss, stroke_features_per_point};
use sketchseg::align::keypoint_anchor_loss;
use sketchseg::deform::{stroke_level_loss, ConstraintDrops};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let synth = synth_sketches(SynthKind::Lollipop, 2, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let prep = |s: &sketchseg::sketch::Sketch, rng: &mut ChaCha8Rng| {
        normalize(&resample(s, 256, rng).unwrap()).unwrap().0
    };
    let ex_sketch = prep(&synth[0].sketch, &mut rng);
    let target = prep(&synth[1].sketch, &mut rng);
    let mut labels = Vec::new();
    for (si, stroke) in ex_sketch.strokes.iter().enumerate() {
        labels.extend(std::iter::repeat(usize::from(synth[0].stroke_labels[si] == "stick")).take(stroke.points.len()));
    }
    let exemplar = LabeledSketch::new(ex_sketch, labels, vec!["candy".into(), "stick".into()]).unwrap();
    let params = ModelParams::init(&mut rng, 2);

    // time phases
    let reps = 10;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let fwd = deformation_forward(&mut tape, &target, &exemplar.sketch, &vars, &AblationToggles::default(), EncodeMode::Train, &mut rng).unwrap();
        let anchor = keypoint_anchor_loss(&mut tape, fwd.x, fwd.kp_x.coords).unwrap();
        let strokes = stroke_level_loss(&mut tape, fwd.deformed, fwd.x_hat, fwd.kp_ehat.coords, fwd.kp_xhat.coords, fwd.transforms, 0.2, 50.0, ConstraintDrops::none()).unwrap();
        let sf = stroke_features_per_point(&mut tape, fwd.emb_ehat.per_stroke, &exemplar.sketch.stroke_of_point(), &AblationToggles::default()).unwrap();
        let dist = predict_labels(&mut tape, fwd.deformed, sf, fwd.emb_ehat.sketch, &vars.tau).unwrap();
        let ce = segmentation_loss(&mut tape, dist, &exemplar.labels).unwrap();
        let a = tape.add(anchor, strokes).unwrap();
        let total = tape.add(a, ce).unwrap();
        let n_ops = tape.len();
        let tf = t0.elapsed();
        let _ = (total, n_ops, tf);
        let _grads = tape.backward(total).unwrap();
    }
    let full = t0.elapsed().as_secs_f64() / reps as f64;
    println!("fwd+bwd: {:.1} ms", full * 1000.0);

    // forward only
    let t1 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let fwd = deformation_forward(&mut tape, &target, &exemplar.sketch, &vars, &AblationToggles::default(), EncodeMode::Train, &mut rng).unwrap();
        let _ = fwd;
    }
    println!("fwd only (no-grad): {:.1} ms", t1.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // tape size
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);
    let _fwd = deformation_forward(&mut tape, &target, &exemplar.sketch, &vars, &AblationToggles::default(), EncodeMode::Train, &mut rng).unwrap();
    println!("tape nodes after deformation_forward: {}", tape.len());
    let _ = Tensor::zeros(1,1);
}
