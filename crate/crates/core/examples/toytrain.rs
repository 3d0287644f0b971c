// Scratch harness for timing and convergence probing on synthetic data.

use sketchseg::eval::{c_metric, granularity_mask, p_metric};
use sketchseg::io::synth::{synth_sketches, SynthKind};
use sketchseg::segment::segment;
use sketchseg::sketch::{normalize, resample, LabeledSketch};
use sketchseg::train::{train, TrainConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5e-5);
    let n_points: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(256);

    let synth = synth_sketches(SynthKind::Lollipop, count, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut prepared = Vec::new();
    let mut truths = Vec::new();
    for s in &synth {
        let r = resample(&s.sketch, n_points, &mut rng).unwrap();
        let (n, _) = normalize(&r).unwrap();
        let mut labels = Vec::new();
        for (si, stroke) in n.strokes.iter().enumerate() {
            let id = usize::from(s.stroke_labels[si] == "stick");
            labels.extend(std::iter::repeat(id).take(stroke.points.len()));
        }
        prepared.push(n);
        truths.push(labels);
    }
    let exemplar = LabeledSketch::new(
        prepared[0].clone(),
        truths[0].clone(),
        vec!["candy".into(), "stick".into()],
    )
    .unwrap();
    let targets: Vec<_> = prepared[1..].to_vec();
    let target_truths: Vec<Option<Vec<usize>>> =
        truths[1..].iter().map(|t| Some(t.clone())).collect();

    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        probe_size: 2,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let out = train(&targets, &target_truths, &exemplar, &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "trained {} epochs on {} targets in {:.1}s ({:.2}s/epoch)",
        epochs,
        targets.len(),
        dt,
        dt / epochs.max(1) as f64
    );
    for l in out.log.iter().take(3) {
        println!(
            "epoch {:>3}: loss {:>9.4} anchor {:>8.5} strokes {:>9.4} ce {:>8.2} probe {:?}",
            l.epoch, l.joint_loss, l.anchor, l.strokes, l.cross_entropy, l.probe_p_metric
        );
    }
    let k = out.log.len();
    for l in out.log.iter().skip(k.saturating_sub(5)) {
        println!(
            "epoch {:>3}: loss {:>9.4} anchor {:>8.5} strokes {:>9.4} ce {:>8.2} probe {:?}",
            l.epoch, l.joint_loss, l.anchor, l.strokes, l.cross_entropy, l.probe_p_metric
        );
    }

    // held-in evaluation
    let mut ps = Vec::new();
    let mut cs = Vec::new();
    for (t, truth) in targets.iter().zip(truths[1..].iter()) {
        let pred = segment(t, &exemplar, &out.params).unwrap();
        let truth_ls =
            LabeledSketch::new(t.clone(), truth.clone(), exemplar.label_names.clone()).unwrap();
        let mask = granularity_mask(&truth_ls, &exemplar);
        ps.push(p_metric(&pred.labels, truth, &mask).unwrap());
        cs.push(c_metric(&pred.labels, truth, &t.stroke_of_point(), &mask).unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("held-in P={:.4} C={:.4} (best epoch {})", mean(&ps), mean(&cs), out.best_epoch);
}
