use sketchseg::model::{deformation_forward, AblationToggles, ModelParams};
use sketchseg::autodiff::Tape;
use sketchseg::graph::EncodeMode;
use sketchseg::io::synth::{synth_sketches, SynthKind};
use sketchseg::sketch::{normalize, resample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let synth = synth_sketches(SynthKind::Lollipop, 2, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let prep = |s: &sketchseg::sketch::Sketch, rng: &mut ChaCha8Rng| {
        normalize(&resample(s, 256, rng).unwrap()).unwrap().0
    };
    let ex = prep(&synth[0].sketch, &mut rng);
    let target = prep(&synth[1].sketch, &mut rng);
    let params = ModelParams::init(&mut rng, 2);
    for _ in 0..3 {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, true);
        let fwd = deformation_forward(&mut tape, &target, &ex, &vars, &AblationToggles::default(), EncodeMode::Train, &mut rng).unwrap();
        let s = tape.square(fwd.deformed);
        let l = tape.sum(s);
        let _ = tape.backward(l).unwrap();
    }
}
