use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchseg::graph::dilated_knn;
use std::time::Instant;

fn main() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let n = 256;
    for dim in [2usize, 64] {
        let feats: Vec<f64> = (0..n * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let t0 = Instant::now();
        let mut reps = 0;
        while t0.elapsed().as_secs_f64() < 0.5 {
            for d in [1usize, 4, 8, 16] {
                let _ = dilated_knn(&feats, n, dim, 4, d, 0.0, 0, &mut r).unwrap();
            }
            reps += 4;
        }
        println!("dim {}: {:.3} ms/knn", dim, t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    }
}
