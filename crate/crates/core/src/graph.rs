//! Sketch graph construction (static stroke edges plus dilated k-NN edges)
//! and the residual edge-convolution encoder producing point, stroke, and
//! sketch embeddings.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Dense, DenseVars};
use crate::sketch::Sketch;
use rand::seq::SliceRandom;
use rand::Rng;

/// Embedding width shared by point, stroke, and sketch features.
pub const FEATURE_DIM: usize = 128;
/// Neighbors kept per node by the dilated k-NN.
pub const KNN_K: usize = 4;
/// Dilation rate per encoder layer.
pub const DILATIONS: [usize; 4] = [1, 4, 8, 16];
/// Probability of sampling neighbors uniformly from the candidate pool
/// instead of taking every d-th (training only).
pub const STOCHASTIC_EPS: f64 = 0.2;
const ENC_WIDTH: usize = 64;

/// Directed edges (source, target) for one graph layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub edges: Vec<(usize, usize)>,
    pub layer_index: usize,
}

impl EdgeSet {
    /// Union with another set; duplicates removed, order fixed by
    /// (target, source) so downstream reductions are deterministic.
    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        let mut edges: Vec<(usize, usize)> =
            self.edges.iter().chain(other.edges.iter()).cloned().collect();
        edges.sort_by_key(|&(s, t)| (t, s));
        edges.dedup();
        EdgeSet { edges, layer_index: self.layer_index.max(other.layer_index) }
    }
}

/// Bidirectional edges between consecutive points of each stroke; strokes
/// with a single point get a self-edge.
pub fn static_edges(sketch: &Sketch) -> EdgeSet {
    let mut edges = Vec::new();
    let mut base = 0usize;
    for s in &sketch.strokes {
        let n = s.points.len();
        if n == 1 {
            edges.push((base, base));
        }
        for i in 0..n.saturating_sub(1) {
            edges.push((base + i, base + i + 1));
            edges.push((base + i + 1, base + i));
        }
        base += n;
    }
    edges.sort_by_key(|&(s, t)| (t, s));
    edges.dedup();
    EdgeSet { edges, layer_index: 0 }
}

/// Dilated k-NN edges over row-major `feats` (n rows of width `dim`).
///
/// Per node: rank the other nodes by Euclidean distance (ties to the lower
/// index), keep the k*d nearest as candidates, then take every d-th rank.
/// With probability `epsilon` a node instead draws k candidates uniformly
/// without replacement. When fewer than k*d candidates exist the dilation
/// shrinks to fit, and a node with fewer than k candidates keeps all of them.
pub fn dilated_knn<R: Rng>(
    feats: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    d: usize,
    epsilon: f64,
    layer_index: usize,
    rng: &mut R,
) -> Result<EdgeSet> {
    if k == 0 || d == 0 {
        return Err(Error::InvalidArgument {
            op: "dilated_knn",
            detail: format!("k={}, d={}", k, d),
        });
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument {
            op: "dilated_knn",
            detail: format!("epsilon={}", epsilon),
        });
    }
    if feats.len() != n * dim {
        return Err(Error::ShapeMismatch {
            op: "dilated_knn",
            detail: format!("{} values for {}x{}", feats.len(), n, dim),
        });
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
    };
    // Wide feature spaces go through the Gram matrix so the distance pass
    // runs on the matmul kernel: d2(i,j) = |xi|^2 + |xj|^2 - 2 xi.xj.
    // Only the candidate ORDER matters downstream, so the subtraction's
    // rounding is harmless except for near-exact ties.
    let gram: Option<(Vec<f64>, Vec<f64>)> = if dim >= 8 {
        let ft = crate::autodiff::transpose_buf(feats, n, dim);
        let mut g = vec![0.0; n * n];
        crate::autodiff::matmul_nn(feats, &ft, &mut g, n, dim, n);
        let norms: Vec<f64> = (0..n).map(|i| g[i * n + i]).collect();
        Some((g, norms))
    } else {
        None
    };
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        match &gram {
            Some((g, norms)) => {
                let row = &g[i * n..(i + 1) * n];
                let ni = norms[i];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    cand.push((ni + norms[j] - 2.0 * row[j], j));
                }
            }
            None => {
                let fi = &feats[i * dim..(i + 1) * dim];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let fj = &feats[j * dim..(j + 1) * dim];
                    let mut d2 = 0.0;
                    for (a, b) in fi.iter().zip(fj.iter()) {
                        let diff = a - b;
                        d2 += diff * diff;
                    }
                    cand.push((d2, j));
                }
            }
        }
        let pool = cand.len().min(k * d);
        if pool > 0 && pool < cand.len() {
            cand.select_nth_unstable_by(pool - 1, cmp);
            cand.truncate(pool);
        }
        cand.sort_by(cmp);
        if pool == 0 {
            continue;
        }
        let stochastic = epsilon > 0.0 && rng.gen::<f64>() < epsilon;
        if stochastic {
            let mut picks: Vec<usize> = (0..pool).collect();
            picks.shuffle(rng);
            picks.truncate(k.min(pool));
            picks.sort_unstable();
            for p in picks {
                edges.push((cand[p].1, i));
            }
        } else if pool < k {
            for c in cand.iter().take(pool) {
                edges.push((c.1, i));
            }
        } else {
            let d_eff = if pool == k * d { d } else { (pool / k).max(1) };
            for r in 1..=k {
                edges.push((cand[r * d_eff - 1].1, i));
            }
        }
    }
    edges.sort_by_key(|&(s, t)| (t, s));
    edges.dedup();
    Ok(EdgeSet { edges, layer_index })
}

/// Encoder parameters: four edge-convolution layers plus a linear projection
/// to [`FEATURE_DIM`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
    pub proj: Dense,
}

impl EncoderParams {
    pub fn init<R: Rng>(rng: &mut R, gain: f64) -> Self {
        let mut layers = Vec::with_capacity(4);
        let mut width_in = 2usize;
        for _ in 0..4 {
            layers.push(Dense::xavier(rng, 2 * width_in, ENC_WIDTH, gain));
            width_in = ENC_WIDTH;
        }
        EncoderParams { layers, proj: Dense::xavier(rng, ENC_WIDTH, FEATURE_DIM, gain) }
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        EncoderVars {
            layers: self.layers.iter().map(|l| l.register(tape, trainable)).collect(),
            proj: self.proj.register(tape, trainable),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub layers: Vec<DenseVars>,
    pub proj: DenseVars,
}

/// Whether stochastic dilation is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Train,
    Eval,
}

/// Point/stroke/sketch embeddings still attached to a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeEmbeddings {
    /// N x K
    pub per_point: Var,
    /// |strokes| x K
    pub per_stroke: Var,
    /// 1 x K
    pub sketch: Var,
}

/// Detached embedding values.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub per_point: Tensor,
    pub per_stroke: Tensor,
    pub sketch: Tensor,
}

impl TapeEmbeddings {
    pub fn detach(&self, tape: &Tape) -> Embeddings {
        Embeddings {
            per_point: tape.value(self.per_point).clone(),
            per_stroke: tape.value(self.per_stroke).clone(),
            sketch: tape.value(self.sketch).clone(),
        }
    }
}

/// The per-layer edge sets (static union dynamic) one encoder pass used.
/// Re-running with a captured plan freezes the graph structure, which is how
/// gradient checks isolate the differentiable path.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePlan {
    pub layers: Vec<EdgeSet>,
}

/// Run the encoder over points already on the tape. `coords` is an [N,2] var
/// (possibly produced by upstream transforms, through which gradients flow).
/// Without a `plan`, dynamic edges are rebuilt per layer from current values,
/// layer 0 in coordinate space and later layers in feature space; the edges
/// actually used are returned alongside the embeddings.
#[allow(clippy::too_many_arguments)]
pub fn encode_points<R: Rng>(
    tape: &mut Tape,
    coords: Var,
    stroke_of_point: &[usize],
    n_strokes: usize,
    statics: &EdgeSet,
    params: &EncoderVars,
    mode: EncodeMode,
    plan: Option<&EdgePlan>,
    rng: &mut R,
) -> Result<(TapeEmbeddings, EdgePlan)> {
    let n = tape.value(coords).rows();
    if tape.value(coords).cols() != 2 || stroke_of_point.len() != n {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: format!(
                "coords {}x{}, {} stroke ids",
                tape.value(coords).rows(),
                tape.value(coords).cols(),
                stroke_of_point.len()
            ),
        });
    }
    let eps = match mode {
        EncodeMode::Train => STOCHASTIC_EPS,
        EncodeMode::Eval => 0.0,
    };
    let mut used = Vec::with_capacity(params.layers.len());
    let mut h = coords;
    for (l, layer) in params.layers.iter().enumerate() {
        let edges = match plan {
            Some(p) => p.layers[l].clone(),
            None => {
                let hv = tape.value(h);
                let dynamic =
                    dilated_knn(hv.data(), n, hv.cols(), KNN_K, DILATIONS[l], eps, l, rng)?;
                statics.union(&dynamic)
            }
        };
        let srcs: Vec<usize> = edges.edges.iter().map(|e| e.0).collect();
        let dsts: Vec<usize> = edges.edges.iter().map(|e| e.1).collect();
        used.push(edges);
        let xi = tape.gather_rows(h, &dsts)?;
        let xj = tape.gather_rows(h, &srcs)?;
        let rel = tape.sub(xj, xi)?;
        let ef = tape.concat(&[xi, rel], 1)?;
        let msg = layer.forward(tape, ef)?;
        let msg = tape.relu(msg);
        let agg = tape.scatter_max(msg, &dsts, n)?;
        h = if l == 0 { agg } else { tape.add(agg, h)? };
    }
    let per_point = params.proj.forward(tape, h)?;
    let per_stroke = tape.scatter_max(per_point, stroke_of_point, n_strokes)?;
    let sketch = tape.max_over_rows(per_point);
    Ok((TapeEmbeddings { per_point, per_stroke, sketch }, EdgePlan { layers: used }))
}

/// Convenience wrapper: encode a sketch from its raw coordinates.
pub fn encode<R: Rng>(
    sketch: &Sketch,
    params: &EncoderParams,
    mode: EncodeMode,
    rng: &mut R,
) -> Result<Embeddings> {
    let mut tape = Tape::new();
    let coords = tape.constant(Tensor::new(sketch.point_count(), 2, sketch.coords())?);
    let statics = static_edges(sketch);
    let vars = params.register(&mut tape, false);
    let (emb, _) = encode_points(
        &mut tape,
        coords,
        &sketch.stroke_of_point(),
        sketch.strokes.len(),
        &statics,
        &vars,
        mode,
        None,
        rng,
    )?;
    Ok(emb.detach(&tape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::sketch::Point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy_sketch(n_per_stroke: usize, seed: u64) -> Sketch {
        let mut r = rng(seed);
        let mk = |r: &mut ChaCha8Rng| {
            (0..n_per_stroke)
                .map(|_| Point::new(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)))
                .collect::<Vec<_>>()
        };
        let a = mk(&mut r);
        let b = mk(&mut r);
        Sketch::from_strokes(vec![a, b], "toy")
    }

    #[test]
    fn knn_collinear_dilation() {
        // Points at x = 0..9; node 0 with k=2, d=2 picks ranks 2 and 4.
        let feats: Vec<f64> = (0..10).flat_map(|i| [i as f64, 0.0]).collect();
        let es = dilated_knn(&feats, 10, 2, 2, 2, 0.0, 0, &mut rng(0)).unwrap();
        let of_zero: Vec<usize> =
            es.edges.iter().filter(|e| e.1 == 0).map(|e| e.0).collect();
        assert_eq!(of_zero, vec![2, 4]);
    }

    #[test]
    fn knn_d1_matches_brute_force() {
        let mut r = rng(5);
        let n = 50;
        let feats: Vec<f64> = (0..n * 2).map(|_| r.gen_range(-1.0..1.0)).collect();
        let k = 4;
        let es = dilated_knn(&feats, n, 2, k, 1, 0.0, 0, &mut rng(1)).unwrap();
        for i in 0..n {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = feats[i * 2] - feats[j * 2];
                    let dy = feats[i * 2 + 1] - feats[j * 2 + 1];
                    (dx * dx + dy * dy, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut want: Vec<usize> = d.iter().take(k).map(|x| x.1).collect();
            want.sort_unstable();
            let mut got: Vec<usize> =
                es.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
            got.sort_unstable();
            assert_eq!(got, want, "node {}", i);
        }
    }

    #[test]
    fn knn_small_pool_still_returns_k() {
        // 6 nodes, k=4, d=8: pool is all 5 others, dilation shrinks.
        let feats: Vec<f64> = (0..6).flat_map(|i| [i as f64, 0.0]).collect();
        let es = dilated_knn(&feats, 6, 2, 4, 8, 0.0, 0, &mut rng(0)).unwrap();
        for i in 0..6 {
            assert_eq!(es.edges.iter().filter(|e| e.1 == i).count(), 4);
        }
    }

    #[test]
    fn knn_stochastic_picks_within_pool() {
        let feats: Vec<f64> = (0..12).flat_map(|i| [i as f64, (i as f64 * 0.37).sin()]).collect();
        let es = dilated_knn(&feats, 12, 2, 3, 2, 1.0, 0, &mut rng(9)).unwrap();
        for i in 0..12 {
            let got: Vec<usize> = es.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
            assert_eq!(got.len(), 3);
            let mut d: Vec<(f64, usize)> = (0..12)
                .filter(|&j| j != i)
                .map(|j| {
                    let dx = feats[i * 2] - feats[j * 2];
                    let dy = feats[i * 2 + 1] - feats[j * 2 + 1];
                    (dx * dx + dy * dy, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let pool: Vec<usize> = d.iter().take(6).map(|x| x.1).collect();
            for g in got {
                assert!(pool.contains(&g));
            }
        }
    }

    #[test]
    fn knn_rejects_bad_params() {
        let feats = [0.0, 0.0, 1.0, 1.0];
        assert!(dilated_knn(&feats, 2, 2, 0, 1, 0.0, 0, &mut rng(0)).is_err());
        assert!(dilated_knn(&feats, 2, 2, 1, 0, 0.0, 0, &mut rng(0)).is_err());
    }

    #[test]
    fn static_edges_basic() {
        let s = Sketch::from_strokes(
            vec![
                vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)],
                vec![Point::new(5.0, 5.0), Point::new(6.0, 5.0)],
            ],
            "t",
        );
        let es = static_edges(&s);
        let mut got = es.edges.clone();
        got.sort_unstable();
        let mut want = vec![(0, 1), (1, 0), (1, 2), (2, 1), (3, 4), (4, 3)];
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn static_edges_self_loop_for_singleton() {
        let s = Sketch::from_strokes(vec![vec![Point::new(0.0, 0.0)]], "t");
        assert_eq!(static_edges(&s).edges, vec![(0, 0)]);
    }

    #[test]
    fn static_edge_count_matches_formula() {
        let mut r = rng(2);
        for _ in 0..20 {
            let strokes: Vec<Vec<Point>> = (0..r.gen_range(1..6))
                .map(|_| {
                    (0..r.gen_range(1..9))
                        .map(|_| Point::new(r.gen(), r.gen()))
                        .collect()
                })
                .collect();
            let s = Sketch::from_strokes(strokes, "t");
            let undirected: usize = s
                .strokes
                .iter()
                .filter(|st| st.points.len() > 1)
                .map(|st| st.points.len() - 1)
                .sum();
            let singles = s.strokes.iter().filter(|st| st.points.len() == 1).count();
            assert_eq!(static_edges(&s).edges.len(), undirected * 2 + singles);
        }
    }

    #[test]
    fn encode_zero_params_zero_embeddings() {
        let sketch = toy_sketch(8, 3);
        let params = EncoderParams {
            layers: vec![
                Dense::zeros(4, ENC_WIDTH),
                Dense::zeros(2 * ENC_WIDTH, ENC_WIDTH),
                Dense::zeros(2 * ENC_WIDTH, ENC_WIDTH),
                Dense::zeros(2 * ENC_WIDTH, ENC_WIDTH),
            ],
            proj: Dense::zeros(ENC_WIDTH, FEATURE_DIM),
        };
        let emb = encode(&sketch, &params, EncodeMode::Eval, &mut rng(0)).unwrap();
        assert!(emb.per_point.data().iter().all(|&v| v == 0.0));
        assert!(emb.per_stroke.data().iter().all(|&v| v == 0.0));
        assert!(emb.sketch.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_pooling_consistency() {
        let sketch = toy_sketch(8, 4);
        let params = EncoderParams::init(&mut rng(21), 1.0);
        let emb = encode(&sketch, &params, EncodeMode::Eval, &mut rng(0)).unwrap();
        let map = sketch.stroke_of_point();
        for j in 0..sketch.strokes.len() {
            for c in 0..FEATURE_DIM {
                let want = (0..sketch.point_count())
                    .filter(|&i| map[i] == j)
                    .map(|i| emb.per_point.get(i, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(emb.per_stroke.get(j, c), want);
            }
        }
        for c in 0..FEATURE_DIM {
            let want = (0..sketch.point_count())
                .map(|i| emb.per_point.get(i, c))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(emb.sketch.get(0, c), want);
        }
    }

    #[test]
    fn encode_eval_deterministic() {
        let sketch = toy_sketch(10, 6);
        let params = EncoderParams::init(&mut rng(31), 1.0);
        let a = encode(&sketch, &params, EncodeMode::Eval, &mut rng(1)).unwrap();
        let b = encode(&sketch, &params, EncodeMode::Eval, &mut rng(2)).unwrap();
        assert_eq!(a.per_point, b.per_point);
        assert_eq!(a.per_stroke, b.per_stroke);
        assert_eq!(a.sketch, b.sketch);
    }

    #[test]
    fn encode_gradients_pass_gradcheck_on_toy_sketch() {
        // 16-point, 2-stroke sketch. The edge plan is captured once and
        // frozen so finite differences probe the differentiable path only.
        let sketch = toy_sketch(8, 8);
        let params = EncoderParams::init(&mut rng(41), 1.0);
        let statics = static_edges(&sketch);
        let map = sketch.stroke_of_point();
        let coords = Tensor::new(16, 2, sketch.coords()).unwrap();
        let plan = {
            let mut tape = Tape::new();
            let c = tape.constant(coords.clone());
            let vars = params.register(&mut tape, false);
            encode_points(
                &mut tape,
                c,
                &map,
                sketch.strokes.len(),
                &statics,
                &vars,
                EncodeMode::Eval,
                None,
                &mut rng(0),
            )
            .unwrap()
            .1
        };
        let rep = grad_check(
            |tape, v| {
                let vars = params.register(tape, false);
                let (emb, _) = encode_points(
                    tape,
                    v,
                    &map,
                    sketch.strokes.len(),
                    &statics,
                    &vars,
                    EncodeMode::Eval,
                    Some(&plan),
                    &mut rng(0),
                )?;
                let s = tape.square(emb.per_point);
                Ok(tape.sum(s))
            },
            &coords,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "rel err {}", rep.max_rel_error);

        // and w.r.t. a sample of the layer-1 weights
        let w1 = params.layers[1].w.clone();
        let sample: Vec<usize> = (0..w1.data().len()).step_by(131).collect();
        let rep = crate::autodiff::grad_check_at(
            |tape, v| {
                let mut vars = params.register(tape, false);
                vars.layers[1].w = v;
                let coords = tape.constant(Tensor::new(16, 2, sketch.coords()).unwrap());
                let (emb, _) = encode_points(
                    tape,
                    coords,
                    &map,
                    sketch.strokes.len(),
                    &statics,
                    &vars,
                    EncodeMode::Eval,
                    Some(&plan),
                    &mut rng(0),
                )?;
                let s = tape.square(emb.sketch);
                Ok(tape.sum(s))
            },
            &w1,
            1e-5,
            &sample,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "rel err {}", rep.max_rel_error);
    }
}

