//! Dense layers and MLPs shared by the encoder and the three heads.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use rand::Rng;

/// One linear layer: y = x . w + b (b broadcast over rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

impl Dense {
    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let lim = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-lim..lim)).collect();
        Dense {
            w: Tensor::new(fan_in, fan_out, data).expect("xavier shape"),
            b: Tensor::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { w: Tensor::zeros(fan_in, fan_out), b: Tensor::zeros(1, fan_out) }
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> DenseVars {
        DenseVars { w: tape.leaf(self.w.clone(), trainable), b: tape.leaf(self.b.clone(), trainable) }
    }
}

impl DenseVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.matmul(x, self.w)?;
        tape.add(z, self.b)
    }
}

/// Successive dense layers with relu between them; the final layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<DenseVars>,
}

impl Mlp {
    pub fn xavier<R: Rng>(rng: &mut R, widths: &[usize], gain: f64) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense::xavier(rng, w[0], w[1], gain))
            .collect();
        Mlp { layers }
    }

    /// Zero the final layer in place (used where training must start at a
    /// neutral output, e.g. identity stroke transforms).
    pub fn zero_final_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            let (r, c) = last.w.shape();
            *last = Dense::zeros(r, c);
        }
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        MlpVars { layers: self.layers.iter().map(|l| l.register(tape, trainable)).collect() }
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
