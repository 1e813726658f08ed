use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matvec, matvec_t, outer_acc};
use super::param::{Grads, ParamId, ParamStore};
use crate::error::{shape_check, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
    inp: usize,
    out: usize,
}

/// Stack of affine layers; the activation is applied after every layer but
/// the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Cached intermediates of one forward call.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    owner: ParamId,
    // inputs[l] is the input to layer l; pre[l] its pre-activation output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Registers `widths.len() - 1` dense layers named `{name}.{l}.weight/bias`.
    /// Weights and biases are uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (inp, out) = (w[0], w[1]);
                let bound = 1.0 / (inp as f64).sqrt();
                let values = (0..inp * out).map(|_| rng.random_range(-bound..bound)).collect();
                let weight = store.add(format!("{name}.{l}.weight"), vec![out, inp], values);
                let b = (0..out).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = store.add(format!("{name}.{l}.bias"), vec![out], b);
                Dense { weight, bias, inp, out }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inp
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.inp).collect();
        w.push(self.output_width());
        w
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn last_layer(&self) -> (ParamId, ParamId) {
        let l = self.layers[self.layers.len() - 1];
        (l.weight, l.bias)
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        shape_check(x.len() == self.input_width(), || {
            format!("MLP input width {} expected {}", x.len(), self.input_width())
        })?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = matvec(store.values(layer.weight), layer.out, layer.inp, &cur);
            for (zi, bi) in z.iter_mut().zip(store.values(layer.bias)) {
                *zi += bi;
            }
            let next = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            inputs.push(std::mem::replace(&mut cur, next));
            pre.push(z);
        }
        Ok((cur, MlpTrace { owner: self.layers[0].weight, inputs, pre }))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &MlpTrace,
        upstream: &[f64],
        grads: &mut Grads,
    ) -> Result<Vec<f64>> {
        if trace.owner != self.layers[0].weight || trace.inputs.len() != self.layers.len() {
            return Err(Error::Invariant("MLP trace does not belong to this network".into()));
        }
        shape_check(upstream.len() == self.output_width(), || {
            format!("upstream width {} expected {}", upstream.len(), self.output_width())
        })?;
        let last = self.layers.len() - 1;
        let mut g = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            if l != last {
                for (gi, zi) in g.iter_mut().zip(&trace.pre[l]) {
                    *gi *= self.activation.derivative(*zi);
                }
            }
            outer_acc(grads.get_mut(layer.weight), &g, &trace.inputs[l]);
            for (b, gi) in grads.get_mut(layer.bias).iter_mut().zip(&g) {
                *b += gi;
            }
            g = matvec_t(store.values(layer.weight), layer.out, layer.inp, &g);
        }
        Ok(g)
    }
}
