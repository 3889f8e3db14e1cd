use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Nonlinearity applied between hidden layers. The output layer is linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Dense layer, `y = W x + b` with `W` stored row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, &b) in self.weight.chunks_exact(self.inputs).zip(&self.bias) {
            let mut acc = b;
            for (&w, &v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Pre-activation outputs of every layer, kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

impl Mlp {
    /// Zero-initialized network with the given layer widths
    /// (`[inputs, hidden..., outputs]`).
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("an MLP needs at least an input and an output width"));
        }
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    what: "MLP layer chain",
                    expected: pair[0].outputs,
                    found: pair[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.weight.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::DimensionMismatch {
                    what: "MLP layer shape",
                    expected: l.inputs * l.outputs,
                    found: l.weight.len(),
                });
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("MLP weights"));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.pre.pop().unwrap_or_default())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace> {
        if x.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                what: "MLP input",
                expected: self.input_width(),
                found: x.len(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&act, &mut out);
            if li + 1 < self.layers.len() {
                act = out.iter().map(|&v| self.activation.apply(v)).collect();
            }
            pre.push(out);
        }
        Ok(MlpTrace { input: x.to_vec(), pre })
    }

    /// Accumulates parameter gradients into `grad` given `d_out` (gradient
    /// w.r.t. the network output). Returns the gradient w.r.t. the input when
    /// `want_input` is set.
    pub fn backward(&self, trace: &MlpTrace, d_out: &[f64], grad: &mut Mlp, want_input: bool) -> Option<Vec<f64>> {
        let n = self.layers.len();
        let mut delta: Vec<f64> = d_out.to_vec();
        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let g = &mut grad.layers[li];
            let input: Vec<f64> = if li == 0 {
                trace.input.clone()
            } else {
                trace.pre[li - 1].iter().map(|&v| self.activation.apply(v)).collect()
            };
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &x) in row.iter_mut().zip(&input) {
                    *gw += d * x;
                }
            }
            if li == 0 && !want_input {
                return None;
            }
            let mut d_in = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (di, &w) in d_in.iter_mut().zip(row) {
                    *di += d * w;
                }
            }
            if li > 0 {
                for (di, &p) in d_in.iter_mut().zip(&trace.pre[li - 1]) {
                    *di *= self.activation.grad(p);
                }
            }
            delta = d_in;
        }
        Some(delta)
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }
}
