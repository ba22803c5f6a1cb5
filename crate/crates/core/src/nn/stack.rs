//! Layer stacks shared by the adversarial model and the baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    dropout, relu, relu_backward, Activation, DenseCache, DenseParams, DropoutMode, LstmCache, LstmParams, NnError,
    Parameters, SeqGrad, TensorView,
};
use crate::linalg::Matrix;

/// Stacked LSTM layers (ReLU on outputs, dropout after each layer) feeding a
/// ReLU dense feature layer that reads the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub lstm: Vec<LstmParams>,
    pub dense: DenseParams,
    pub lstm_dropout: f64,
}

#[derive(Debug, Clone)]
struct LstmLayerCache {
    lstm: LstmCache,
    /// ReLU outputs of the steps passed upward (all steps, or only the last
    /// one for the top layer).
    acts: Vec<Matrix>,
    masks: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    layers: Vec<LstmLayerCache>,
    dense: DenseCache,
}

impl FeatureCache {
    /// Smallest `|pre-activation|` over every ReLU in the extractor; finite
    /// differences are only meaningful when this exceeds the step size.
    pub fn relu_margin(&self) -> f64 {
        let lstm = self.layers.iter().flat_map(|l| {
            let outputs = l.lstm.outputs();
            let start = outputs.len() - l.acts.len();
            outputs[start..].iter().flat_map(|m| m.as_slice().iter().copied())
        });
        lstm.chain(self.dense.pre_activation().as_slice().iter().copied())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }
}

impl FeatureExtractor {
    pub fn init(q: usize, lstm_layers: &[usize], f_units: usize, lstm_dropout: f64, rng: &mut impl Rng) -> Self {
        let mut lstm = Vec::with_capacity(lstm_layers.len());
        let mut input = q;
        for &h in lstm_layers {
            lstm.push(LstmParams::init(input, h, rng));
            input = h;
        }
        let dense = DenseParams::init(input, f_units, Activation::Relu, rng);
        Self {
            lstm,
            dense,
            lstm_dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.first().map_or(0, LstmParams::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.dense.output_dim()
    }

    pub fn forward(&self, xs: &[Matrix], mode: DropoutMode, rng: &mut impl Rng) -> Result<(Matrix, FeatureCache), NnError> {
        if xs.is_empty() {
            return Err(NnError::Shape {
                op: "feature extractor sequence",
                expected: (1, self.input_dim()),
                got: (0, self.input_dim()),
            });
        }
        let n = self.lstm.len();
        let mut layers: Vec<LstmLayerCache> = Vec::with_capacity(n);
        let mut next: Vec<Matrix> = Vec::new();
        for (l, layer) in self.lstm.iter().enumerate() {
            let lstm = layer.forward_seq(if l == 0 { xs } else { &next })?;
            let outputs = lstm.outputs();
            let passed = if l + 1 == n { &outputs[outputs.len() - 1..] } else { outputs };
            let mut acts = Vec::with_capacity(passed.len());
            let mut masks = Vec::with_capacity(passed.len());
            let mut out = Vec::with_capacity(passed.len());
            for h in passed {
                let a = relu(h);
                let (d, m) = dropout(&a, self.lstm_dropout, mode, rng)?;
                acts.push(a);
                masks.push(m);
                out.push(d);
            }
            next = out;
            layers.push(LstmLayerCache { lstm, acts, masks });
        }
        let (f, dense) = self.dense.forward(&next[0])?;
        Ok((f, FeatureCache { layers, dense }))
    }

    /// Parameter gradients given `∂L/∂f`.
    pub fn backward(&self, cache: &FeatureCache, grad_f: &Matrix) -> Result<FeatureExtractor, NnError> {
        if cache.layers.len() != self.lstm.len() {
            return Err(NnError::StaleCache("feature extractor depth"));
        }
        let (dense, dd) = self.dense.backward(&cache.dense, grad_f)?;
        let mut upstream = vec![dd];
        let mut lstm_grads = Vec::with_capacity(self.lstm.len());
        for (l, layer) in self.lstm.iter().enumerate().rev() {
            let lc = &cache.layers[l];
            let gs: Vec<Matrix> = upstream
                .iter()
                .zip(&lc.masks)
                .zip(&lc.acts)
                .map(|((g, m), a)| {
                    let mut gm = g.clone();
                    for (v, mv) in gm.as_mut_slice().iter_mut().zip(m.as_slice()) {
                        *v *= mv;
                    }
                    relu_backward(a, &gm)
                })
                .collect();
            let seq = if l + 1 == self.lstm.len() {
                SeqGrad::Last(&gs[0])
            } else {
                SeqGrad::All(&gs)
            };
            let (g, dxs) = layer.backward_seq(&lc.lstm, seq)?;
            lstm_grads.push(g);
            upstream = dxs;
        }
        lstm_grads.reverse();
        Ok(FeatureExtractor {
            lstm: lstm_grads,
            dense,
            lstm_dropout: self.lstm_dropout,
        })
    }
}

impl Parameters for FeatureExtractor {
    fn tensors(&self, prefix: &str) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (k, l) in self.lstm.iter().enumerate() {
            out.extend(l.tensors(&format!("{prefix}lstm.{k}.")));
        }
        out.extend(self.dense.tensors(&format!("{prefix}dense.")));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.lstm {
            out.extend(l.tensors_mut());
        }
        out.extend(self.dense.tensors_mut());
        out
    }
}

/// Dense head: `[dropout → Dense + ReLU]*` then a scalar output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: Vec<DenseParams>,
    pub out: DenseParams,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    masks: Vec<Matrix>,
    hidden: Vec<DenseCache>,
    out: DenseCache,
}

impl HeadCache {
    /// Pre-activation of the output unit per sample.
    pub fn logits(&self) -> Vec<f64> {
        self.out.pre_activation().as_slice().to_vec()
    }

    pub fn relu_margin(&self) -> f64 {
        self.hidden
            .iter()
            .flat_map(|c| c.pre_activation().as_slice().iter().copied())
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min)
    }
}

impl Head {
    /// With `zero_output` the output layer starts at zero weights and bias.
    pub fn init(
        input: usize,
        layers: &[usize],
        out_activation: Activation,
        dropout: f64,
        zero_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut hidden = Vec::with_capacity(layers.len());
        let mut width = input;
        for &u in layers {
            hidden.push(DenseParams::init(width, u, Activation::Relu, rng));
            width = u;
        }
        let out = if zero_output {
            DenseParams::zeros(width, 1, out_activation)
        } else {
            DenseParams::init(width, 1, out_activation, rng)
        };
        Self { hidden, out, dropout }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.out).input_dim()
    }

    /// Returns the activated scalar output per sample.
    pub fn forward(&self, x: &Matrix, mode: DropoutMode, rng: &mut impl Rng) -> Result<(Vec<f64>, HeadCache), NnError> {
        let mut masks = Vec::with_capacity(self.hidden.len());
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut cur = x.clone();
        for layer in &self.hidden {
            let (d, m) = dropout(&cur, self.dropout, mode, rng)?;
            let (y, c) = layer.forward(&d)?;
            masks.push(m);
            caches.push(c);
            cur = y;
        }
        let (y, out) = self.out.forward(&cur)?;
        Ok((
            y.into_vec(),
            HeadCache {
                masks,
                hidden: caches,
                out,
            },
        ))
    }

    /// Gradients given `∂L/∂z` of the output pre-activation.
    pub fn backward_pre(&self, cache: &HeadCache, grad_z: &[f64]) -> Result<(Head, Matrix), NnError> {
        if cache.hidden.len() != self.hidden.len() {
            return Err(NnError::StaleCache("head depth"));
        }
        let dz = Matrix::from_vec(grad_z.len(), 1, grad_z.to_vec());
        let (out, mut g) = self.out.backward_pre(&cache.out, &dz)?;
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (k, layer) in self.hidden.iter().enumerate().rev() {
            let (gl, dx) = layer.backward(&cache.hidden[k], &g)?;
            hidden.push(gl);
            g = dx;
            for (v, m) in g.as_mut_slice().iter_mut().zip(cache.masks[k].as_slice()) {
                *v *= m;
            }
        }
        hidden.reverse();
        Ok((
            Head {
                hidden,
                out,
                dropout: self.dropout,
            },
            g,
        ))
    }

    /// Gradients given `∂L/∂y` of the activated output.
    pub fn backward(&self, cache: &HeadCache, grad_y: &[f64]) -> Result<(Head, Matrix), NnError> {
        let act = self.out.activation;
        let dz: Vec<f64> = grad_y
            .iter()
            .zip(cache.out.output().as_slice())
            .map(|(g, &y)| g * act.derivative_from_output(y))
            .collect();
        self.backward_pre(cache, &dz)
    }
}

impl Parameters for Head {
    fn tensors(&self, prefix: &str) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        for (k, l) in self.hidden.iter().enumerate() {
            out.extend(l.tensors(&format!("{prefix}hidden.{k}.")));
        }
        out.extend(self.out.tensors(&format!("{prefix}out.")));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.hidden {
            out.extend(l.tensors_mut());
        }
        out.extend(self.out.tensors_mut());
        out
    }
}
