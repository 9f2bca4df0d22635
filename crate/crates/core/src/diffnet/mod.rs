//! Small dense networks with explicit reverse-mode gradients.
//!
//! A [`DiffNet`] is a chain of affine layers with a tanh or relu
//! nonlinearity between them and a typed output head. Gradients are computed
//! by replaying a [`Tape`] recorded during the forward pass, which yields the
//! parameter gradient and the input gradient in one sweep.
//!
//! Parameters are addressed through a single flat layout: for every layer the
//! row-major weight matrix followed by the bias, then (for the gaussian head)
//! the state-independent log standard deviations.

mod dist;
mod loss;
mod optim;

pub use dist::{argmax, kl_divergence, softmax, ActionDistribution, CATEGORICAL_LOG_FLOOR};
pub use loss::Loss;
pub use optim::{Anneal, Method, Optimizer, OptimizerConfig};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::Rng;

/// Initial standard deviation of the gaussian head.
pub const INITIAL_STD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Linear,
    CategoricalLogits,
    DiagonalGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffNet {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    head: Head,
    layers: Vec<Layer>,
    #[serde(default)]
    log_std: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input fed to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Parameter and input gradients of a scalar loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl DiffNet {
    /// All-zero network. `activation` is used between every pair of layers.
    pub fn zeros(layer_sizes: &[usize], activation: Activation, head: Head) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Contract(
                "a network needs at least two positive layer sizes".into(),
            ));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect::<Vec<_>>();
        let out = *layer_sizes.last().unwrap();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: vec![activation; layers.len() - 1],
            head,
            layers,
            log_std: match head {
                Head::DiagonalGaussian => vec![INITIAL_STD.ln(); out],
                _ => Vec::new(),
            },
        })
    }

    /// Uniform Glorot initialisation with zero biases. The output layer is
    /// further scaled by `output_scale`.
    pub fn random(
        layer_sizes: &[usize],
        activation: Activation,
        head: Head,
        output_scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation, head)?;
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let limit = (6.0 / (layer.rows + layer.cols) as f64).sqrt();
            let scale = if l == last { output_scale } else { 1.0 };
            for w in layer.weights.iter_mut() {
                *w = scale * rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    /// A single square linear layer initialised to the identity.
    pub fn identity(dim: usize) -> Self {
        let mut net = Self::zeros(&[dim, dim], Activation::Tanh, Head::Linear)
            .expect("dim is positive");
        for i in 0..dim {
            net.layers[0].weights[i * dim + i] = 1.0;
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum::<usize>() + self.log_std.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(&self.log_std);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("set_params", self.param_count(), params.len()));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        let ns = self.log_std.len();
        self.log_std.copy_from_slice(&params[at..at + ns]);
        Ok(())
    }

    /// Checks structural consistency, e.g. after deserialisation.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() != self.layers.len() + 1 {
            return Err(Error::Contract("layer count does not match sizes".into()));
        }
        if self.activations.len() + 1 != self.layers.len() {
            return Err(Error::Contract(
                "expected one activation per hidden layer".into(),
            ));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.cols != self.layer_sizes[l]
                || layer.rows != self.layer_sizes[l + 1]
                || layer.weights.len() != layer.rows * layer.cols
                || layer.bias.len() != layer.rows
            {
                return Err(Error::Contract(format!("layer {l} has inconsistent shape")));
            }
        }
        let want_std = match self.head {
            Head::DiagonalGaussian => self.output_dim(),
            _ => 0,
        };
        if self.log_std.len() != want_std {
            return Err(Error::dim("log_std", want_std, self.log_std.len()));
        }
        ensure_finite(&self.params(), || "network parameters".into())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), input.len()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.apply(&x);
            if let Some(act) = self.activations.get(l) {
                activate(*act, &mut x);
            }
        }
        Ok(x)
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.activations.len());
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&x);
            inputs.push(x);
            x = match self.activations.get(l) {
                Some(act) => {
                    let mut a = z.clone();
                    activate(*act, &mut a);
                    pre.push(z);
                    a
                }
                None => z,
            };
        }
        Ok(Tape {
            inputs,
            pre,
            output: x,
        })
    }

    /// Output distribution for policy heads.
    pub fn distribution_of(&self, output: &[f64]) -> Result<ActionDistribution> {
        distribution_from(self.head, &self.log_std, output)
    }

    pub fn distribution(&self, input: &[f64]) -> Result<ActionDistribution> {
        let out = self.forward(input)?;
        self.distribution_of(&out)
    }

    /// Back-propagates `d_output` (and, for the gaussian head, `d_log_std`)
    /// through a recorded tape. Parameter gradients are skipped when
    /// `with_params` is false.
    pub fn backward(
        &self,
        tape: &Tape,
        d_output: &[f64],
        d_log_std: Option<&[f64]>,
        with_params: bool,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut grad = if with_params {
            vec![0.0; self.param_count()]
        } else {
            Vec::new()
        };
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for layer in &self.layers {
            offsets.push(at);
            at += layer.param_count();
        }
        if with_params {
            if let Some(ds) = d_log_std {
                grad[at..at + ds.len()].copy_from_slice(ds);
            }
        }

        let mut delta = d_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &tape.inputs[l];
            if with_params {
                let base = offsets[l];
                for r in 0..layer.rows {
                    let d = delta[r];
                    if d != 0.0 {
                        let row = &mut grad[base + r * layer.cols..base + (r + 1) * layer.cols];
                        for (g, x) in row.iter_mut().zip(input) {
                            *g += d * x;
                        }
                    }
                }
                let bias_at = base + layer.weights.len();
                for r in 0..layer.rows {
                    grad[bias_at + r] += delta[r];
                }
            }
            let mut d_in = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let d = delta[r];
                if d != 0.0 {
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (di, w) in d_in.iter_mut().zip(row) {
                        *di += d * w;
                    }
                }
            }
            if l > 0 {
                let act = self.activations[l - 1];
                let z = &tape.pre[l - 1];
                for (j, di) in d_in.iter_mut().enumerate() {
                    *di *= match act {
                        Activation::Tanh => 1.0 - input[j] * input[j],
                        Activation::Relu => {
                            if z[j] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
            delta = d_in;
        }
        (grad, delta)
    }

    /// Loss value with parameter and input gradients.
    pub fn gradients(&self, input: &[f64], loss: &Loss) -> Result<Gradients> {
        self.gradients_inner(input, loss, true)
    }

    pub fn param_gradient(&self, input: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)> {
        let g = self.gradients_inner(input, loss, true)?;
        Ok((g.loss, g.params))
    }

    pub fn input_gradient(&self, input: &[f64], loss: &Loss) -> Result<(f64, Vec<f64>)> {
        let g = self.gradients_inner(input, loss, false)?;
        Ok((g.loss, g.input))
    }

    /// Loss value only.
    pub fn loss(&self, input: &[f64], loss: &Loss) -> Result<f64> {
        let out = self.forward(input)?;
        let (value, _, _) = loss.evaluate(self, &out)?;
        Ok(value)
    }

    fn gradients_inner(&self, input: &[f64], loss: &Loss, with_params: bool) -> Result<Gradients> {
        let tape = self.forward_tape(input)?;
        let (value, d_out, d_log_std) = loss.evaluate(self, &tape.output)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss:?} at input {input:?}")));
        }
        let (params, input_grad) = self.backward(&tape, &d_out, d_log_std.as_deref(), with_params);
        ensure_finite(&params, || "parameter gradient".into())?;
        ensure_finite(&input_grad, || "input gradient".into())?;
        Ok(Gradients {
            loss: value,
            params,
            input: input_grad,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: DiffNet = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }
}

pub fn distribution_from(head: Head, log_std: &[f64], output: &[f64]) -> Result<ActionDistribution> {
    match head {
        Head::CategoricalLogits => Ok(ActionDistribution::Categorical(softmax(output))),
        Head::DiagonalGaussian => Ok(ActionDistribution::Gaussian {
            mean: output.to_vec(),
            std: log_std.iter().map(|s| s.exp()).collect(),
        }),
        Head::Linear => Err(Error::KindMismatch(
            "a linear head does not define an action distribution".into(),
        )),
    }
}

fn activate(act: Activation, x: &mut [f64]) {
    match act {
        Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
    }
}

/// A network together with its optimiser state, as written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub net: DiffNet,
    pub optimizer: Option<Optimizer>,
}
