//! Fully connected classifiers and generators.
//!
//! Weights are stored `[fan_in, fan_out]`, so a layer computes
//! `x * W + b` on a `[batch, fan_in]` input.

mod optim;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use optim::{OptimizerAlgorithm, OptimizerConfig, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::autodiff::{eval_primitive, Primitive, Tape, Tensor, Var};
use crate::data_io::rng::SeedTree;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Softmax over the last layer; rows are probability vectors.
    Softmax,
    /// `(tanh(z) + 1) / 2`, every output in `[0, 1]`.
    UnitInterval,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub head: Head,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, head: Head) -> Result<Self> {
        let spec = NetworkSpec { widths, hidden, head };
        spec.validate()?;
        Ok(spec)
    }

    pub fn classifier(widths: &[usize]) -> Result<Self> {
        Self::new(widths.to_vec(), Activation::Relu, Head::Softmax)
    }

    /// Tanh hidden layers: zero-centred activations keep the initial
    /// outputs spread around the middle of the unit box.
    pub fn generator(widths: &[usize]) -> Result<Self> {
        Self::new(widths.to_vec(), Activation::Tanh, Head::UnitInterval)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least 2 widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("zero width in {:?}", self.widths)));
        }
        if self.head == Head::Softmax && self.output_dim() < 2 {
            return Err(Error::Config("classifier needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

impl fmt::Display for NetworkSpec {
    /// `classifier:relu:2,16,3`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.head {
            Head::Softmax => "classifier",
            Head::UnitInterval => "generator",
        };
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(f, "{head}:{}:{}", self.hidden, widths.join(","))
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [head, act, widths] = parts.as_slice() else {
            return Err(Error::Config(format!("bad network description `{s}`")));
        };
        let head = match *head {
            "classifier" => Head::Softmax,
            "generator" => Head::UnitInterval,
            other => return Err(Error::InvalidKind(other.to_string())),
        };
        NetworkSpec::new(parse_widths(widths)?, act.parse()?, head)
    }
}

/// Parses `2,16,3`.
pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer width `{w}` in `{s}`")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Trainable weights of one network, indexed by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    layers: Vec<Layer>,
}

/// Tape handles for a bound [`Parameters`] set.
#[derive(Clone, Debug)]
pub struct BoundParams {
    layers: Vec<(Var, Var)>,
}

impl Parameters {
    pub fn from_layers(spec: &NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::Config(format!("{} layers given for spec {spec}", layers.len())));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
            if layer.weight.shape() != [fan_in, fan_out] || layer.bias.shape() != [fan_out] {
                return Err(Error::Shape {
                    op: "parameters",
                    lhs: vec![fan_in, fan_out],
                    rhs: layer.weight.shape().to_vec(),
                });
            }
        }
        Ok(Parameters { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Parameter tensors in a fixed order: weight then bias of each layer.
    pub fn tensors(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| {
            [
                (format!("layer{i}.weight"), &l.weight),
                (format!("layer{i}.bias"), &l.bias),
            ]
        })
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        self.layers.iter_mut().enumerate().flat_map(|(i, l)| {
            [
                (format!("layer{i}.weight"), &mut l.weight),
                (format!("layer{i}.bias"), &mut l.bias),
            ]
        })
    }

    pub fn num_values(&self) -> usize {
        self.tensors().map(|(_, t)| t.numel()).sum()
    }

    pub fn bit_eq(&self, other: &Parameters) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.bit_eq(&b.weight) && a.bias.bit_eq(&b.bias))
    }

    pub fn max_abs_diff(&self, other: &Parameters) -> f64 {
        self.tensors()
            .zip(other.tensors())
            .flat_map(|((_, a), (_, b))| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Records the parameters on a tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.detached())
            } else {
                tape.constant(t.detached())
            }
        };
        let layers = self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        BoundParams { layers }
    }

    /// Copies gradients of a completed backward pass into the `grad` slots.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &BoundParams) -> Result<()> {
        for (i, (layer, &(w, b))) in self.layers.iter_mut().zip(&bound.layers).enumerate() {
            let gw = tape
                .grad(w)
                .ok_or_else(|| Error::MissingGradient(format!("layer{i}.weight")))?;
            layer.weight.set_grad(gw.to_vec())?;
            let gb = tape
                .grad(b)
                .ok_or_else(|| Error::MissingGradient(format!("layer{i}.bias")))?;
            layer.bias.set_grad(gb.to_vec())?;
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Parameters {
    let tree = SeedTree::new(seed);
    let layers = (0..spec.num_layers())
        .map(|i| {
            let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
            let bound = glorot_bound(fan_in, fan_out);
            let mut rng = tree.stream("init", i as u64);
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            Layer {
                weight: Tensor::from_parts(vec![fan_in, fan_out], data),
                bias: Tensor::zeros(vec![fan_out]),
            }
        })
        .collect();
    Parameters { layers }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Forward pass on a tape. `input` is `[batch, input_dim]`.
pub fn forward(spec: &NetworkSpec, tape: &mut Tape, params: &BoundParams, input: Var) -> Result<Var> {
    check_input(spec, tape.value(input))?;
    let mut h = input;
    let last = params.layers.len() - 1;
    for (i, &(w, b)) in params.layers.iter().enumerate() {
        h = tape.matmul(h, w)?;
        h = tape.add_row(h, b)?;
        h = if i < last {
            match spec.hidden {
                Activation::Relu => tape.relu(h)?,
                Activation::Tanh => tape.tanh(h)?,
            }
        } else {
            match spec.head {
                Head::Softmax => tape.softmax(h)?,
                Head::UnitInterval => {
                    let t = tape.tanh(h)?;
                    tape.affine(t, 0.5, 0.5)?
                }
            }
        };
    }
    Ok(h)
}

fn check_input(spec: &NetworkSpec, input: &Tensor) -> Result<()> {
    if input.rank() != 2 || input.cols() != spec.input_dim() {
        return Err(Error::Shape {
            op: "forward",
            lhs: vec![input.rows(), spec.input_dim()],
            rhs: input.shape().to_vec(),
        });
    }
    Ok(())
}

const PREDICT_CHUNK: usize = 256;

/// Tape-free forward pass; bit-identical to [`forward`].
pub fn predict(spec: &NetworkSpec, params: &Parameters, input: &Tensor) -> Result<Tensor> {
    check_input(spec, input)?;
    let rows = input.rows();
    if rows <= PREDICT_CHUNK {
        return predict_rows(spec, params, input);
    }
    let chunks = rows.div_ceil(PREDICT_CHUNK);
    let parts = exec::try_map_indexed(chunks, |c| {
        let idx: Vec<usize> = (c * PREDICT_CHUNK..((c + 1) * PREDICT_CHUNK).min(rows)).collect();
        predict_rows(spec, params, &input.select_rows(&idx))
    })?;
    let cols = spec.output_dim();
    let data = parts.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Tensor::from_parts(vec![rows, cols], data))
}

fn predict_rows(spec: &NetworkSpec, params: &Parameters, input: &Tensor) -> Result<Tensor> {
    let mut h = input.detached();
    let last = params.layers.len() - 1;
    let apply = |op: Primitive, xs: &[&Tensor]| eval_primitive(op, xs).map(|(t, _)| t);
    for (i, layer) in params.layers.iter().enumerate() {
        h = apply(Primitive::MatMul, &[&h, &layer.weight])?;
        h = apply(Primitive::AddRow, &[&h, &layer.bias])?;
        h = if i < last {
            match spec.hidden {
                Activation::Relu => apply(Primitive::Relu, &[&h])?,
                Activation::Tanh => apply(Primitive::Tanh, &[&h])?,
            }
        } else {
            match spec.head {
                Head::Softmax => apply(Primitive::Softmax, &[&h])?,
                Head::UnitInterval => {
                    let t = apply(Primitive::Tanh, &[&h])?;
                    apply(Primitive::Affine { scale: 0.5, shift: 0.5 }, &[&t])?
                }
            }
        };
    }
    Ok(h)
}

/// Class probabilities `[batch, classes]`.
pub fn classifier_forward(spec: &NetworkSpec, params: &Parameters, batch: &Tensor) -> Result<Tensor> {
    if spec.head != Head::Softmax {
        return Err(Error::Config(format!("{spec} is not a classifier")));
    }
    predict(spec, params, batch)
}

/// Synthetic examples `[batch, output_dim]` in `[0, 1]`.
pub fn generator_forward(spec: &NetworkSpec, params: &Parameters, noise: &Tensor) -> Result<Tensor> {
    if spec.head != Head::UnitInterval {
        return Err(Error::Config(format!("{spec} is not a generator")));
    }
    predict(spec, params, noise)
}

/// Predicted class per row (smallest index on ties).
pub fn predict_labels(spec: &NetworkSpec, params: &Parameters, batch: &Tensor) -> Result<Vec<usize>> {
    let probs = classifier_forward(spec, params, batch)?;
    Ok(probs.row_iter().map(crate::autodiff::argmax).collect())
}
