use ndarray::{linalg::general_mat_mul, Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::serde_arrays;
use super::{check_input, Network, Parameters};
use crate::error::{Error, Result};

/// Weight initialization. Biases always start at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform,
    /// Kaiming-uniform bound multiplied by the given gain.
    ScaledKaiming(f64),
    Zeros,
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through a rectified-linear unit, given its pre-activation.
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    Zip::from(&mut out).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

/// Fully connected layer `y = W x + b`, with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    #[serde(with = "serde_arrays::matrix")]
    pub weight: Array2<f64>,
    #[serde(with = "serde_arrays::vector")]
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, init: Init, rng: &mut R) -> Self {
        let bound = if input == 0 { 0.0 } else { (6.0 / input as f64).sqrt() };
        let bound = match init {
            Init::KaimingUniform => bound,
            Init::ScaledKaiming(g) => bound * g,
            Init::Zeros => 0.0,
        };
        let weight = if bound > 0.0 {
            Array2::from_shape_fn((output, input), |_| rng.gen_range(-bound..bound))
        } else {
            Array2::zeros((output, input))
        };
        Self {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Array2::eye(n),
            bias: Array1::zeros(n),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.output_dim()));
        if self.input_dim() > 0 {
            general_mat_mul(1.0, x, &self.weight.t(), 0.0, &mut y);
        }
        y += &self.bias;
        y
    }

    /// Backward pass given the layer input `x`.
    pub fn backward_from(&self, x: &Array2<f64>, dy: &Array2<f64>, grads: Option<&mut Dense>) -> Array2<f64> {
        if let Some(g) = grads {
            if self.input_dim() > 0 {
                general_mat_mul(1.0, &dy.t(), x, 1.0, &mut g.weight);
            }
            g.bias += &dy.sum_axis(Axis(0));
        }
        let mut dx = Array2::zeros((dy.nrows(), self.input_dim()));
        if self.input_dim() > 0 {
            general_mat_mul(1.0, dy, &self.weight, 0.0, &mut dx);
        }
        dx
    }
}

impl Parameters for Dense {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.weight.as_slice().expect("standard layout"));
        f(self.bias.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weight.as_slice_mut().expect("standard layout"));
        f(self.bias.as_slice_mut().expect("standard layout"));
    }
}

/// `y = x + relu(W2 relu(W1 x + b1) + b2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub first: Dense,
    pub second: Dense,
}

#[derive(Clone, Debug)]
pub struct ResidualTape {
    x: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    pre2: Array2<f64>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(width: usize, init: Init, rng: &mut R) -> Self {
        Self {
            first: Dense::new(width, width, init, rng),
            second: Dense::new(width, width, init, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.first.input_dim()
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, ResidualTape) {
        let pre1 = self.first.apply(x);
        let h1 = relu(&pre1);
        let pre2 = self.second.apply(&h1);
        let y = x + &relu(&pre2);
        (
            y,
            ResidualTape {
                x: x.clone(),
                pre1,
                h1,
                pre2,
            },
        )
    }

    pub fn backward(&self, tape: &ResidualTape, dy: &Array2<f64>, grads: Option<&mut ResidualBlock>) -> Array2<f64> {
        let (g1, g2) = match grads {
            Some(g) => (Some(&mut g.first), Some(&mut g.second)),
            None => (None, None),
        };
        let d_pre2 = relu_backward(&tape.pre2, dy);
        let d_h1 = self.second.backward_from(&tape.h1, &d_pre2, g2);
        let d_pre1 = relu_backward(&tape.pre1, &d_h1);
        dy + &self.first.backward_from(&tape.x, &d_pre1, g1)
    }
}

impl Parameters for ResidualBlock {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.first.visit(f);
        self.second.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.first.visit_mut(f);
        self.second.visit_mut(f);
    }
}

/// Plain perceptron: dense layers with rectified-linear units between them
/// and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug)]
pub struct MlpTape {
    fingerprint: u64,
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`. Hidden layers use `hidden_init`, the
    /// output layer `output_init`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], hidden_init: Init, output_init: Init, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(w[0], w[1], if i == last { output_init } else { hidden_init }, rng))
            .collect();
        Self { layers }
    }
}

impl Parameters for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

impl Network for Mlp {
    type Tape = MlpTape;

    fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpTape)> {
        check_input("mlp input", self.input_dim(), x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let a = layer.apply(&h);
            inputs.push(h);
            if i + 1 < self.layers.len() {
                h = relu(&a);
                pre.push(a);
            } else {
                h = a;
            }
        }
        Ok((
            h,
            MlpTape {
                fingerprint: self.fingerprint(),
                inputs,
                pre,
            },
        ))
    }

    fn backward(&self, tape: &MlpTape, dy: &Array2<f64>, mut grads: Option<&mut Mlp>) -> Result<Array2<f64>> {
        if tape.inputs.len() != self.layers.len() || tape.fingerprint != self.fingerprint() {
            return Err(Error::StaleTape("mlp parameters changed since forward".into()));
        }
        check_input("mlp output gradient", self.output_dim(), dy)?;
        if dy.nrows() != tape.inputs[0].nrows() {
            return Err(Error::StaleTape("batch size differs from forward".into()));
        }
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                d = relu_backward(&tape.pre[i], &d);
            }
            let g = grads.as_deref_mut().map(|g| &mut g.layers[i]);
            d = self.layers[i].backward_from(&tape.inputs[i], &d, g);
        }
        Ok(d)
    }
}

/// Residual perceptron: `output(blocks(relu(input(x))))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResMlp {
    pub input: Dense,
    pub blocks: Vec<ResidualBlock>,
    pub output: Dense,
}

#[derive(Clone, Debug)]
pub struct ResMlpTape {
    fingerprint: u64,
    x: Array2<f64>,
    pre_in: Array2<f64>,
    blocks: Vec<ResidualTape>,
    last_hidden: Array2<f64>,
}

impl ResMlp {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        width: usize,
        blocks: usize,
        output: usize,
        hidden_init: Init,
        output_init: Init,
        rng: &mut R,
    ) -> Self {
        Self {
            input: Dense::new(input, width, hidden_init, rng),
            blocks: (0..blocks).map(|_| ResidualBlock::new(width, hidden_init, rng)).collect(),
            output: Dense::new(width, output, output_init, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.input.output_dim()
    }
}

impl Parameters for ResMlp {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.input.visit(f);
        self.blocks.iter().for_each(|b| b.visit(f));
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.input.visit_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
        self.output.visit_mut(f);
    }
}

impl Network for ResMlp {
    type Tape = ResMlpTape;

    fn input_dim(&self) -> usize {
        self.input.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ResMlpTape)> {
        check_input("residual mlp input", self.input_dim(), x)?;
        let pre_in = self.input.apply(x);
        let mut h = relu(&pre_in);
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, t) = b.forward(&h);
            tapes.push(t);
            h = y;
        }
        let y = self.output.apply(&h);
        Ok((
            y,
            ResMlpTape {
                fingerprint: self.fingerprint(),
                x: x.clone(),
                pre_in,
                blocks: tapes,
                last_hidden: h,
            },
        ))
    }

    fn backward(&self, tape: &ResMlpTape, dy: &Array2<f64>, grads: Option<&mut ResMlp>) -> Result<Array2<f64>> {
        if tape.blocks.len() != self.blocks.len() || tape.fingerprint != self.fingerprint() {
            return Err(Error::StaleTape("residual mlp parameters changed since forward".into()));
        }
        check_input("residual mlp output gradient", self.output_dim(), dy)?;
        if dy.nrows() != tape.x.nrows() {
            return Err(Error::StaleTape("batch size differs from forward".into()));
        }
        let (g_in, mut g_blocks, g_out) = match grads {
            Some(g) => (Some(&mut g.input), Some(&mut g.blocks), Some(&mut g.output)),
            None => (None, None, None),
        };
        let mut d = self.output.backward_from(&tape.last_hidden, dy, g_out);
        for i in (0..self.blocks.len()).rev() {
            let g = g_blocks.as_deref_mut().map(|gb| &mut gb[i]);
            d = self.blocks[i].backward(&tape.blocks[i], &d, g);
        }
        let d = relu_backward(&tape.pre_in, &d);
        Ok(self.input.backward_from(&tape.x, &d, g_in))
    }
}
