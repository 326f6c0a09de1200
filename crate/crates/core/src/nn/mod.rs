//! A small fixed-algebra network stack: dense layers with LeakyReLU or
//! identity activations, batched forward passes that record a trace, and
//! exact reverse-mode gradients through that trace.

mod adam;
mod linear;
mod spectral;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{gemm, Matrix, Op};
use crate::rng::standard_normal;

pub use adam::{AdamConfig, AdamState};
pub use linear::LinearOperator;
pub use spectral::{
    spectral_norm, spectral_norm_from, spectral_penalty, spectral_penalty_from_norm, spectral_penalty_grad, SpectralNorm,
    SpectralPenalty, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", content = "slope", rename_all = "snake_case"))]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dense {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Network {
    layers: Vec<Dense>,
}

/// Activations cached by [`Network::forward_traced`].
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

/// Per-parameter gradient arrays, ordered `[W₀, b₀, W₁, b₁, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| *v == 0.0))
    }

    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.tensors.iter().map(|t| t.as_slice()).collect()
    }
}

impl Network {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for l in &layers {
            ensure_dim("layer bias", l.out_dim(), l.bias.len())?;
        }
        for w in layers.windows(2) {
            ensure_dim("layer chain", w[0].out_dim(), w[1].in_dim())?;
        }
        Ok(Self { layers })
    }

    /// He-normal weights (std `√(2/fan_in)`), zero biases. Hidden layers use
    /// `hidden`, the output layer is linear.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("network dims need >= 2 positive entries".into()));
        }
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let std = libm::sqrt(2.0 / fan_in as f64);
                let data = (0..fan_in * fan_out).map(|_| std * standard_normal(rng)).collect();
                Dense {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("shape"),
                    bias: vec![0.0; fan_out],
                    activation: if l + 1 == n_layers {
                        Activation::Identity
                    } else {
                        hidden
                    },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer widths `[in, h₁, …, out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::out_dim));
        d
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("network input", self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            let mut z = l.weight.matvec(&h)?;
            for (v, b) in z.iter_mut().zip(&l.bias) {
                *v = l.activation.apply(*v + b);
            }
            h = z;
        }
        Ok(h)
    }

    /// Row-wise evaluation of a `B × in` batch.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        ensure_dim("network input", self.input_dim(), x.cols())?;
        let mut h = x.clone();
        for l in &self.layers {
            let mut z = affine(&h, l)?;
            z.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = l.activation.apply(*v));
            h = z;
        }
        Ok(h)
    }

    pub fn forward_traced(&self, x: &Matrix) -> Result<(Matrix, Trace)> {
        ensure_dim("network input", self.input_dim(), x.cols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let z = affine(&h, l)?;
            let mut a = z.clone();
            a.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = l.activation.apply(*v));
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((
            h,
            Trace {
                inputs,
                pre_activations: pre,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output` and returns
    /// `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, grad_out: &Matrix, grads: &mut Gradients) -> Result<Matrix> {
        if trace.inputs.len() != self.layers.len()
            || trace.pre_activations.len() != self.layers.len()
            || grads.tensors.len() != 2 * self.layers.len()
        {
            return Err(Error::MissingTrace);
        }
        let batch = trace.inputs[0].rows();
        ensure_dim("upstream gradient rows", batch, grad_out.rows())?;
        ensure_dim("upstream gradient cols", self.output_dim(), grad_out.cols())?;
        let mut delta = grad_out.clone();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre_activations[idx];
            let input = &trace.inputs[idx];
            if z.shape() != (batch, l.out_dim()) || input.shape() != (batch, l.in_dim()) {
                return Err(Error::MissingTrace);
            }
            if l.activation != Activation::Identity {
                for (d, zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d *= l.activation.derivative(*zv);
                }
            }
            // dW += δᵀ X
            let mut gw = Matrix::from_vec(l.out_dim(), l.in_dim(), core::mem::take(&mut grads.tensors[2 * idx]))?;
            gemm(1.0, &delta, Op::T, input, Op::N, 1.0, &mut gw)?;
            grads.tensors[2 * idx] = gw.into_vec();
            let gb = &mut grads.tensors[2 * idx + 1];
            for r in delta.row_iter() {
                for (g, v) in gb.iter_mut().zip(r) {
                    *g += v;
                }
            }
            delta = delta.mul(Op::N, &l.weight, Op::N)?;
        }
        Ok(delta)
    }
}

fn affine(x: &Matrix, l: &Dense) -> Result<Matrix> {
    let mut z = x.mul(Op::N, &l.weight, Op::T)?;
    z.add_row_vector(&l.bias)?;
    Ok(z)
}
