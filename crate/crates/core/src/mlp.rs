//! Dense multilayer perceptrons with batched forward and backward passes.
//!
//! One implementation serves the discriminator, the encoder, and the denoiser.
//! Batches are row-major matrices (one sample per row); backward returns both
//! parameter gradients and the gradient with respect to the input batch, so
//! networks can be chained.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::numerics::Matrix;
use crate::rng;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Format(format!("unknown activation tag {other:?}"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: `act(x · wᵀ + b)`, weight stored out×in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub act: Activation,
}

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
}

/// Per-layer activations kept from a forward pass for backprop.
pub struct ForwardCache {
    // activations[0] is the input batch, activations[L] the output.
    activations: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds the input at least")
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }
}

/// Gradients in the same shapes as [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: Matrix::zeros(l.w.rows(), l.w.cols()),
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    /// Accumulate `other` scaled by `c` into `self`.
    pub fn add_scaled(&mut self, other: &MlpGrads, c: f64) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.data_mut().iter_mut().zip(b.w.data()) {
                *x += c * y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += c * y;
            }
        }
    }

    /// Same layout as [`MlpParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }
}

impl MlpParams {
    /// He-initialized network: weights Normal(0, 2/fan_in), zero biases.
    pub fn he_init(sizes: &[usize], acts: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 {
            return Err(Error::DimensionMismatch(format!(
                "need n+1 sizes for n activations, got {} sizes and {} activations",
                sizes.len(),
                acts.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::DimensionMismatch("zero-width layer".into()));
        }
        let mut stream = rng::stream(seed);
        let layers = sizes
            .windows(2)
            .zip(acts)
            .map(|(pair, &act)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let data: Vec<f64> = (0..fan_out * fan_in)
                    .map(|_| std * stream.sample::<f64, _>(StandardNormal))
                    .collect();
                DenseLayer {
                    w: Matrix::new(fan_out, fan_in, data).expect("sized above"),
                    b: vec![0.0; fan_out],
                    act,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// All-zero parameters with the given architecture.
    pub fn zeros(sizes: &[usize], acts: &[Activation]) -> Result<Self> {
        let mut p = Self::he_init(sizes, acts, 0)?;
        for l in &mut p.layers {
            l.w.data_mut().fill(0.0);
        }
        Ok(p)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Builds a network from explicit layers, checking the dimension chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.b.len() != layer.w.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: bias length {} vs {} output rows",
                    layer.b.len(),
                    layer.w.rows()
                )));
            }
            if i > 0 && layer.w.cols() != layers[i - 1].w.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: input width {} vs previous output {}",
                    layer.w.cols(),
                    layers[i - 1].w.rows()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.cols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.rows())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data().len() + l.b.len())
            .sum()
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects input dim {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let mut z = activations.last().expect("nonempty").matmul_nt(&layer.w)?;
            for i in 0..z.rows() {
                let row = z.row_mut(i);
                for (v, &b) in row.iter_mut().zip(&layer.b) {
                    *v = layer.act.apply(*v + b);
                }
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Single-sample convenience wrapper around [`Self::forward`].
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = Matrix::new(1, x.len(), x.to_vec())?;
        Ok(self.forward(&batch)?.output().row(0).to_vec())
    }

    /// Backpropagate `d_out` (gradient of a scalar loss with respect to the
    /// output batch); returns parameter gradients and the input-batch gradient.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let out = cache.output();
        if d_out.rows() != out.rows() || d_out.cols() != out.cols() {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient {}x{} does not match output {}x{}",
                d_out.rows(),
                d_out.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut d = d_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &cache.activations[l + 1];
            let input = &cache.activations[l];
            // dz = d ⊙ act'(z), with act' read off the stored outputs.
            let mut dz = d;
            for (v, &av) in dz.data_mut().iter_mut().zip(a.data()) {
                *v *= layer.act.slope_at_output(av);
            }
            grads.layers[l].w = dz.matmul_tn(input)?;
            let db = &mut grads.layers[l].b;
            for i in 0..dz.rows() {
                for (acc, &v) in db.iter_mut().zip(dz.row(i)) {
                    *acc += v;
                }
            }
            d = dz.matmul(&layer.w)?;
        }
        Ok((grads, d))
    }

    /// Parameters as one flat vector: per layer, row-major weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Smallest |pre-activation| over all ReLU units when evaluating `x`;
    /// infinity if no ReLU unit exists. Finite-difference gradient checks are
    /// only valid when this clears the perturbation size.
    pub fn relu_kink_distance(&self, x: &Matrix) -> Result<f64> {
        let mut dist = f64::INFINITY;
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = a.matmul_nt(&layer.w)?;
            for i in 0..z.rows() {
                for (v, &b) in z.row_mut(i).iter_mut().zip(&layer.b) {
                    *v += b;
                    if layer.act == Activation::Relu {
                        dist = dist.min(v.abs());
                    }
                    *v = layer.act.apply(*v);
                }
            }
            a = z;
        }
        Ok(dist)
    }

    /// Inverse of [`Self::flatten`]; shapes must match exactly.
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let wlen = l.w.data().len();
            l.w.data_mut().copy_from_slice(&flat[offset..offset + wlen]);
            offset += wlen;
            let blen = l.b.len();
            l.b.copy_from_slice(&flat[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }
}
