//! Fully connected autoencoder with forward-mode tangents and hand-written
//! reverse-mode gradients.
//!
//! Every layer is evaluated on a primal batch and a tangent batch at the same
//! time (`y = s(W a + b)`, `t' = s'(W a + b) * (W t)`), which gives the
//! Jacobian-vector products `z_dot = grad phi_e(u) u_dot` and
//! `u_hat_dot = grad phi_d(z) z_dot` needed by the dynamics losses. The
//! backward pass differentiates through both streams, including the
//! second derivative of the activation that the tangent stream picks up.

mod adam;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss_and_gradients, Batch, Gradients, LossBreakdown, LossWeights};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// First and second derivative expressed through the output `y = s(x)`.
    #[inline]
    fn derivs(self, y: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let d = 1.0 - y * y;
                (d, -2.0 * y * d)
            }
            Activation::Sigmoid => {
                let d = y * (1.0 - y);
                (d, d * (1.0 - 2.0 * y))
            }
            Activation::Linear => (1.0, 0.0),
        }
    }
}

/// Encoder widths (input first, latent last) and one activation per encoder
/// layer. The decoder mirrors both.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl LayerSpec {
    /// `activation` on hidden layers, linear embedding layer.
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut activations = vec![activation; n];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Linear;
        }
        let spec = Self {
            widths,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need at least two positive widths, got {:?}",
                self.widths
            )));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} layers but {} activations",
                self.widths.len() - 1,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn decoder_activations(&self) -> Vec<Activation> {
        let n = self.activations.len();
        (0..n)
            .map(|j| {
                if j + 1 == n {
                    self.activations[n - 1]
                } else {
                    self.activations[n - 2 - j]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`, standard layout.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Gradient buffers for one [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer values recorded by [`Mlp::forward_dual`].
pub(crate) struct DualTape {
    /// Layer inputs `a_{l-1}`; the final output is `outputs`.
    inputs: Vec<Array2<f64>>,
    tangents_in: Vec<Array2<f64>>,
    /// `W t_{l-1}` before the activation derivative.
    tangent_pre: Vec<Array2<f64>>,
    /// Layer outputs `s(q_l)`.
    outputs: Vec<Array2<f64>>,
    tangents_out: Vec<Array2<f64>>,
}

impl DualTape {
    pub(crate) fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap()
    }

    pub(crate) fn tangent(&self) -> &Array2<f64> {
        self.tangents_out.last().unwrap()
    }
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    fn affine(layer: &Dense, x: ArrayView2<f64>) -> Array2<f64> {
        let mut q = layer.weight.dot(&x);
        q += &layer.bias.view().insert_axis(Axis(1));
        q
    }

    /// Forward pass on a batch of column vectors.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut q = Self::affine(layer, a.view());
            let act = layer.activation;
            if act != Activation::Linear {
                q.mapv_inplace(|v| act.apply(v));
            }
            a = q;
        }
        a
    }

    /// Forward pass plus directional derivative along `t` (column-wise).
    pub fn forward_tangent(
        &self,
        x: ArrayView2<f64>,
        t: ArrayView2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let tape = self.forward_dual(x, t);
        let DualTape {
            mut outputs,
            mut tangents_out,
            ..
        } = tape;
        (outputs.pop().unwrap(), tangents_out.pop().unwrap())
    }

    pub(crate) fn forward_dual(&self, x: ArrayView2<f64>, t: ArrayView2<f64>) -> DualTape {
        let n = self.layers.len();
        let mut tape = DualTape {
            inputs: Vec::with_capacity(n),
            tangents_in: Vec::with_capacity(n),
            tangent_pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            tangents_out: Vec::with_capacity(n),
        };
        let mut a = x.to_owned();
        let mut ta = t.to_owned();
        for layer in &self.layers {
            let mut y = Self::affine(layer, a.view());
            let m = layer.weight.dot(&ta);
            let act = layer.activation;
            let tout = if act == Activation::Linear {
                m.clone()
            } else {
                y.mapv_inplace(|v| act.apply(v));
                let mut tout = m.clone();
                Zip::from(&mut tout)
                    .and(&y)
                    .for_each(|o, &yv| *o *= act.derivs(yv).0);
                tout
            };
            tape.inputs.push(a);
            tape.tangents_in.push(ta);
            tape.tangent_pre.push(m);
            a = y.clone();
            ta = tout.clone();
            tape.outputs.push(y);
            tape.tangents_out.push(tout);
        }
        tape
    }

    pub(crate) fn zero_grads(&self) -> Vec<DenseGrad> {
        self.layers
            .iter()
            .map(|l| DenseGrad {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect()
    }

    /// Reverse pass through [`Mlp::forward_dual`]. `g_out`/`g_tan` are the
    /// adjoints of the output and output tangent; gradients accumulate into
    /// `grads`. Returns the input and input-tangent adjoints when asked.
    pub(crate) fn backward_dual(
        &self,
        tape: &DualTape,
        g_out: Array2<f64>,
        g_tan: Array2<f64>,
        grads: &mut [DenseGrad],
        want_input: bool,
    ) -> Option<(Array2<f64>, Array2<f64>)> {
        let mut gy = g_out;
        let mut gt = g_tan;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = layer.activation;
            let (gq, gm) = if act == Activation::Linear {
                (gy, gt)
            } else {
                let mut gq = gy;
                let mut gm = gt;
                Zip::from(&mut gq)
                    .and(&mut gm)
                    .and(&tape.outputs[l])
                    .and(&tape.tangent_pre[l])
                    .for_each(|gq, gm, &y, &m| {
                        let (d1, d2) = act.derivs(y);
                        let gtv = *gm;
                        *gq = *gq * d1 + gtv * m * d2;
                        *gm = gtv * d1;
                    });
                (gq, gm)
            };
            let g = &mut grads[l];
            general_mat_mul(1.0, &gq, &tape.inputs[l].t(), 1.0, &mut g.weight);
            general_mat_mul(1.0, &gm, &tape.tangents_in[l].t(), 1.0, &mut g.weight);
            g.bias += &gq.sum_axis(Axis(1));
            if l == 0 && !want_input {
                return None;
            }
            gy = layer.weight.t().dot(&gq);
            gt = layer.weight.t().dot(&gm);
        }
        Some((gy, gt))
    }
}

/// Encoder and decoder parameters (`theta_enc`, `theta_dec`).
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub spec: LayerSpec,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl Autoencoder {
    /// Glorot-uniform weights and zero biases from a seeded stream.
    pub fn init(spec: &LayerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |widths: &[usize], acts: &[Activation]| Mlp {
            layers: widths
                .windows(2)
                .zip(acts)
                .map(|(w, &activation)| {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                    Dense {
                        weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                            dist.sample(&mut rng)
                        }),
                        bias: Array1::zeros(fan_out),
                        activation,
                    }
                })
                .collect(),
        };
        let encoder = make(&spec.widths, &spec.activations);
        let dec_widths: Vec<usize> = spec.widths.iter().rev().copied().collect();
        let decoder = make(&dec_widths, &spec.decoder_activations());
        Ok(Self {
            spec: spec.clone(),
            encoder,
            decoder,
        })
    }

    /// Builds from explicit layers; shapes are checked against `spec`.
    pub fn from_parts(spec: LayerSpec, encoder: Mlp, decoder: Mlp) -> Result<Self> {
        spec.validate()?;
        let dec_widths: Vec<usize> = spec.widths.iter().rev().copied().collect();
        let check = |mlp: &Mlp, widths: &[usize], acts: &[Activation]| -> Result<()> {
            if mlp.layers.len() != widths.len() - 1 {
                return Err(Error::shape(widths.len() - 1, mlp.layers.len()));
            }
            for ((layer, w), &act) in mlp.layers.iter().zip(widths.windows(2)).zip(acts) {
                if layer.weight.dim() != (w[1], w[0])
                    || layer.bias.len() != w[1]
                    || layer.activation != act
                {
                    return Err(Error::shape(
                        format!("{}x{} layer ({act:?})", w[1], w[0]),
                        format!("{:?} ({:?})", layer.weight.dim(), layer.activation),
                    ));
                }
            }
            Ok(())
        };
        check(&encoder, &spec.widths, &spec.activations)?;
        check(&decoder, &dec_widths, &spec.decoder_activations())?;
        Ok(Self {
            spec,
            encoder,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    fn check_len(expected: usize, got: usize) -> Result<()> {
        if expected != got {
            return Err(Error::shape(format!("vector of length {expected}"), got));
        }
        Ok(())
    }

    fn check_rows(expected: usize, m: ArrayView2<f64>) -> Result<()> {
        if m.nrows() != expected {
            return Err(Error::shape(format!("{expected} rows"), m.nrows()));
        }
        Ok(())
    }

    pub fn encode(&self, u: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.input_dim(), u.len())?;
        Ok(self
            .encoder
            .forward(u.insert_axis(Axis(1)))
            .remove_axis(Axis(1)))
    }

    pub fn decode(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.latent_dim(), z.len())?;
        Ok(self
            .decoder
            .forward(z.insert_axis(Axis(1)))
            .remove_axis(Axis(1)))
    }

    /// Encodes every column of `u`.
    pub fn encode_batch(&self, u: ArrayView2<f64>) -> Result<Array2<f64>> {
        Self::check_rows(self.input_dim(), u)?;
        Ok(self.encoder.forward(u))
    }

    /// Decodes every column of `z`.
    pub fn decode_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        Self::check_rows(self.latent_dim(), z)?;
        Ok(self.decoder.forward(z))
    }

    /// `grad phi_e(u) u_dot`.
    pub fn encoder_jvp(&self, u: ArrayView1<f64>, u_dot: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.input_dim(), u.len())?;
        Self::check_len(self.input_dim(), u_dot.len())?;
        let (_, t) = self
            .encoder
            .forward_tangent(u.insert_axis(Axis(1)), u_dot.insert_axis(Axis(1)));
        Ok(t.remove_axis(Axis(1)))
    }

    /// `grad phi_d(z) z_dot`.
    pub fn decoder_jvp(&self, z: ArrayView1<f64>, z_dot: ArrayView1<f64>) -> Result<Array1<f64>> {
        Self::check_len(self.latent_dim(), z.len())?;
        Self::check_len(self.latent_dim(), z_dot.len())?;
        let (_, t) = self
            .decoder
            .forward_tangent(z.insert_axis(Axis(1)), z_dot.insert_axis(Axis(1)));
        Ok(t.remove_axis(Axis(1)))
    }

    /// All parameter tensors in declaration order: encoder layers (weight,
    /// bias), then decoder layers.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.encoder
            .layers
            .iter()
            .chain(&self.decoder.layers)
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .layers
            .iter_mut()
            .chain(self.decoder.layers.iter_mut())
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
