use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Autoencoder, DenseGrad};
use crate::dynamics_id::BasisLibrary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 1e-2,
            beta2: 1e-2,
        }
    }
}

/// A minibatch of snapshot columns. `owner[c]` selects the coefficient
/// matrix that column `c` is trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub u: Array2<f64>,
    pub u_dot: Array2<f64>,
    pub owner: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub zdot: f64,
    pub udot: f64,
}

/// Gradients with the same layout as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<DenseGrad>,
    pub decoder: Vec<DenseGrad>,
    /// One entry per coefficient matrix; zero for owners absent from the batch.
    pub xi: Vec<Array2<f64>>,
}

impl Gradients {
    /// Tensors in the order of [`Autoencoder::tensors`] followed by `xi`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("contiguous"),
                ]
            })
            .collect();
        out.extend(
            self.xi
                .iter()
                .map(|x| x.as_slice().expect("standard layout")),
        );
        out
    }
}

fn sum_sq_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

/// Joint loss `L_recon + beta1 L_zdot + beta2 L_udot` of one batch and its
/// gradient with respect to the network and every coefficient matrix.
///
/// Each term is the summed squared error divided by the batch size.
pub fn loss_and_gradients(
    net: &Autoencoder,
    library: &BasisLibrary,
    coeffs: &[Array2<f64>],
    batch: &Batch,
    weights: LossWeights,
) -> Result<(LossBreakdown, Gradients)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n_u = net.input_dim();
    let n_z = net.latent_dim();
    if batch.u.dim() != (n_u, b) || batch.u_dot.dim() != (n_u, b) {
        return Err(Error::shape(
            format!("({n_u}, {b}) batch"),
            format!("{:?} / {:?}", batch.u.dim(), batch.u_dot.dim()),
        ));
    }
    if library.latent_dim != n_z {
        return Err(Error::shape(
            format!("library over {n_z} latents"),
            library.latent_dim,
        ));
    }
    for xi in coeffs {
        library.check_coeffs(xi.view())?;
    }
    if let Some(&bad) = batch.owner.iter().find(|&&o| o >= coeffs.len()) {
        return Err(Error::InvalidArgument(format!(
            "batch owner {bad} has no coefficient matrix ({} available)",
            coeffs.len()
        )));
    }

    let n_l = library.n_terms();
    let enc = net.encoder.forward_dual(batch.u.view(), batch.u_dot.view());
    let z = enc.output();
    let z_dot = enc.tangent();

    // latent model z_hat_dot = Xi^T Theta(z), column by column
    let mut theta = Array2::<f64>::zeros((b, n_l));
    let mut zh_dot = Array2::<f64>::zeros((n_z, b));
    {
        let mut zc = vec![0.0; n_z];
        for c in 0..b {
            for (dst, &v) in zc.iter_mut().zip(z.column(c)) {
                *dst = v;
            }
            let mut th = theta.row_mut(c);
            let th = th.as_slice_mut().unwrap();
            library.eval_into(&zc, th);
            let xi = &coeffs[batch.owner[c]];
            for k in 0..n_z {
                let mut s = 0.0;
                for (l, &t) in th.iter().enumerate() {
                    s += xi[[l, k]] * t;
                }
                zh_dot[[k, c]] = s;
            }
        }
    }

    let dec = net.decoder.forward_dual(z.view(), zh_dot.view());
    let u_hat = dec.output();
    let u_hat_dot = dec.tangent();

    let inv_b = 1.0 / b as f64;
    let recon = sum_sq_diff(u_hat, &batch.u) * inv_b;
    let zdot = sum_sq_diff(z_dot, &zh_dot) * inv_b;
    let udot = sum_sq_diff(u_hat_dot, &batch.u_dot) * inv_b;
    let total = recon + weights.beta1 * zdot + weights.beta2 * udot;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(total));
    }

    let g_uhat = (u_hat - &batch.u) * (2.0 * inv_b);
    let g_uhat_dot = (u_hat_dot - &batch.u_dot) * (2.0 * weights.beta2 * inv_b);
    let mut dec_grads = net.decoder.zero_grads();
    let (mut g_z, mut g_zh) = net
        .decoder
        .backward_dual(&dec, g_uhat, g_uhat_dot, &mut dec_grads, true)
        .expect("input adjoints requested");

    let g_zdot = (z_dot - &zh_dot) * (2.0 * weights.beta1 * inv_b);
    g_zh -= &g_zdot;

    let mut xi_grads: Vec<Array2<f64>> =
        coeffs.iter().map(|x| Array2::zeros(x.raw_dim())).collect();
    {
        let mut zc = vec![0.0; n_z];
        let mut g_theta = vec![0.0; n_l];
        let mut g_zc = vec![0.0; n_z];
        for c in 0..b {
            let o = batch.owner[c];
            let xi = &coeffs[o];
            let gx = &mut xi_grads[o];
            let th = theta.row(c);
            for l in 0..n_l {
                let mut s = 0.0;
                for k in 0..n_z {
                    let g = g_zh[[k, c]];
                    gx[[l, k]] += th[l] * g;
                    s += xi[[l, k]] * g;
                }
                g_theta[l] = s;
            }
            for (dst, &v) in zc.iter_mut().zip(z.column(c)) {
                *dst = v;
            }
            g_zc.fill(0.0);
            library.pullback(&zc, &g_theta, &mut g_zc);
            for k in 0..n_z {
                g_z[[k, c]] += g_zc[k];
            }
        }
    }

    let mut enc_grads = net.encoder.zero_grads();
    net.encoder
        .backward_dual(&enc, g_z, g_zdot, &mut enc_grads, false);

    Ok((
        LossBreakdown {
            total,
            recon,
            zdot,
            udot,
        },
        Gradients {
            encoder: enc_grads,
            decoder: dec_grads,
            xi: xi_grads,
        },
    ))
}
