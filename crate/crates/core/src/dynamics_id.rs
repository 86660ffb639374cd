//! Polynomial basis library `Theta(z)` and per-sample coefficient matrices
//! `Xi` (N_l x N_z) defining the local latent ODEs `z_dot = Theta(z) Xi`.
//!
//! Column order is fixed: `[1, z_1..z_Nz, z_i z_j for i <= j]` (the constant
//! is dropped when `include_constant` is off).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisLibrary {
    pub latent_dim: usize,
    pub poly_order: usize,
    #[serde(default = "yes")]
    pub include_constant: bool,
}

fn yes() -> bool {
    true
}

impl BasisLibrary {
    pub fn new(latent_dim: usize, poly_order: usize) -> Result<Self> {
        Self::with_constant(latent_dim, poly_order, true)
    }

    pub fn with_constant(
        latent_dim: usize,
        poly_order: usize,
        include_constant: bool,
    ) -> Result<Self> {
        let lib = Self {
            latent_dim,
            poly_order,
            include_constant,
        };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || !(1..=2).contains(&self.poly_order) {
            return Err(Error::InvalidArgument(format!(
                "library needs latent_dim >= 1 and poly_order in {{1, 2}} (got {}, {})",
                self.latent_dim, self.poly_order
            )));
        }
        Ok(())
    }

    /// Number of library columns `N_l`.
    pub fn n_terms(&self) -> usize {
        let n = self.latent_dim;
        let quad = if self.poly_order >= 2 {
            n * (n + 1) / 2
        } else {
            0
        };
        usize::from(self.include_constant) + n + quad
    }

    fn check_z(&self, len: usize) -> Result<()> {
        if len != self.latent_dim {
            return Err(Error::shape(
                format!("latent vector of length {}", self.latent_dim),
                len,
            ));
        }
        Ok(())
    }

    pub fn eval(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_z(z.len())?;
        let mut out = vec![0.0; self.n_terms()];
        self.eval_into(&z.to_vec(), &mut out);
        Ok(Array1::from(out))
    }

    pub(crate) fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        let mut k = 0;
        if self.include_constant {
            out[0] = 1.0;
            k = 1;
        }
        out[k..k + z.len()].copy_from_slice(z);
        k += z.len();
        if self.poly_order >= 2 {
            for i in 0..z.len() {
                for j in i..z.len() {
                    out[k] = z[i] * z[j];
                    k += 1;
                }
            }
        }
    }

    /// Accumulates `J_Theta(z)^T g` into `gz`.
    pub(crate) fn pullback(&self, z: &[f64], g: &[f64], gz: &mut [f64]) {
        let mut k = usize::from(self.include_constant);
        for i in 0..z.len() {
            gz[i] += g[k + i];
        }
        k += z.len();
        if self.poly_order >= 2 {
            for i in 0..z.len() {
                for j in i..z.len() {
                    gz[i] += z[j] * g[k];
                    gz[j] += z[i] * g[k];
                    k += 1;
                }
            }
        }
    }

    pub fn zero_coeffs(&self) -> Array2<f64> {
        Array2::zeros((self.n_terms(), self.latent_dim))
    }

    pub fn check_coeffs(&self, xi: ArrayView2<f64>) -> Result<()> {
        let want = (self.n_terms(), self.latent_dim);
        if xi.dim() != want {
            return Err(Error::shape(
                format!("{want:?} coefficient matrix"),
                format!("{:?}", xi.dim()),
            ));
        }
        Ok(())
    }
}

/// A coefficient matrix owned by one sampled parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DiCoeffs {
    pub xi: Array2<f64>,
    /// Position of the owning sample in the training set.
    pub owner: usize,
}

/// Encoded trajectory `Z` and its time derivative `Z_dot`, both N_z x (N_t+1).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory {
    pub z: Array2<f64>,
    pub z_dot: Array2<f64>,
}

impl LatentTrajectory {
    pub fn new(z: Array2<f64>, z_dot: Array2<f64>) -> Result<Self> {
        if z.dim() != z_dot.dim() {
            return Err(Error::shape(
                format!("{:?}", z.dim()),
                format!("{:?}", z_dot.dim()),
            ));
        }
        Ok(Self { z, z_dot })
    }
}

/// `Theta(z) Xi`.
pub fn latent_rhs(
    library: &BasisLibrary,
    xi: ArrayView2<f64>,
    z: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    library.check_coeffs(xi)?;
    let theta = library.eval(z)?;
    Ok(theta.dot(&xi))
}

/// Allocation-light variant for integrators: writes `Theta(z) Xi` to `out`.
pub(crate) fn latent_rhs_into(
    library: &BasisLibrary,
    xi: ArrayView2<f64>,
    z: &[f64],
    theta: &mut [f64],
    out: &mut [f64],
) {
    library.eval_into(z, theta);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (t, row) in theta.iter().zip(xi.rows()) {
        if *t == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(row) {
            *o += t * x;
        }
    }
}

/// Mean over columns of `||z_dot_n - Theta(z_n) Xi||^2`.
pub fn di_residual_zdot(
    library: &BasisLibrary,
    xi: ArrayView2<f64>,
    traj: &LatentTrajectory,
) -> Result<f64> {
    library.check_coeffs(xi)?;
    if traj.z.nrows() != library.latent_dim {
        return Err(Error::shape(library.latent_dim, traj.z.nrows()));
    }
    let cols = traj.z.ncols();
    if cols == 0 {
        return Ok(0.0);
    }
    let nz = library.latent_dim;
    let mut theta = vec![0.0; library.n_terms()];
    let mut pred = vec![0.0; nz];
    let mut total = 0.0;
    for n in 0..cols {
        let z = traj.z.column(n).to_vec();
        latent_rhs_into(library, xi, &z, &mut theta, &mut pred);
        total += traj
            .z_dot
            .column(n)
            .iter()
            .zip(&pred)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / cols as f64)
}
