use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{check_newton, check_time, default_newton_max_iter, default_newton_tol, norm2};
use super::{FullOrderModel, StepStats};
use crate::error::{Error, Result};
use crate::parameter_space::ParamPoint;

fn default_x_min() -> f64 {
    -3.0
}

fn default_x_max() -> f64 {
    3.0
}

/// Inviscid Burgers on a periodic 1D grid, upwind (backward) differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FomConfig1D {
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    pub n_points: usize,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
}

impl FomConfig1D {
    pub fn new(n_points: usize, dt: f64, n_steps: usize) -> Self {
        Self {
            x_min: default_x_min(),
            x_max: default_x_max(),
            n_points,
            dt,
            n_steps,
            newton_tol: default_newton_tol(),
            newton_max_iter: default_newton_max_iter(),
        }
    }

    /// 1001 nodes, dt = 1/1000 over t in [0, 1].
    pub fn fine() -> Self {
        Self::new(1001, 1.0 / 1000.0, 1000)
    }

    /// 201 nodes, dt = 1/200 over t in [0, 1].
    pub fn desk() -> Self {
        Self::new(201, 1.0 / 200.0, 200)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Burgers1d {
    config: FomConfig1D,
    x: Vec<f64>,
    dx: f64,
}

impl Burgers1d {
    pub fn new(config: FomConfig1D) -> Result<Self> {
        if config.n_points < 3 || !(config.x_max > config.x_min) {
            return Err(Error::InvalidArgument(format!(
                "1D grid needs at least 3 nodes on a non-empty interval (got {} on [{}, {}])",
                config.n_points, config.x_min, config.x_max
            )));
        }
        check_time(config.dt, config.n_steps)?;
        check_newton(config.newton_tol, config.newton_max_iter)?;
        let dx = config.dx();
        let x = (0..config.n_points)
            .map(|j| {
                if j + 1 == config.n_points {
                    config.x_max
                } else {
                    config.x_min + j as f64 * dx
                }
            })
            .collect();
        Ok(Self { config, x, dx })
    }

    pub fn config(&self) -> &FomConfig1D {
        &self.config
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    /// Upwind neighbor of node `j`; the two endpoints are the same physical
    /// node, so node 0 looks back to `N_u - 2`.
    #[inline]
    fn prev(&self, j: usize) -> usize {
        if j == 0 {
            self.config.n_points - 2
        } else {
            j - 1
        }
    }

    fn rhs_into(&self, u: &[f64], out: &mut [f64]) {
        let inv_dx = 1.0 / self.dx;
        for j in 0..u.len() {
            let up = u[self.prev(j)];
            out[j] = -u[j] * (u[j] - up) * inv_dx;
        }
    }

    fn residual_into(&self, u: &[f64], prev: &[f64], f: &mut [f64], r: &mut [f64]) {
        self.rhs_into(u, f);
        let dt = self.config.dt;
        for j in 0..u.len() {
            r[j] = u[j] - prev[j] - dt * f[j];
        }
    }

    /// Solves `J x = b` for the backward-Euler Jacobian at `u`:
    /// row j has `diag_j` on x_j and `off_j` on x_{prev(j)}. Rows 0..N-2 form
    /// a cyclic lower-bidiagonal system; row N-1 then follows from x_{N-2}.
    fn solve_jacobian(&self, u: &[f64], b: &[f64], x: &mut [f64]) {
        let n = u.len();
        let m = n - 1;
        let c = self.config.dt / self.dx;
        let diag = |j: usize| 1.0 + c * (2.0 * u[j] - u[self.prev(j)]);
        let off = |j: usize| -c * u[j];

        // x_j = alpha_j + beta_j * x_{m-1}
        let mut alpha = vec![0.0; m];
        let mut beta = vec![0.0; m];
        let d0 = diag(0);
        alpha[0] = b[0] / d0;
        beta[0] = -off(0) / d0;
        for j in 1..m {
            let d = diag(j);
            let o = off(j);
            alpha[j] = (b[j] - o * alpha[j - 1]) / d;
            beta[j] = -o * beta[j - 1] / d;
        }
        let last = alpha[m - 1] / (1.0 - beta[m - 1]);
        for j in 0..m {
            x[j] = alpha[j] + beta[j] * last;
        }
        x[m - 1] = last;
        x[n - 1] = (b[n - 1] - off(n - 1) * x[n - 2]) / diag(n - 1);
    }
}

impl FullOrderModel for Burgers1d {
    fn state_len(&self) -> usize {
        self.config.n_points
    }

    fn dt(&self) -> f64 {
        self.config.dt
    }

    fn n_steps(&self) -> usize {
        self.config.n_steps
    }

    fn newton_tol(&self) -> f64 {
        self.config.newton_tol
    }

    /// `u0(x) = a exp(-x^2 / (2 w^2))` with `param = (a, w)`.
    fn initial_condition(&self, param: &ParamPoint) -> Result<Array1<f64>> {
        let [a, w] = param.coords[..] else {
            return Err(Error::shape(
                "parameter (a, w)",
                format!("{} coordinates", param.dim()),
            ));
        };
        if w == 0.0 {
            return Err(Error::InvalidArgument("width w must be nonzero".into()));
        }
        let denom = 2.0 * w * w;
        Ok(self.x.iter().map(|&x| a * (-x * x / denom).exp()).collect())
    }

    fn rhs(&self, state: ArrayView1<f64>) -> Array1<f64> {
        let u = state.to_vec();
        let mut out = vec![0.0; u.len()];
        self.rhs_into(&u, &mut out);
        Array1::from(out)
    }

    fn step(&self, prev: ArrayView1<f64>, step: usize) -> Result<(Array1<f64>, StepStats)> {
        let n = self.config.n_points;
        if prev.len() != n {
            return Err(Error::shape(format!("state of length {n}"), prev.len()));
        }
        let prev = prev.to_vec();
        let mut u = prev.clone();
        let mut f = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut delta = vec![0.0; n];
        for iteration in 0..=self.config.newton_max_iter {
            self.residual_into(&u, &prev, &mut f, &mut r);
            let norm = norm2(&r);
            if !norm.is_finite() {
                return Err(Error::NonConvergence {
                    step,
                    iterations: iteration,
                    residual: norm,
                });
            }
            if norm <= self.config.newton_tol {
                return Ok((
                    Array1::from(u),
                    StepStats {
                        iterations: iteration,
                        residual: norm,
                    },
                ));
            }
            if iteration == self.config.newton_max_iter {
                return Err(Error::NonConvergence {
                    step,
                    iterations: iteration,
                    residual: norm,
                });
            }
            self.solve_jacobian(&u, &r, &mut delta);
            for (uj, dj) in u.iter_mut().zip(&delta) {
                *uj -= dj;
            }
        }
        unreachable!("loop returns on its last iteration")
    }
}
