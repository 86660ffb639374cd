use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{check_newton, check_time, default_newton_max_iter, default_newton_tol, norm2};
use super::{FullOrderModel, StepStats};
use crate::error::{Error, Result};
use crate::parameter_space::ParamPoint;

fn default_reynolds() -> f64 {
    10_000.0
}

/// Viscous Burgers on `[-3, 3]^2` with homogeneous Dirichlet boundaries.
/// Convection uses backward differences, diffusion central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FomConfig2D {
    /// Nodes per side, boundary included.
    pub n: usize,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default = "default_reynolds")]
    pub reynolds: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
}

impl FomConfig2D {
    pub fn new(n: usize, dt: f64, n_steps: usize) -> Self {
        Self {
            n,
            dt,
            n_steps,
            reynolds: default_reynolds(),
            newton_tol: default_newton_tol(),
            newton_max_iter: default_newton_max_iter(),
        }
    }
}

const X_MIN: f64 = -3.0;
const X_MAX: f64 = 3.0;

/// State layout: component-major, then row-major over the grid
/// (`index = c * n^2 + row * n + col`, x varies along columns).
#[derive(Debug, Clone)]
pub struct Burgers2d {
    config: FomConfig2D,
    h: f64,
}

impl Burgers2d {
    pub fn new(config: FomConfig2D) -> Result<Self> {
        if config.n < 3 {
            return Err(Error::InvalidArgument(format!(
                "2D grid needs n >= 3, got {}",
                config.n
            )));
        }
        if !(config.reynolds > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Reynolds number must be positive, got {}",
                config.reynolds
            )));
        }
        check_time(config.dt, config.n_steps)?;
        check_newton(config.newton_tol, config.newton_max_iter)?;
        let h = (X_MAX - X_MIN) / (config.n - 1) as f64;
        Ok(Self { config, h })
    }

    pub fn config(&self) -> &FomConfig2D {
        &self.config
    }

    fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.config.n {
            X_MAX
        } else {
            X_MIN + i as f64 * self.h
        }
    }

    #[inline]
    fn interior(&self, row: usize, col: usize) -> bool {
        let n = self.config.n;
        row > 0 && col > 0 && row + 1 < n && col + 1 < n
    }

    fn rhs_into(&self, s: &[f64], out: &mut [f64]) {
        let n = self.config.n;
        let nn = n * n;
        let (u, v) = s.split_at(nn);
        let (fu, fv) = out.split_at_mut(nn);
        let inv_h = 1.0 / self.h;
        let nu_h2 = 1.0 / (self.config.reynolds * self.h * self.h);
        for row in 0..n {
            for col in 0..n {
                let k = row * n + col;
                if !self.interior(row, col) {
                    fu[k] = 0.0;
                    fv[k] = 0.0;
                    continue;
                }
                let (w, s_, e, nb) = (k - 1, k - n, k + 1, k + n);
                let lap_u = u[e] + u[w] + u[nb] + u[s_] - 4.0 * u[k];
                let lap_v = v[e] + v[w] + v[nb] + v[s_] - 4.0 * v[k];
                fu[k] =
                    -u[k] * (u[k] - u[w]) * inv_h - v[k] * (u[k] - u[s_]) * inv_h + nu_h2 * lap_u;
                fv[k] =
                    -u[k] * (v[k] - v[w]) * inv_h - v[k] * (v[k] - v[s_]) * inv_h + nu_h2 * lap_v;
            }
        }
    }

    /// Assembles `I - dt df/du` in interleaved ordering (`2 * node + c`).
    fn jacobian(&self, s: &[f64]) -> BandMatrix {
        let n = self.config.n;
        let nn = n * n;
        let (u, v) = s.split_at(nn);
        let dt = self.config.dt;
        let inv_h = 1.0 / self.h;
        let nu_h2 = 1.0 / (self.config.reynolds * self.h * self.h);
        let mut a = BandMatrix::new(2 * nn, 2 * n + 1);
        for row in 0..n {
            for col in 0..n {
                let k = row * n + col;
                let (iu, iv) = (2 * k, 2 * k + 1);
                a.set(iu, iu, 1.0);
                a.set(iv, iv, 1.0);
                if !self.interior(row, col) {
                    continue;
                }
                let (w, s_, e, nb) = (k - 1, k - n, k + 1, k + n);
                // df_u
                a.add(
                    iu,
                    iu,
                    -dt * (-(2.0 * u[k] - u[w]) * inv_h - v[k] * inv_h - 4.0 * nu_h2),
                );
                a.add(iu, 2 * w, -dt * (u[k] * inv_h + nu_h2));
                a.add(iu, 2 * s_, -dt * (v[k] * inv_h + nu_h2));
                a.add(iu, 2 * e, -dt * nu_h2);
                a.add(iu, 2 * nb, -dt * nu_h2);
                a.add(iu, iv, -dt * (-(u[k] - u[s_]) * inv_h));
                // df_v
                a.add(
                    iv,
                    iv,
                    -dt * (-u[k] * inv_h - (2.0 * v[k] - v[s_]) * inv_h - 4.0 * nu_h2),
                );
                a.add(iv, 2 * w + 1, -dt * (u[k] * inv_h + nu_h2));
                a.add(iv, 2 * s_ + 1, -dt * (v[k] * inv_h + nu_h2));
                a.add(iv, 2 * e + 1, -dt * nu_h2);
                a.add(iv, 2 * nb + 1, -dt * nu_h2);
                a.add(iv, iu, -dt * (-(v[k] - v[w]) * inv_h));
            }
        }
        a
    }
}

impl FullOrderModel for Burgers2d {
    fn state_len(&self) -> usize {
        2 * self.config.n * self.config.n
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

    /// Both components start as `a exp(-|x|^2 / w^2)`, zero on the boundary.
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
        let n = self.config.n;
        let mut s = Array1::zeros(2 * n * n);
        for row in 0..n {
            for col in 0..n {
                if !self.interior(row, col) {
                    continue;
                }
                let (x, y) = (self.coord(col), self.coord(row));
                let val = a * (-(x * x + y * y) / (w * w)).exp();
                s[row * n + col] = val;
                s[n * n + row * n + col] = val;
            }
        }
        Ok(s)
    }

    fn rhs(&self, state: ArrayView1<f64>) -> Array1<f64> {
        let s = state.to_vec();
        let mut out = vec![0.0; s.len()];
        self.rhs_into(&s, &mut out);
        Array1::from(out)
    }

    fn step(&self, prev: ArrayView1<f64>, step: usize) -> Result<(Array1<f64>, StepStats)> {
        let len = self.state_len();
        if prev.len() != len {
            return Err(Error::shape(format!("state of length {len}"), prev.len()));
        }
        let nn = len / 2;
        let prev = prev.to_vec();
        let mut s = prev.clone();
        let mut f = vec![0.0; len];
        let mut r = vec![0.0; len];
        let dt = self.config.dt;
        for iteration in 0..=self.config.newton_max_iter {
            self.rhs_into(&s, &mut f);
            for i in 0..len {
                r[i] = s[i] - prev[i] - dt * f[i];
            }
            let norm = norm2(&r);
            if norm <= self.config.newton_tol {
                return Ok((
                    Array1::from(s),
                    StepStats {
                        iterations: iteration,
                        residual: norm,
                    },
                ));
            }
            if !norm.is_finite() || iteration == self.config.newton_max_iter {
                return Err(Error::NonConvergence {
                    step,
                    iterations: iteration,
                    residual: norm,
                });
            }
            let mut rhs = vec![0.0; len];
            for k in 0..nn {
                rhs[2 * k] = r[k];
                rhs[2 * k + 1] = r[nn + k];
            }
            let mut jac = self.jacobian(&s);
            jac.factor();
            jac.solve_in_place(&mut rhs);
            for k in 0..nn {
                s[k] -= rhs[2 * k];
                s[nn + k] -= rhs[2 * k + 1];
            }
        }
        unreachable!("loop returns on its last iteration")
    }
}

/// Square band matrix with equal lower/upper bandwidth, LU without pivoting.
/// The backward-Euler Jacobian is `I + O(dt)`, so pivoting is unnecessary.
struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (2 * bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    fn factor(&mut self) {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.get(k, k);
            let end = (k + bw + 1).min(n);
            for i in k + 1..end {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..end {
                    let kj = self.get(k, j);
                    if kj != 0.0 {
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let start = i.saturating_sub(bw);
            let mut acc = b[i];
            for j in start..i {
                acc -= self.get(i, j) * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let end = (i + bw + 1).min(n);
            let mut acc = b[i];
            for j in i + 1..end {
                acc -= self.get(i, j) * b[j];
            }
            b[i] = acc / self.get(i, i);
        }
    }
}
