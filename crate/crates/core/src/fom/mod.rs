//! Full-order finite-difference models.
//!
//! A [`FullOrderModel`] supplies the initial condition, the semi-discrete
//! right-hand side `f(u)` and an implicit backward-Euler step. Everything
//! else (trajectories, residuals, the greedy error indicator) is written
//! against the trait.

mod burgers1d;
mod burgers2d;
pub(crate) mod trajectory;

pub use burgers1d::{Burgers1d, FomConfig1D};
pub use burgers2d::{Burgers2d, FomConfig2D};
pub use trajectory::{Trajectory, TrajectoryMeta};

use ndarray::{Array1, Array2, ArrayView1, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parameter_space::ParamPoint;

/// Outcome of one accepted backward-Euler step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
}

pub trait FullOrderModel: Sync {
    /// Length of the discrete state vector `N_u`.
    fn state_len(&self) -> usize;
    fn dt(&self) -> f64;
    fn n_steps(&self) -> usize;
    fn newton_tol(&self) -> f64;

    fn initial_condition(&self, param: &ParamPoint) -> Result<Array1<f64>>;

    /// Semi-discrete velocity `f(u)`.
    fn rhs(&self, state: ArrayView1<f64>) -> Array1<f64>;

    /// Solves `u - prev - dt f(u) = 0` by Newton's method starting from `prev`.
    /// `step` is only used for error reporting.
    fn step(&self, prev: ArrayView1<f64>, step: usize) -> Result<(Array1<f64>, StepStats)>;

    /// `||u_n - u_prev - dt f(u_n)||_2`.
    fn residual_norm(&self, u_n: ArrayView1<f64>, u_prev: ArrayView1<f64>) -> f64 {
        let f = self.rhs(u_n);
        let dt = self.dt();
        u_n.iter()
            .zip(u_prev.iter())
            .zip(f.iter())
            .map(|((a, b), f)| {
                let r = a - b - dt * f;
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Full trajectory plus the residual of every accepted step.
    fn solve_with_stats(&self, param: &ParamPoint) -> Result<(Trajectory, Vec<StepStats>)> {
        let n = self.state_len();
        let nt = self.n_steps();
        let mut u = Array2::<f64>::zeros((n, nt + 1).f());
        let mut udot = Array2::<f64>::zeros((n, nt + 1).f());
        let mut stats = Vec::with_capacity(nt);

        let u0 = self.initial_condition(param)?;
        udot.column_mut(0).assign(&self.rhs(u0.view()));
        u.column_mut(0).assign(&u0);
        for step in 1..=nt {
            let (next, st) = self.step(u.column(step - 1), step)?;
            udot.column_mut(step).assign(&self.rhs(next.view()));
            u.column_mut(step).assign(&next);
            stats.push(st);
        }
        Ok((
            Trajectory {
                snapshots: u,
                derivatives: udot,
                param: param.clone(),
                dt: self.dt(),
            },
            stats,
        ))
    }

    fn solve(&self, param: &ParamPoint) -> Result<Trajectory> {
        self.solve_with_stats(param).map(|(t, _)| t)
    }
}

/// Serializable choice of full-order model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FomConfig {
    Burgers1d(FomConfig1D),
    Burgers2d(FomConfig2D),
}

impl FomConfig {
    pub fn build(&self) -> Result<Fom> {
        Ok(match self {
            FomConfig::Burgers1d(c) => Fom::Burgers1d(Burgers1d::new(c.clone())?),
            FomConfig::Burgers2d(c) => Fom::Burgers2d(Burgers2d::new(c.clone())?),
        })
    }
}

/// A validated full-order model of either kind.
#[derive(Debug, Clone)]
pub enum Fom {
    Burgers1d(Burgers1d),
    Burgers2d(Burgers2d),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Fom::Burgers1d($m) => $e,
            Fom::Burgers2d($m) => $e,
        }
    };
}

impl FullOrderModel for Fom {
    fn state_len(&self) -> usize {
        dispatch!(self, m => m.state_len())
    }
    fn dt(&self) -> f64 {
        dispatch!(self, m => m.dt())
    }
    fn n_steps(&self) -> usize {
        dispatch!(self, m => m.n_steps())
    }
    fn newton_tol(&self) -> f64 {
        dispatch!(self, m => m.newton_tol())
    }
    fn initial_condition(&self, param: &ParamPoint) -> Result<Array1<f64>> {
        dispatch!(self, m => m.initial_condition(param))
    }
    fn rhs(&self, state: ArrayView1<f64>) -> Array1<f64> {
        dispatch!(self, m => m.rhs(state))
    }
    fn step(&self, prev: ArrayView1<f64>, step: usize) -> Result<(Array1<f64>, StepStats)> {
        dispatch!(self, m => m.step(prev, step))
    }
}

fn check_newton(tol: f64, max_iter: usize) -> Result<()> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "Newton settings need tol > 0 and max_iter >= 1 (got {tol}, {max_iter})"
        )));
    }
    Ok(())
}

fn check_time(dt: f64, n_steps: usize) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() || n_steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "time grid needs dt > 0 and n_steps >= 1 (got {dt}, {n_steps})"
        )));
    }
    Ok(())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn default_newton_tol() -> f64 {
    1e-9
}

fn default_newton_max_iter() -> usize {
    20
}
