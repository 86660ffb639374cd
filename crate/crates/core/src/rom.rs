//! Online evaluation: encode the initial condition, integrate the
//! interpolated latent ODE with RK4, decode.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::dynamics_id::{latent_rhs_into, BasisLibrary};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::fom::{Fom, FomConfig, FullOrderModel, Trajectory};
use crate::greedy::max_relative_error;
use crate::interpolation::interpolate_coeffs;
use crate::nn::Autoencoder;
use crate::parameter_space::{DiscreteParamSpace, ParamPoint, SampleSet};

/// A frozen model: network, library and one coefficient matrix per sample.
#[derive(Debug, Clone, Copy)]
pub struct Rom<'a> {
    pub net: &'a Autoencoder,
    pub library: &'a BasisLibrary,
    pub space: &'a DiscreteParamSpace,
    pub samples: &'a SampleSet,
    pub coeffs: &'a [Array2<f64>],
}

/// Latent and decoded trajectories of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `N_z x (N_t + 1)`.
    pub latent: Array2<f64>,
    /// `N_u x (N_t + 1)`.
    pub snapshots: Array2<f64>,
    pub coeffs: Array2<f64>,
}

impl<'a> Rom<'a> {
    pub fn new(
        net: &'a Autoencoder,
        library: &'a BasisLibrary,
        space: &'a DiscreteParamSpace,
        samples: &'a SampleSet,
        coeffs: &'a [Array2<f64>],
    ) -> Result<Self> {
        if library.latent_dim != net.latent_dim() {
            return Err(Error::shape(
                format!("library over {} latents", net.latent_dim()),
                library.latent_dim,
            ));
        }
        if coeffs.len() != samples.len() {
            return Err(Error::shape(
                format!("{} coefficient matrices", samples.len()),
                coeffs.len(),
            ));
        }
        for xi in coeffs {
            library.check_coeffs(xi.view())?;
        }
        Ok(Self {
            net,
            library,
            space,
            samples,
            coeffs,
        })
    }

    /// Latent trajectory only, with the coefficient matrix used.
    pub fn predict_latent(
        &self,
        fom: &dyn FullOrderModel,
        query: &ParamPoint,
        k: usize,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let u0 = fom.initial_condition(query)?;
        if u0.len() != self.net.input_dim() {
            return Err(Error::shape(
                format!("{}-entry state", self.net.input_dim()),
                u0.len(),
            ));
        }
        let z0 = self.net.encode(u0.view())?;
        let (xi, _) = interpolate_coeffs(self.space, query, self.samples, self.coeffs, k)?;
        let z = integrate_rk4(
            self.library,
            xi.view(),
            z0.as_slice().unwrap(),
            fom.dt(),
            fom.n_steps(),
        )?;
        Ok((z, xi))
    }

    pub fn predict(
        &self,
        fom: &dyn FullOrderModel,
        query: &ParamPoint,
        k: usize,
    ) -> Result<Prediction> {
        let (latent, coeffs) = self.predict_latent(fom, query, k)?;
        let snapshots = self.net.decode_batch(latent.view())?;
        Ok(Prediction {
            latent,
            snapshots,
            coeffs,
        })
    }
}

/// Classical RK4 for `z' = Theta(z) Xi`, returning all `n_steps + 1` states
/// as columns.
pub fn integrate_rk4(
    library: &BasisLibrary,
    xi: ArrayView2<f64>,
    z0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Result<Array2<f64>> {
    library.check_coeffs(xi)?;
    let nz = library.latent_dim;
    if z0.len() != nz {
        return Err(Error::shape(format!("{nz} latent entries"), z0.len()));
    }
    let mut out = Array2::<f64>::zeros((nz, n_steps + 1));
    let mut theta = vec![0.0; library.n_terms()];
    let mut z = z0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) =
        (vec![0.0; nz], vec![0.0; nz], vec![0.0; nz], vec![0.0; nz]);
    let mut tmp = vec![0.0; nz];
    for (i, &v) in z.iter().enumerate() {
        out[[i, 0]] = v;
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::LatentBlowup { step: 0 });
    }
    for n in 1..=n_steps {
        latent_rhs_into(library, xi, &z, &mut theta, &mut k1);
        for i in 0..nz {
            tmp[i] = z[i] + 0.5 * dt * k1[i];
        }
        latent_rhs_into(library, xi, &tmp, &mut theta, &mut k2);
        for i in 0..nz {
            tmp[i] = z[i] + 0.5 * dt * k2[i];
        }
        latent_rhs_into(library, xi, &tmp, &mut theta, &mut k3);
        for i in 0..nz {
            tmp[i] = z[i] + dt * k3[i];
        }
        latent_rhs_into(library, xi, &tmp, &mut theta, &mut k4);
        for i in 0..nz {
            z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::LatentBlowup { step: n });
        }
        for (i, &v) in z.iter().enumerate() {
            out[[i, n]] = v;
        }
    }
    Ok(out)
}

/// Content-addressed store of full-order solutions. Without a directory it
/// just solves.
#[derive(Debug, Clone, Default)]
pub struct FomCache {
    dir: Option<PathBuf>,
}

impl FomCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    /// Reads `GLASDI_CACHE`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os("GLASDI_CACHE").map(PathBuf::from))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Cache key of `(config, param)`.
    pub fn key(config: &FomConfig, param: &ParamPoint) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(config)?);
        for c in &param.coords {
            h.update(c.to_le_bytes());
        }
        Ok(hex(&h.finalize()))
    }

    pub fn solve(&self, config: &FomConfig, fom: &Fom, param: &ParamPoint) -> Result<Trajectory> {
        let Some(dir) = &self.dir else {
            return fom.solve(param);
        };
        let key = Self::key(config, param)?;
        let sidecar = dir.join(format!("{key}.json"));
        if sidecar.exists() {
            if let Ok(t) = Trajectory::load(&sidecar, Some(fom)) {
                if t.param == *param {
                    return Ok(t);
                }
            }
        }
        let t = fom.solve(param)?;
        // a failed cache write only costs a re-solve next time
        let tmp = dir.join(format!(".{key}.{}", std::process::id()));
        if t.save(&tmp, &key, None).is_ok() {
            for ext in ["u.f64", "udot.f64", "json"] {
                let _ = fs::rename(
                    tmp.join(format!("{key}.{ext}")),
                    dir.join(format!("{key}.{ext}")),
                );
            }
        }
        let _ = fs::remove_dir_all(&tmp);
        Ok(t)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Max relative error at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// One entry per grid point; `None` where the reference solve failed.
    pub values: Vec<Option<f64>>,
    pub missing: Vec<usize>,
    /// Grid index of the largest error.
    pub argmax: Option<usize>,
    pub max: f64,
}

impl Heatmap {
    fn from_values(values: Vec<Option<f64>>) -> Self {
        let missing = values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_none().then_some(i))
            .collect();
        let mut argmax = None;
        let mut max = f64::NEG_INFINITY;
        for (i, v) in values.iter().enumerate() {
            if let Some(v) = *v {
                if v > max || v.is_nan() {
                    max = v;
                    argmax = Some(i);
                }
            }
        }
        Self {
            values,
            missing,
            argmax,
            max,
        }
    }
}

/// `e_max` over every point of the model's grid. A latent blowup counts as
/// an infinite error; a failed reference solve leaves the cell empty.
pub fn error_heatmap(
    rom: &Rom,
    fom: &Fom,
    fom_config: &FomConfig,
    cache: &FomCache,
    k: usize,
    exec: Execution,
) -> Result<Heatmap> {
    k_in_range(rom, k)?;
    let cells = map_indexed(rom.space.len(), exec, |i| -> Result<Option<f64>> {
        let p = rom.space.point(i);
        let truth = match cache.solve(fom_config, fom, p) {
            Ok(t) => t,
            Err(Error::NonConvergence { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some(prediction_error(rom, fom, &truth, k)?))
    });
    let values = cells.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Heatmap::from_values(values))
}

fn k_in_range(rom: &Rom, k: usize) -> Result<()> {
    if k < 1 || k > rom.samples.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            rom.samples.len()
        )));
    }
    Ok(())
}

/// `e_max` of the prediction at `truth.param`; infinite on latent blowup.
pub fn prediction_error(
    rom: &Rom,
    fom: &dyn FullOrderModel,
    truth: &Trajectory,
    k: usize,
) -> Result<f64> {
    match rom.predict(fom, &truth.param, k) {
        Ok(p) => max_relative_error(truth.snapshots.view(), p.snapshots.view()),
        Err(Error::LatentBlowup { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speedup {
    pub t_fom: f64,
    pub t_rom: f64,
    pub ratio: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median wall-clock seconds of `repetitions` calls of each closure.
pub fn time_ratio<A, B>(repetitions: usize, mut slow: A, mut fast: B) -> Result<Speedup>
where
    A: FnMut() -> Result<()>,
    B: FnMut() -> Result<()>,
{
    if repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 repetitions, got {repetitions}"
        )));
    }
    let mut ta = Vec::with_capacity(repetitions);
    let mut tb = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        slow()?;
        ta.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        fast()?;
        tb.push(t.elapsed().as_secs_f64());
    }
    let (t_fom, t_rom) = (median(ta), median(tb));
    Ok(Speedup {
        t_fom,
        t_rom,
        ratio: t_fom / t_rom,
    })
}

/// FOM solve versus ROM predict at `query`.
pub fn measure_speedup(
    rom: &Rom,
    fom: &Fom,
    query: &ParamPoint,
    k: usize,
    repetitions: usize,
) -> Result<Speedup> {
    k_in_range(rom, k)?;
    time_ratio(
        repetitions,
        || fom.solve(query).map(|t| drop(std::hint::black_box(t))),
        || {
            rom.predict(fom, query, k)
                .map(|p| drop(std::hint::black_box(p)))
        },
    )
}
