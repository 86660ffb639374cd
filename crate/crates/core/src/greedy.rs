//! Residual-based error indicator and greedy parameter selection.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::fom::{FullOrderModel, Trajectory};
use crate::interpolation::interpolate_coeffs;
use crate::parameter_space::{random_subset, DiscreteParamSpace, ParamPoint, SampleSet};
use crate::rom::Rom;

/// `max_n ||u_n - u_hat_n|| / ||u_n||` over the columns.
pub fn max_relative_error(u_true: ArrayView2<f64>, u_pred: ArrayView2<f64>) -> Result<f64> {
    if u_true.dim() != u_pred.dim() {
        return Err(Error::shape(
            format!("{:?}", u_true.dim()),
            format!("{:?}", u_pred.dim()),
        ));
    }
    let mut worst = 0.0f64;
    for (n, (t, p)) in u_true
        .columns()
        .into_iter()
        .zip(u_pred.columns())
        .enumerate()
    {
        let mut num = 0.0;
        let mut den = 0.0;
        for (&a, &b) in t.iter().zip(p) {
            num += (a - b) * (a - b);
            den += a * a;
        }
        if den == 0.0 {
            return Err(Error::ZeroNormColumn { column: n });
        }
        let e = (num / den).sqrt();
        if e.is_nan() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Mean backward-Euler residual norm over the first `n_ts` transitions of a
/// predicted trajectory.
pub fn residual_indicator(
    fom: &dyn FullOrderModel,
    u_pred: ArrayView2<f64>,
    n_ts: usize,
) -> Result<f64> {
    if u_pred.nrows() != fom.state_len() {
        return Err(Error::shape(
            format!("{} rows", fom.state_len()),
            u_pred.nrows(),
        ));
    }
    let n_t = u_pred.ncols().saturating_sub(1);
    if n_ts < 1 || n_ts > n_t {
        return Err(Error::InvalidArgument(format!(
            "n_ts = {n_ts} must lie in 1..={n_t}"
        )));
    }
    let sum: f64 = (1..=n_ts)
        .map(|n| fom.residual_norm(u_pred.column(n), u_pred.column(n - 1)))
        .sum();
    let e = sum / n_ts as f64;
    Ok(if e.is_nan() { f64::INFINITY } else { e })
}

/// Default `n_ts`: a tenth of the time steps, at least one.
pub fn default_n_ts(n_steps: usize) -> usize {
    ((n_steps as f64 * 0.1).round() as usize).clamp(1, n_steps.max(1))
}

/// Position of the largest indicator; ties go to the lower grid index.
pub fn select_next(candidates: &[usize], indicators: &[f64]) -> Result<usize> {
    if candidates.is_empty() || candidates.len() != indicators.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates with {} indicators",
            candidates.len(),
            indicators.len()
        )));
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        let ord = indicators[i].total_cmp(&indicators[best]);
        if ord.is_gt() || (ord.is_eq() && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    Ok(best)
}

/// True and indicated errors of every sampled point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub e_max: Vec<f64>,
    pub e_res: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorCorrelation {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line `e_max ~ slope * e_res + intercept`.
pub fn fit_error_correlation(record: &ErrorRecord) -> Result<ErrorCorrelation> {
    let (x, y) = (&record.e_res, &record.e_max);
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 || x.iter().chain(y).any(|v| !v.is_finite()) || x.iter().all(|&v| v == x[0]) {
        return Err(Error::DegenerateFit);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok(ErrorCorrelation {
        slope,
        intercept: my - slope * mx,
    })
}

/// `slope * max(e_res) + intercept`.
pub fn estimate_max_error(correlation: &ErrorCorrelation, record: &ErrorRecord) -> f64 {
    let m = record
        .e_res
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    correlation.slope * m + correlation.intercept
}

/// Fitted estimate, or `max(e_max)` when the fit is degenerate.
pub fn estimate_or_fallback(record: &ErrorRecord) -> (f64, Option<ErrorCorrelation>) {
    match fit_error_correlation(record) {
        Ok(c) => (estimate_max_error(&c, record), Some(c)),
        Err(_) => (
            record
                .e_max
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            None,
        ),
    }
}

/// Pearson correlation coefficient; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Two-level random-subset schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerState {
    pub level: u8,
    pub subset_size: usize,
    pub initial_subset_size: usize,
    /// Latest estimate; `None` before the first sampling event.
    #[serde(with = "crate::serde_util::opt_f64_lenient")]
    pub e_v_max: Option<f64>,
    /// Number of completed sampling events.
    pub iteration: usize,
    pub seed: u64,
}

impl SamplerState {
    pub fn new(subset_size: usize, seed: u64) -> Result<Self> {
        if subset_size == 0 {
            return Err(Error::InvalidArgument(
                "subset size must be positive".into(),
            ));
        }
        Ok(Self {
            level: 1,
            subset_size,
            initial_subset_size: subset_size,
            e_v_max: None,
            iteration: 0,
            seed,
        })
    }

    /// Seed of the subset draw for the current iteration.
    pub fn draw_seed(&self) -> u64 {
        self.seed ^ (self.iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Stopping rules. `tol = None` disables the tolerance test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationCriteria {
    pub tol: Option<f64>,
    pub n_mu_max: Option<usize>,
    pub n_epoch_max: usize,
}

impl TerminationCriteria {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "tol must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Sampled parameters with their trajectories and coefficient matrices,
/// index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDatabase {
    pub samples: SampleSet,
    pub trajectories: Vec<Trajectory>,
    pub coeffs: Vec<Array2<f64>>,
    pub sampler: SamplerState,
}

impl TrainingDatabase {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check_aligned(&self) -> Result<()> {
        if self.trajectories.len() != self.len() || self.coeffs.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "database misaligned: {} samples, {} trajectories, {} coefficient matrices",
                self.len(),
                self.trajectories.len(),
                self.coeffs.len()
            )));
        }
        Ok(())
    }
}

/// Knobs of one greedy step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedySettings {
    pub k: usize,
    pub n_ts: usize,
    /// `None` never promotes to the second level.
    pub tol: Option<f64>,
    pub exec: Execution,
}

/// What one call of [`greedy_step`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub candidates: Vec<usize>,
    pub indicators: Vec<f64>,
    pub chosen: usize,
    pub chosen_indicator: f64,
    pub subset_size: usize,
    pub level: u8,
    pub record: ErrorRecord,
    pub correlation: Option<ErrorCorrelation>,
    pub e_v_max: f64,
    pub promoted: bool,
}

/// Indicator for one ROM prediction; a latent blowup counts as infinite.
pub fn candidate_indicator(
    rom: &Rom,
    fom: &dyn FullOrderModel,
    param: &ParamPoint,
    k: usize,
    n_ts: usize,
) -> Result<f64> {
    match rom.predict(fom, param, k) {
        Ok(p) => residual_indicator(fom, p.snapshots.view(), n_ts),
        Err(Error::LatentBlowup { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// `e_max` and `e_res` of every sampled point against its stored trajectory.
pub fn error_record(
    rom: &Rom,
    fom: &dyn FullOrderModel,
    trajectories: &[Trajectory],
    k: usize,
    n_ts: usize,
    exec: Execution,
) -> Result<ErrorRecord> {
    let pairs = map_indexed(trajectories.len(), exec, |i| -> Result<(f64, f64)> {
        let t = &trajectories[i];
        match rom.predict(fom, &t.param, k) {
            Ok(p) => Ok((
                max_relative_error(t.snapshots.view(), p.snapshots.view())?,
                residual_indicator(fom, p.snapshots.view(), n_ts)?,
            )),
            Err(Error::LatentBlowup { .. }) => Ok((f64::INFINITY, f64::INFINITY)),
            Err(e) => Err(e),
        }
    });
    let mut rec = ErrorRecord::default();
    for p in pairs {
        let (m, r) = p?;
        rec.e_max.push(m);
        rec.e_res.push(r);
    }
    Ok(rec)
}

/// One sampling event: draw candidates, pick the worst by the residual
/// indicator, solve the full-order model there, warm-start its
/// coefficients, then refresh the error estimate and the subset schedule.
pub fn greedy_step(
    db: &mut TrainingDatabase,
    space: &DiscreteParamSpace,
    net: &crate::nn::Autoencoder,
    library: &crate::dynamics_id::BasisLibrary,
    fom: &dyn FullOrderModel,
    settings: GreedySettings,
) -> Result<GreedyOutcome> {
    db.check_aligned()?;
    let available = space.len() - db.len();
    if available == 0 {
        return Err(Error::InvalidArgument(
            "every grid point is already sampled".into(),
        ));
    }
    let k = settings.k.min(db.len());
    let subset_size = db.sampler.subset_size.min(available);
    let level = db.sampler.level;
    let candidates = random_subset(space, &db.samples, subset_size, db.sampler.draw_seed())?;

    let indicators = {
        let rom = Rom::new(net, library, space, &db.samples, &db.coeffs)?;
        map_indexed(candidates.len(), settings.exec, |i| {
            candidate_indicator(&rom, fom, space.point(candidates[i]), k, settings.n_ts)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?
    };
    let best = select_next(&candidates, &indicators)?;
    let chosen = candidates[best];
    let param = space.point(chosen);

    let trajectory = fom.solve(param)?;
    let (xi, _) = interpolate_coeffs(space, param, &db.samples, &db.coeffs, k)?;
    db.samples.insert(chosen, space.len())?;
    db.trajectories.push(trajectory);
    db.coeffs.push(xi);

    let record = {
        let rom = Rom::new(net, library, space, &db.samples, &db.coeffs)?;
        error_record(
            &rom,
            fom,
            &db.trajectories,
            k.min(db.len()),
            settings.n_ts,
            settings.exec,
        )?
    };
    let (e_v_max, correlation) = estimate_or_fallback(&record);
    let mut promoted = false;
    if let Some(tol) = settings.tol {
        if e_v_max <= tol && db.sampler.level < 2 {
            db.sampler.subset_size *= 2;
            db.sampler.level += 1;
            promoted = true;
        }
    }
    db.sampler.e_v_max = Some(e_v_max);
    db.sampler.iteration += 1;

    Ok(GreedyOutcome {
        candidates,
        chosen_indicator: indicators[best],
        indicators,
        chosen,
        subset_size,
        level,
        record,
        correlation,
        e_v_max,
        promoted,
    })
}
