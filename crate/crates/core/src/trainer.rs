//! Training loop: minibatch Adam on the joint loss, with a greedy sampling
//! event every `n_up` epochs, plus checkpoints and run logs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SamplingConfig, TrainConfig};
use crate::dynamics_id::BasisLibrary;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::fom::trajectory::{matrix_from_bytes, matrix_to_bytes};
use crate::fom::{Fom, FullOrderModel, Trajectory};
use crate::greedy::{greedy_step, GreedySettings, SamplerState, TrainingDatabase};
use crate::nn::{
    adam_step, loss_and_gradients, AdamConfig, AdamState, Autoencoder, Batch, Dense, LayerSpec,
    LossBreakdown, LossWeights, Mlp,
};
use crate::parameter_space::{
    corner_indices, uniform_indices, DiscreteParamSpace, ParamPoint, SampleSet,
};
use crate::rom::{hex, Rom};
use crate::serde_util::f64_lenient;

/// Mean loss over one epoch, weighted by batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLoss {
    pub epoch: usize,
    pub n_samples: usize,
    pub loss: LossBreakdown,
}

/// One line of the sampling audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub iter: usize,
    pub epoch: usize,
    pub chosen_index: usize,
    pub chosen_param: Vec<f64>,
    /// Indicator of the chosen candidate, the largest in the subset.
    #[serde(with = "f64_lenient")]
    pub e_res_max: f64,
    #[serde(with = "f64_lenient")]
    pub e_v_max: f64,
    pub subset_size: usize,
    pub level: u8,
    pub promoted: bool,
    pub n_samples: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxSamples,
    MaxEpochs,
    GridExhausted,
}

/// Complete mutable state of a run; a checkpoint stores exactly this.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: RunConfig,
    pub config_hash: String,
    pub net: Autoencoder,
    pub library: BasisLibrary,
    pub adam: AdamState,
    pub db: TrainingDatabase,
    /// Completed epochs.
    pub epoch: usize,
    pub losses: Vec<EpochLoss>,
    pub audit: Vec<AuditRecord>,
    pub stop: Option<StopReason>,
}

/// Progress notifications from [`run`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Epoch(&'a EpochLoss),
    Sample(&'a AuditRecord),
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub exec: Execution,
    /// Written when training fails, so the partial state survives.
    pub failure_checkpoint: Option<PathBuf>,
}

impl TrainState {
    /// Initial database (corners, or the uniform lattice), zero
    /// coefficients and a freshly initialized network.
    pub fn initialize(config: &RunConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        let space = config.space()?;
        let fom = config.build_fom()?;
        let tc = config.train_config()?;
        let library = config.basis_library()?;
        let spec = config.layer_spec(fom.state_len())?;
        let samples = match &tc.sampling {
            SamplingConfig::Greedy => corner_indices(&space),
            SamplingConfig::Uniform { counts } => uniform_indices(&space, counts)?,
        };
        let trajectories = map_indexed(samples.len(), exec, |i| {
            fom.solve(space.point(samples.indices()[i]))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let coeffs = vec![library.zero_coeffs(); samples.len()];
        Ok(Self {
            config: config.clone(),
            config_hash: config.hash()?,
            net: Autoencoder::init(&spec, tc.seed)?,
            library,
            adam: AdamState::new(tc.adam),
            db: TrainingDatabase {
                samples,
                trajectories,
                coeffs,
                sampler: SamplerState::new(tc.n_subset, tc.seed)?,
            },
            epoch: 0,
            losses: Vec::new(),
            audit: Vec::new(),
            stop: None,
        })
    }

    pub fn rom<'a>(&'a self, space: &'a DiscreteParamSpace) -> Result<Rom<'a>> {
        Rom::new(
            &self.net,
            &self.library,
            space,
            &self.db.samples,
            &self.db.coeffs,
        )
    }
}

/// Initializes and trains a run to completion.
pub fn train(config: &RunConfig, options: &TrainOptions) -> Result<TrainState> {
    let mut state = TrainState::initialize(config, options.exec)?;
    run(&mut state, options, &mut |_| {})?;
    Ok(state)
}

/// Continues `state` until a stopping rule fires. On error the state is
/// left as it was after the last completed epoch and, if requested, saved.
pub fn run(
    state: &mut TrainState,
    options: &TrainOptions,
    progress: &mut dyn FnMut(TrainEvent),
) -> Result<()> {
    let result = run_inner(state, options, progress);
    if result.is_err() {
        if let Some(path) = &options.failure_checkpoint {
            save_checkpoint(path, state)?;
        }
    }
    result
}

fn run_inner(
    state: &mut TrainState,
    options: &TrainOptions,
    progress: &mut dyn FnMut(TrainEvent),
) -> Result<()> {
    let tc = state.config.train_config()?;
    let space = state.config.space()?;
    let fom = state.config.build_fom()?;
    let greedy = tc.sampling == SamplingConfig::Greedy;
    while state.stop.is_none() {
        let epoch = state.epoch + 1;
        if epoch > tc.termination.n_epoch_max {
            state.stop = Some(StopReason::MaxEpochs);
            break;
        }
        let loss = run_epoch(state, &tc, epoch)?;
        state.epoch = epoch;
        state.losses.push(loss);
        progress(TrainEvent::Epoch(&loss));

        if !greedy {
            continue;
        }
        if epoch.is_multiple_of(tc.n_up) {
            if tc.termination.n_mu_max.is_some_and(|m| state.db.len() >= m) {
                state.stop = Some(StopReason::MaxSamples);
                break;
            }
            if state.db.len() == space.len() {
                state.stop = Some(StopReason::GridExhausted);
                break;
            }
            let record = sample(state, &tc, &space, &fom, options.exec, epoch)?;
            progress(TrainEvent::Sample(&record));
        }
        if let (Some(tol), Some(e)) = (tc.termination.tol, state.db.sampler.e_v_max) {
            if e <= tol && state.db.sampler.level == 2 {
                state.stop = Some(StopReason::Tolerance);
            }
        }
    }
    Ok(())
}

fn sample(
    state: &mut TrainState,
    tc: &TrainConfig,
    space: &DiscreteParamSpace,
    fom: &Fom,
    exec: Execution,
    epoch: usize,
) -> Result<AuditRecord> {
    // work on a copy so a failed FOM solve leaves the database untouched
    let mut db = state.db.clone();
    let iter = db.sampler.iteration + 1;
    let out = greedy_step(
        &mut db,
        space,
        &state.net,
        &state.library,
        fom,
        GreedySettings {
            k: tc.k_train,
            n_ts: tc.n_ts,
            tol: tc.termination.tol,
            exec,
        },
    )?;
    state.db = db;
    let record = AuditRecord {
        iter,
        epoch,
        chosen_index: out.chosen,
        chosen_param: space.point(out.chosen).coords.clone(),
        e_res_max: out.chosen_indicator,
        e_v_max: out.e_v_max,
        subset_size: out.subset_size,
        level: out.level,
        promoted: out.promoted,
        n_samples: state.db.len(),
        config_hash: state.config_hash.clone(),
    };
    state.audit.push(record.clone());
    Ok(record)
}

/// Shuffle seed of one epoch.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add(0xD1B5_4A32_D192_ED03) ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_epoch(state: &mut TrainState, tc: &TrainConfig, epoch: usize) -> Result<EpochLoss> {
    let mut order: Vec<(u32, u32)> = state
        .db
        .trajectories
        .iter()
        .enumerate()
        .flat_map(|(s, t)| (0..t.snapshots.ncols() as u32).map(move |c| (s as u32, c)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(tc.seed, epoch));
    order.shuffle(&mut rng);

    let n_u = state.net.input_dim();
    let total = order.len();
    let mut acc = LossBreakdown::default();
    for chunk in order.chunks(tc.batch_size.max(1)) {
        let b = chunk.len();
        let mut u = Array2::<f64>::zeros((n_u, b));
        let mut u_dot = Array2::<f64>::zeros((n_u, b));
        let mut owner = Vec::with_capacity(b);
        for (j, &(s, c)) in chunk.iter().enumerate() {
            let t = &state.db.trajectories[s as usize];
            u.column_mut(j).assign(&t.snapshots.column(c as usize));
            u_dot
                .column_mut(j)
                .assign(&t.derivatives.column(c as usize));
            owner.push(s as usize);
        }
        let batch = Batch { u, u_dot, owner };
        let (l, grads) = loss_and_gradients(
            &state.net,
            &state.library,
            &state.db.coeffs,
            &batch,
            tc.loss,
        )?;
        let w = b as f64 / total as f64;
        acc.total += w * l.total;
        acc.recon += w * l.recon;
        acc.zdot += w * l.zdot;
        acc.udot += w * l.udot;

        let mut params = state.net.tensors_mut();
        params.extend(
            state
                .db
                .coeffs
                .iter_mut()
                .map(|x| x.as_slice_mut().expect("standard layout")),
        );
        adam_step(&mut state.adam, &mut params, &grads.tensors())?;
    }
    Ok(EpochLoss {
        epoch,
        n_samples: state.db.len(),
        loss: acc,
    })
}

/// Writes the audit log as JSON lines.
pub fn write_audit_log(path: &Path, records: &[AuditRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_audit_log(path: &Path) -> Result<Vec<AuditRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Per-epoch loss CSV; the first line carries the config hash.
pub fn write_loss_csv(path: &Path, losses: &[EpochLoss], config_hash: &str) -> Result<()> {
    let mut out = format!("# config_hash={config_hash}\nepoch,n_samples,loss,recon,zdot,udot\n");
    for l in losses {
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e}\n",
            l.epoch, l.n_samples, l.loss.total, l.loss.recon, l.loss.zdot, l.loss.udot
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GLSDCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// "row-major" or "col-major".
    layout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryEntry {
    param: ParamPoint,
    dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config_hash: String,
    config: RunConfig,
    layer_spec: LayerSpec,
    library: BasisLibrary,
    loss_weights: LossWeights,
    optimizer: AdamConfig,
    optimizer_step: u64,
    epoch: usize,
    samples: SampleSet,
    sampler: SamplerState,
    stop: Option<StopReason>,
    trajectories: Vec<TrajectoryEntry>,
    losses: Vec<EpochLoss>,
    audit: Vec<AuditRecord>,
    tensors: Vec<TensorEntry>,
    blob_sha256: String,
}

fn push_row_major(
    name: String,
    data: &[f64],
    rows: usize,
    cols: usize,
    table: &mut Vec<TensorEntry>,
    blob: &mut Vec<u8>,
) {
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    table.push(TensorEntry {
        name,
        rows,
        cols,
        layout: "row-major".into(),
    });
}

/// Saves `state` as one file: magic, version, manifest length, JSON
/// manifest, then all tensors as little-endian f64.
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let mut table = Vec::new();
    let mut blob = Vec::new();
    for (part, mlp) in [
        ("encoder", &state.net.encoder),
        ("decoder", &state.net.decoder),
    ] {
        for (l, layer) in mlp.layers.iter().enumerate() {
            let (r, c) = layer.weight.dim();
            push_row_major(
                format!("{part}.{l}.weight"),
                layer.weight.as_slice().unwrap(),
                r,
                c,
                &mut table,
                &mut blob,
            );
            push_row_major(
                format!("{part}.{l}.bias"),
                layer.bias.as_slice().unwrap(),
                r,
                1,
                &mut table,
                &mut blob,
            );
        }
    }
    for (i, xi) in state.db.coeffs.iter().enumerate() {
        let (r, c) = xi.dim();
        push_row_major(
            format!("xi.{i}"),
            xi.as_slice().unwrap(),
            r,
            c,
            &mut table,
            &mut blob,
        );
    }
    for (i, (m, v)) in state.adam.m.iter().zip(&state.adam.v).enumerate() {
        push_row_major(format!("adam.m.{i}"), m, m.len(), 1, &mut table, &mut blob);
        push_row_major(format!("adam.v.{i}"), v, v.len(), 1, &mut table, &mut blob);
    }
    let mut trajectories = Vec::new();
    for (i, t) in state.db.trajectories.iter().enumerate() {
        for (kind, m) in [("u", &t.snapshots), ("udot", &t.derivatives)] {
            matrix_to_bytes(m, &mut blob);
            table.push(TensorEntry {
                name: format!("trajectory.{i}.{kind}"),
                rows: m.nrows(),
                cols: m.ncols(),
                layout: "col-major".into(),
            });
        }
        trajectories.push(TrajectoryEntry {
            param: t.param.clone(),
            dt: t.dt,
        });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config_hash: state.config_hash.clone(),
        config: state.config.clone(),
        layer_spec: state.net.spec.clone(),
        library: state.library,
        loss_weights: state.config.train_config()?.loss,
        optimizer: state.adam.config,
        optimizer_step: state.adam.step,
        epoch: state.epoch,
        samples: state.db.samples.clone(),
        sampler: state.db.sampler.clone(),
        stop: state.stop,
        trajectories,
        losses: state.losses.clone(),
        audit: state.audit.clone(),
        tensors: table,
        blob_sha256: hex(&Sha256::digest(&blob)),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    write_atomic(path, &out)
}

struct BlobReader<'a> {
    path: &'a Path,
    blob: &'a [u8],
    pos: usize,
    entries: std::slice::Iter<'a, TensorEntry>,
}

impl<'a> BlobReader<'a> {
    fn next(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<(&'a TensorEntry, &'a [u8])> {
        let e = self
            .entries
            .next()
            .ok_or_else(|| Error::format(self.path, format!("tensor table ends before {name}")))?;
        if e.name != name || e.rows != rows || e.cols != cols {
            return Err(Error::format(
                self.path,
                format!(
                    "expected tensor {name} ({rows}x{cols}), found {} ({}x{})",
                    e.name, e.rows, e.cols
                ),
            ));
        }
        let len = rows * cols * 8;
        let bytes = self
            .blob
            .get(self.pos..self.pos + len)
            .ok_or_else(|| Error::format(self.path, "tensor data truncated"))?;
        self.pos += len;
        Ok((e, bytes))
    }

    fn vec(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let (_, bytes) = self.next(name, rows, cols)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let (e, bytes) = self.next(name, rows, cols)?;
        if e.layout == "col-major" {
            return matrix_from_bytes(bytes, (rows, cols))
                .ok_or_else(|| Error::format(self.path, "bad matrix"));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::format(self.path, e.to_string()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let trunc = || Error::format(path, "file truncated");
    if bytes.len() < 20 {
        return Err(trunc());
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let json = bytes
        .get(20..20usize.saturating_add(mlen))
        .ok_or_else(trunc)?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::format(path, format!("manifest: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            found: manifest.version,
        });
    }
    let blob = &bytes[20 + mlen..];
    let expected_len: usize = manifest.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if blob.len() < expected_len {
        return Err(trunc());
    }
    if blob.len() > expected_len {
        return Err(Error::format(path, "trailing bytes after tensor data"));
    }
    if hex(&Sha256::digest(blob)) != manifest.blob_sha256 {
        return Err(Error::format(path, "tensor checksum mismatch"));
    }

    let spec = manifest.layer_spec.clone();
    spec.validate()?;
    let mut rd = BlobReader {
        path,
        blob,
        pos: 0,
        entries: manifest.tensors.iter(),
    };
    let mut read_mlp =
        |part: &str, widths: &[usize], acts: &[crate::nn::Activation]| -> Result<Mlp> {
            let mut layers = Vec::new();
            for (l, (w, &activation)) in widths.windows(2).zip(acts).enumerate() {
                let weight = rd.matrix(&format!("{part}.{l}.weight"), w[1], w[0])?;
                let bias = rd.vec(&format!("{part}.{l}.bias"), w[1], 1)?.into();
                layers.push(Dense {
                    weight,
                    bias,
                    activation,
                });
            }
            Ok(Mlp { layers })
        };
    let encoder = read_mlp("encoder", &spec.widths, &spec.activations)?;
    let dec_widths: Vec<usize> = spec.widths.iter().rev().copied().collect();
    let dec_acts = {
        let probe = Autoencoder::init(&spec, 0)?;
        probe
            .decoder
            .layers
            .iter()
            .map(|l| l.activation)
            .collect::<Vec<_>>()
    };
    let decoder = read_mlp("decoder", &dec_widths, &dec_acts)?;
    let net = Autoencoder::from_parts(spec, encoder, decoder)?;

    let lib = manifest.library;
    lib.validate()?;
    let n = manifest.samples.len();
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n {
        coeffs.push(rd.matrix(&format!("xi.{i}"), lib.n_terms(), lib.latent_dim)?);
    }
    let n_tensors = net.tensors().len() + n;
    let sizes: Vec<usize> = net
        .tensors()
        .iter()
        .map(|t| t.len())
        .chain(coeffs.iter().map(|c| c.len()))
        .collect();
    let mut adam = AdamState::new(manifest.optimizer);
    adam.step = manifest.optimizer_step;
    let n_moments = manifest
        .tensors
        .iter()
        .filter(|t| t.name.starts_with("adam.m."))
        .count();
    if n_moments > n_tensors {
        return Err(Error::format(
            path,
            "more optimizer moments than parameters",
        ));
    }
    for (i, &len) in sizes.iter().enumerate().take(n_moments) {
        adam.m.push(rd.vec(&format!("adam.m.{i}"), len, 1)?);
        adam.v.push(rd.vec(&format!("adam.v.{i}"), len, 1)?);
    }
    if manifest.trajectories.len() != n {
        return Err(Error::format(
            path,
            "trajectory count differs from sample count",
        ));
    }
    let n_u = net.input_dim();
    let mut trajectories = Vec::with_capacity(n);
    for (i, meta) in manifest.trajectories.iter().enumerate() {
        let cols = manifest
            .tensors
            .iter()
            .find(|t| t.name == format!("trajectory.{i}.u"))
            .map(|t| t.cols)
            .ok_or_else(|| Error::format(path, format!("missing trajectory {i}")))?;
        trajectories.push(Trajectory {
            snapshots: rd.matrix(&format!("trajectory.{i}.u"), n_u, cols)?,
            derivatives: rd.matrix(&format!("trajectory.{i}.udot"), n_u, cols)?,
            param: meta.param.clone(),
            dt: meta.dt,
        });
    }
    if rd.entries.next().is_some() {
        return Err(Error::format(path, "unexpected extra tensors"));
    }

    let db = TrainingDatabase {
        samples: manifest.samples,
        trajectories,
        coeffs,
        sampler: manifest.sampler,
    };
    db.check_aligned()?;
    Ok(TrainState {
        config: manifest.config,
        config_hash: manifest.config_hash,
        net,
        library: lib,
        adam,
        db,
        epoch: manifest.epoch,
        losses: manifest.losses,
        audit: manifest.audit,
        stop: manifest.stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::fom::{FomConfig, FomConfig1D};

    /// Small but complete configuration that trains in well under a second.
    pub(crate) fn tiny() -> RunConfig {
        let mut c = RunConfig::desk();
        c.grid.counts = vec![4, 4];
        c.fom = FomConfig::Burgers1d(FomConfig1D::new(21, 0.05, 10));
        c.network.hidden = vec![8];
        c.network.latent_dim = 2;
        c.training.n_up = 3;
        c.training.batch_size = 16;
        c.training.n_subset = 3;
        c.training.n_mu_max = Some(6);
        c.training.n_epoch_max = 40;
        c.training.n_ts = Some(2);
        c
    }

    #[test]
    fn zero_epochs_returns_corners() {
        let mut c = tiny();
        c.training.n_epoch_max = 0;
        let s = train(&c, &TrainOptions::default()).unwrap();
        assert_eq!(s.db.len(), 4);
        assert_eq!(s.epoch, 0);
        assert_eq!(s.stop, Some(StopReason::MaxEpochs));
        assert_eq!(
            s.net,
            Autoencoder::init(&s.net.spec, c.training.seed).unwrap()
        );
        assert!(s.db.coeffs.iter().all(|x| x.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn n_mu_max_gives_exact_count() {
        for m in [4, 5, 7] {
            let mut c = tiny();
            c.training.n_mu_max = Some(m);
            c.training.n_epoch_max = 1000;
            let s = train(&c, &TrainOptions::default()).unwrap();
            assert_eq!(s.db.len(), m);
            assert_eq!(s.stop, Some(StopReason::MaxSamples));
            assert_eq!(s.db.coeffs.len(), m);
            assert_eq!(s.epoch, (m - 4 + 1) * c.training.n_up);
        }
    }

    #[test]
    fn infinite_tol_stops_after_first_sampling() {
        let mut c = tiny();
        c.training.tol = Some(f64::INFINITY);
        let s = train(&c, &TrainOptions::default()).unwrap();
        assert_eq!(s.stop, Some(StopReason::Tolerance));
        assert_eq!(s.audit.len(), 1);
        assert_eq!(s.epoch, c.training.n_up);
        assert_eq!(s.db.sampler.level, 2);
        assert_eq!(s.db.sampler.subset_size, 6);
    }

    #[test]
    fn trajectories_are_never_modified() {
        let c = tiny();
        let s = train(&c, &TrainOptions::default()).unwrap();
        let fom = c.build_fom().unwrap();
        for t in &s.db.trajectories {
            assert_eq!(*t, fom.solve(&t.param).unwrap());
        }
        let space = c.space().unwrap();
        for (t, &i) in s.db.trajectories.iter().zip(s.db.samples.indices()) {
            assert_eq!(t.param, *space.point(i));
        }
    }

    #[test]
    fn loss_decreases() {
        let mut c = tiny();
        c.training.n_mu_max = Some(4);
        c.training.n_up = 200;
        c.training.lr = 3e-3;
        let s = train(&c, &TrainOptions::default()).unwrap();
        let first = s.losses.first().unwrap().loss.total;
        let last = s.losses.last().unwrap().loss.total;
        assert!(last < first / 10.0, "{first} -> {last}");
    }

    #[test]
    fn uniform_mode_trains_fixed_set() {
        let mut c = tiny();
        c.sampling = SamplingConfig::Uniform { counts: vec![2, 3] };
        c.training.n_epoch_max = 7;
        let s = train(&c, &TrainOptions::default()).unwrap();
        assert_eq!(s.db.len(), 6);
        assert_eq!(s.epoch, 7);
        assert!(s.audit.is_empty());
        assert_eq!(s.stop, Some(StopReason::MaxEpochs));
    }

    #[test]
    fn reruns_and_modes_agree() {
        let c = tiny();
        let a = train(&c, &TrainOptions::default()).unwrap();
        let b = train(
            &c,
            &TrainOptions {
                exec: Execution::Sequential,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = tiny();
        let s = train(&c, &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        save_checkpoint(&p, &s).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, s);
        let p2 = dir.path().join("again.ckpt");
        save_checkpoint(&p2, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let c = tiny();
        let full = train(&c, &TrainOptions::default()).unwrap();
        let mut short = c.clone();
        short.training.n_epoch_max = 7;
        let mut part = train(&short, &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("part.ckpt");
        save_checkpoint(&p, &part).unwrap();
        part = load_checkpoint(&p).unwrap();
        part.config = c.clone();
        part.config_hash = c.hash().unwrap();
        part.stop = None;
        run(&mut part, &TrainOptions::default(), &mut |_| {}).unwrap();
        assert_eq!(part.net, full.net);
        assert_eq!(part.db, full.db);
        assert_eq!(part.losses, full.losses);
    }

    #[test]
    fn checkpoint_errors() {
        let mut c = tiny();
        c.training.n_epoch_max = 2;
        let s = train(&c, &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &s).unwrap();
        let bytes = fs::read(&p).unwrap();

        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
        fs::write(&p, &bytes[..30]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));

        let mut v = bytes.clone();
        v[8..12].copy_from_slice(&7u32.to_le_bytes());
        fs::write(&p, &v).unwrap();
        assert!(matches!(
            load_checkpoint(&p),
            Err(Error::VersionMismatch {
                expected: 1,
                found: 7,
                ..
            })
        ));

        let mut v = bytes.clone();
        let last = v.len() - 1;
        v[last] ^= 1;
        fs::write(&p, &v).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn divergence_leaves_partial_checkpoint() {
        let mut c = tiny();
        c.training.lr = 1e200;
        c.training.n_epoch_max = 50;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("partial.ckpt");
        let err = train(
            &c,
            &TrainOptions {
                failure_checkpoint: Some(p.clone()),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(_)), "{err}");
        let back = load_checkpoint(&p).unwrap();
        assert!(back.stop.is_none());
    }

    #[test]
    fn logs_carry_hash() {
        let c = tiny();
        let s = train(&c, &TrainOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("audit.jsonl");
        write_audit_log(&a, &s.audit).unwrap();
        assert_eq!(read_audit_log(&a).unwrap(), s.audit);
        assert!(s.audit.iter().all(|r| r.config_hash == s.config_hash));
        let l = dir.path().join("loss.csv");
        write_loss_csv(&l, &s.losses, &s.config_hash).unwrap();
        let text = fs::read_to_string(&l).unwrap();
        assert!(text.starts_with(&format!("# config_hash={}\n", s.config_hash)));
        assert_eq!(text.lines().count(), 2 + s.losses.len());
    }
}
