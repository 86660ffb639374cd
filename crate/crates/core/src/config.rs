//! JSON run configuration.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::dynamics_id::BasisLibrary;
use crate::error::{Error, Result};
use crate::fom::{Fom, FomConfig, FomConfig1D, FullOrderModel};
use crate::greedy::{default_n_ts, TerminationCriteria};
use crate::nn::{Activation, AdamConfig, LayerSpec, LossWeights};
use crate::parameter_space::{build_grid, DiscreteParamSpace};
use crate::rom::hex;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub grid: GridConfig,
    pub fom: FomConfig,
    pub network: NetworkConfig,
    pub library: LibraryConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[min, max]` per parameter.
    pub ranges: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
    #[serde(default)]
    pub normalize_distances: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryConfig {
    pub poly_order: usize,
    #[serde(default = "yes")]
    pub include_constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub n_up: usize,
    /// Number, `"inf"`, or null to disable.
    #[serde(default, with = "tol_serde")]
    pub tol: Option<f64>,
    #[serde(default)]
    pub n_mu_max: Option<usize>,
    pub n_epoch_max: usize,
    #[serde(default = "one")]
    pub k_train: usize,
    #[serde(default)]
    pub seed: u64,
    pub n_subset: usize,
    /// Transitions in the residual indicator; a tenth of the steps if absent.
    #[serde(default)]
    pub n_ts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingConfig {
    /// Corner samples plus residual-driven greedy additions.
    #[default]
    Greedy,
    /// A fixed lattice of `counts` points per parameter, no greedy loop.
    Uniform { counts: Vec<usize> },
}

fn default_activation() -> Activation {
    Activation::Tanh
}
fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn default_beta() -> f64 {
    LossWeights::default().beta1
}
fn default_lr() -> f64 {
    AdamConfig::default().lr
}
fn default_batch() -> usize {
    256
}

mod tol_serde {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(t) if t.is_infinite() && *t > 0.0 => s.serialize_str("inf"),
            Some(t) => s.serialize_f64(*t),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<f64>, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Num(t)) => Ok(Some(t)),
            Some(Raw::Text(s)) if s == "inf" => Ok(Some(f64::INFINITY)),
            Some(Raw::Text(s)) => Err(serde::de::Error::custom(format!(
                "tol must be a number, \"inf\" or null, got {s:?}"
            ))),
        }
    }
}

/// Everything the training loop needs beyond the model shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_up: usize,
    pub termination: TerminationCriteria,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub k_train: usize,
    pub seed: u64,
    pub n_subset: usize,
    pub n_ts: usize,
    pub sampling: SamplingConfig,
}

impl RunConfig {
    /// Small 1D Burgers setup: 11x11 grid, 201 nodes, 201-50-5 network.
    pub fn desk() -> Self {
        Self {
            version: CONFIG_VERSION,
            grid: GridConfig {
                ranges: vec![(0.7, 0.9), (0.9, 1.1)],
                counts: vec![11, 11],
                normalize_distances: false,
            },
            fom: FomConfig::Burgers1d(FomConfig1D::desk()),
            network: NetworkConfig {
                hidden: vec![50],
                latent_dim: 5,
                activation: Activation::Tanh,
            },
            library: LibraryConfig {
                poly_order: 1,
                include_constant: true,
            },
            training: TrainingConfig {
                beta1: default_beta(),
                beta2: default_beta(),
                lr: default_lr(),
                batch_size: default_batch(),
                n_up: 500,
                tol: None,
                n_mu_max: Some(12),
                n_epoch_max: 100_000,
                k_train: 1,
                seed: 0,
                n_subset: 16,
                n_ts: None,
            },
            sampling: SamplingConfig::Greedy,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<inline>"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            None => return Err(Error::format(path, "missing integer \"version\" field")),
            Some(v) if v != CONFIG_VERSION as u64 => {
                return Err(Error::VersionMismatch {
                    path: path.to_path_buf(),
                    expected: CONFIG_VERSION,
                    found: v.min(u32::MAX as u64) as u32,
                })
            }
            Some(_) => {}
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if t.n_up == 0 {
            return bad("n_up must be at least 1".into());
        }
        if t.batch_size == 0 || t.n_subset == 0 || t.k_train == 0 {
            return bad("batch_size, n_subset and k_train must be positive".into());
        }
        if !(t.lr > 0.0) || !(t.beta1 >= 0.0) || !(t.beta2 >= 0.0) {
            return bad("lr must be positive and beta1, beta2 non-negative".into());
        }
        if let Some(m) = t.n_mu_max {
            if m < 1 {
                return bad("n_mu_max must be positive".into());
            }
        }
        self.termination().validate()?;
        let space = self.space()?;
        let fom = self.build_fom()?;
        if let Some(n) = t.n_ts {
            if n < 1 || n > fom.n_steps() {
                return bad(format!("n_ts = {n} must lie in 1..={}", fom.n_steps()));
            }
        }
        self.layer_spec(fom.state_len())?;
        self.basis_library()?;
        if let SamplingConfig::Uniform { counts } = &self.sampling {
            crate::parameter_space::uniform_indices(&space, counts)?;
        }
        Ok(())
    }

    pub fn space(&self) -> Result<DiscreteParamSpace> {
        Ok(build_grid(&self.grid.ranges, &self.grid.counts)?
            .with_normalized_distances(self.grid.normalize_distances))
    }

    pub fn build_fom(&self) -> Result<Fom> {
        self.fom.build()
    }

    pub fn layer_spec(&self, state_len: usize) -> Result<LayerSpec> {
        let mut widths = vec![state_len];
        widths.extend(&self.network.hidden);
        widths.push(self.network.latent_dim);
        LayerSpec::new(widths, self.network.activation)
    }

    pub fn basis_library(&self) -> Result<BasisLibrary> {
        BasisLibrary::with_constant(
            self.network.latent_dim,
            self.library.poly_order,
            self.library.include_constant,
        )
    }

    pub fn termination(&self) -> TerminationCriteria {
        TerminationCriteria {
            tol: self.training.tol,
            n_mu_max: self.training.n_mu_max,
            n_epoch_max: self.training.n_epoch_max,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let n_steps = self.build_fom()?.n_steps();
        Ok(TrainConfig {
            n_up: t.n_up,
            termination: self.termination(),
            batch_size: t.batch_size,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            loss: LossWeights {
                beta1: t.beta1,
                beta2: t.beta2,
            },
            k_train: t.k_train,
            seed: t.seed,
            n_subset: t.n_subset,
            n_ts: t.n_ts.unwrap_or_else(|| default_n_ts(n_steps)),
            sampling: self.sampling.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_round_trips() {
        let c = RunConfig::desk();
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
        assert_eq!(c.train_config().unwrap().n_ts, 20);
        assert_eq!(c.layer_spec(201).unwrap().widths, vec![201, 50, 5]);
    }

    #[test]
    fn tol_forms() {
        let mut c = RunConfig::desk();
        for (text, want) in [
            ("\"inf\"", Some(f64::INFINITY)),
            ("0.05", Some(0.05)),
            ("null", None),
        ] {
            let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
            v["training"]["tol"] = serde_json::from_str(text).unwrap();
            let back = RunConfig::from_json(&v.to_string()).unwrap();
            assert_eq!(back.training.tol, want);
            assert_eq!(
                RunConfig::from_json(&back.to_json().unwrap()).unwrap(),
                back
            );
        }
        c.training.tol = Some(0.0);
        assert!(c.validate().is_err());
        let mut v: serde_json::Value =
            serde_json::from_str(&RunConfig::desk().to_json().unwrap()).unwrap();
        v["training"]["tol"] = "huge".into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let base: serde_json::Value =
            serde_json::from_str(&RunConfig::desk().to_json().unwrap()).unwrap();
        let mut v = base.clone();
        v["training"]["learning_rate"] = 0.1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        let mut v = base.clone();
        v["extra"] = 1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        let mut v = base.clone();
        v["fom"]["viscosity"] = 1.into();
        assert!(RunConfig::from_json(&v.to_string()).is_err());
        let mut v = base.clone();
        v["version"] = 2.into();
        assert!(matches!(
            RunConfig::from_json(&v.to_string()),
            Err(Error::VersionMismatch {
                expected: 1,
                found: 2,
                ..
            })
        ));
        let mut v = base;
        v.as_object_mut().unwrap().remove("version");
        assert!(matches!(
            RunConfig::from_json(&v.to_string()),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.training.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn uniform_mode_parses() {
        let mut c = RunConfig::desk();
        c.sampling = SamplingConfig::Uniform { counts: vec![4, 3] };
        let back = RunConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back.sampling, c.sampling);
        c.sampling = SamplingConfig::Uniform { counts: vec![4] };
        assert!(c.validate().is_err());
    }

    #[test]
    fn invalid_values() {
        let mut c = RunConfig::desk();
        c.training.n_up = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.training.n_ts = Some(500);
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.library.poly_order = 3;
        assert!(c.validate().is_err());
    }
}
