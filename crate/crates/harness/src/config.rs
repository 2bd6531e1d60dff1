//! Experiment configuration and the `fast` / `paper` profiles.
//!
//! A config file (JSON or TOML, by extension) only needs the keys it
//! changes; it is merged over the selected profile.

use std::path::Path;

use rhomap_core::nlls::{FitBounds, LmConfig};
use rhomap_core::phantom::PhantomSpec;
use rhomap_core::volume::{DEFAULT_RADIUS, DEFAULT_SIGMA};
use rhomap_core::Exec;
use rhomap_dl::{MlpConfig, TrainConfig, UNetConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Fast,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum I0Source {
    PdSurrogate,
    Tsl0,
}

/// One baseline / weighted image pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Combo {
    pub id: String,
    pub i0: I0Source,
    pub ik_tsl_ms: f64,
}

impl Combo {
    pub fn new(id: &str, i0: I0Source, ik_tsl_ms: f64) -> Self {
        Self {
            id: id.into(),
            i0,
            ik_tsl_ms,
        }
    }

    /// PD or TSL-0 baseline against TSL 10 or TSL 50.
    pub fn standard() -> Vec<Combo> {
        vec![
            Combo::new("pd-10", I0Source::PdSurrogate, 10.0),
            Combo::new("pd-50", I0Source::PdSurrogate, 50.0),
            Combo::new("t0-10", I0Source::Tsl0, 10.0),
            Combo::new("t0-50", I0Source::Tsl0, 50.0),
        ]
    }

    pub fn uses_pd(&self) -> bool {
        self.i0 == I0Source::PdSurrogate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[value(name = "nlls_2pt")]
    Nlls2pt,
    #[value(name = "unet_unmasked")]
    UnetUnmasked,
    #[value(name = "unet_masked")]
    UnetMasked,
    Mlp,
}

impl ModelKind {
    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Nlls2pt => "nlls_2pt",
            ModelKind::UnetUnmasked => "unet_unmasked",
            ModelKind::UnetMasked => "unet_masked",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn is_learned(self) -> bool {
        self != ModelKind::Nlls2pt
    }

    pub(crate) fn code(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Smoothing {
    pub enabled: bool,
    pub radius: usize,
    pub sigma: f64,
}

impl Default for Smoothing {
    fn default() -> Self {
        Self {
            enabled: true,
            radius: DEFAULT_RADIUS,
            sigma: DEFAULT_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Seeds the fold plan and every training run.
    pub seed: u64,
    /// `false` is the single-threaded reference mode.
    pub parallel: bool,
    pub phantom: PhantomSpec,
    pub combos: Vec<Combo>,
    pub smoothing: Smoothing,
    pub bounds: FitBounds,
    pub lm: LmConfig,
    pub unet: UNetConfig,
    pub unet_train: TrainConfig,
    pub mlp: MlpConfig,
    pub mlp_train: TrainConfig,
    /// Learned models competing for "best" in experiment 1 (ranked by mean RPE).
    pub exp1_candidates: Vec<ModelKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Fast)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Fast => Self {
                profile,
                seed: 7,
                parallel: true,
                phantom: PhantomSpec::default(),
                combos: Combo::standard(),
                smoothing: Smoothing::default(),
                bounds: FitBounds::default(),
                lm: LmConfig::default(),
                unet: UNetConfig::fast(),
                unet_train: TrainConfig {
                    epochs: 20,
                    lr: 3e-3,
                    patience: Some(8),
                    ..TrainConfig::default()
                },
                mlp: MlpConfig::default(),
                mlp_train: TrainConfig {
                    epochs: 40,
                    weight_decay: 3e-4,
                    patience: Some(8),
                    ..TrainConfig::default()
                },
                exp1_candidates: vec![ModelKind::UnetUnmasked, ModelKind::Mlp],
            },
            Profile::Paper => {
                let fast = Self::profile(Profile::Fast);
                Self {
                    profile,
                    phantom: PhantomSpec {
                        n_subjects: 40,
                        dims: [128, 128, 16],
                        ..PhantomSpec::default()
                    },
                    unet: UNetConfig::default(),
                    unet_train: TrainConfig {
                        epochs: 1000,
                        lr: 1e-3,
                        patience: Some(150),
                        ..TrainConfig::default()
                    },
                    mlp_train: TrainConfig {
                        epochs: 1000,
                        weight_decay: 3e-4,
                        patience: Some(150),
                        ..TrainConfig::default()
                    },
                    ..fast
                }
            }
        }
    }

    /// Loads `path` (`.json` or `.toml`) merged over `profile`; the file may
    /// also name its own profile, which then takes precedence.
    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| rhomap_core::Error::io(path, e))?;
        let overlay: Value = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| HarnessError::config(e.to_string()))?,
            Some("json") => serde_json::from_str(&text).map_err(|e| HarnessError::config(e.to_string()))?,
            other => return Err(HarnessError::config(format!("unsupported config extension {other:?}"))),
        };
        Self::from_overlay(overlay, profile)
    }

    pub fn from_overlay(overlay: Value, profile: Option<Profile>) -> Result<Self> {
        let file_profile = overlay
            .get("profile")
            .map(|p| serde_json::from_value::<Profile>(p.clone()))
            .transpose()
            .map_err(|e| HarnessError::config(e.to_string()))?;
        let chosen = profile.or(file_profile).unwrap_or_default();
        let mut merged = serde_json::to_value(Self::profile(chosen)).expect("config serializes");
        merge(&mut merged, overlay);
        let mut cfg: Self = serde_json::from_value(merged).map_err(|e| HarnessError::config(e.to_string()))?;
        cfg.profile = chosen;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.phantom.seed = seed;
        self
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        let sched = &self.phantom.schedule;
        if sched.position(0.0).is_none() {
            return Err(HarnessError::config("schedule must include TSL 0"));
        }
        sched.require_fit()?;
        if self.combos.is_empty() {
            return Err(HarnessError::config("no combos"));
        }
        for c in &self.combos {
            if sched.position(c.ik_tsl_ms).is_none() || c.ik_tsl_ms <= 0.0 {
                return Err(HarnessError::config(format!(
                    "combo {} uses TSL {} which is not a positive scheduled TSL",
                    c.id, c.ik_tsl_ms
                )));
            }
        }
        let mut ids: Vec<&str> = self.combos.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.combos.len() {
            return Err(HarnessError::config("duplicate combo ids"));
        }
        if self.exp1_candidates.iter().any(|m| !m.is_learned()) || self.exp1_candidates.is_empty() {
            return Err(HarnessError::config("exp1_candidates must be learned models"));
        }
        self.unet.validate()?;
        self.unet_train.validate()?;
        self.mlp.validate()?;
        self.mlp_train.validate()?;
        Ok(())
    }

    pub fn combo(&self, id: &str) -> Result<(usize, &Combo)> {
        self.combos
            .iter()
            .enumerate()
            .find(|(_, c)| c.id == id)
            .ok_or_else(|| HarnessError::Usage(format!("unknown combo {id}")))
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
