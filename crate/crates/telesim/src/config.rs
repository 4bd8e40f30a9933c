//! Experiment configuration: one structured TOML file per experiment, with
//! built-in defaults, named estimator presets, and seeded material sampling.
//!
//! Every field has a default, so a config file only needs to state
//! deviations. The effective configuration is hashed into run metadata.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::environment::TissueParams;
use crate::error::{Result, SimError};
use crate::estimation::{EstimatorKind, EstimatorSpec};
use crate::neural::Mlp;
use crate::passivity::PoPcConfig;
use crate::plant::HumanSsmParams;

/// Current config file schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Loop rates, scaling, and run guards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Fine clock from which every task rate derives (Hz). Must be an exact
    /// multiple of each loop rate below. The default is the least common
    /// multiple of 1000, 500, 400, and 60.
    pub master_rate_hz: u32,
    /// Operator-model integration rate (Hz).
    pub plant_rate_hz: u32,
    /// Passivity observer/controller rate (Hz).
    pub popc_rate_hz: u32,
    /// Log sampling rate (Hz).
    pub log_rate_hz: u32,
    /// Master-to-follower displacement scale.
    pub scale: f64,
    /// Base seed for every derived random stream.
    pub seed: u64,
    /// Apply the passivating force to the displayed feedback.
    pub popc_enabled: bool,
    /// Run length (s); 0 means the protocol duration.
    pub duration_s: f64,
    /// Divergence guard on operator position (m).
    pub x_bound_m: f64,
    /// Divergence guard on operator velocity (m/s).
    pub v_bound_m_s: f64,
    /// Follower first-order lag time constant (s); 0 = ideal tracking.
    pub psm_lag_tau_s: f64,
    /// Stiffness scale per newton of pretension (k1 *= factor^N).
    pub pretension_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            master_rate_hz: 6000,
            plant_rate_hz: 500,
            popc_rate_hz: 1000,
            log_rate_hz: 1000,
            scale: 0.2,
            seed: 7,
            popc_enabled: false,
            duration_s: 0.0,
            x_bound_m: 1.0,
            v_bound_m_s: 50.0,
            psm_lag_tau_s: 0.0,
            pretension_factor: 1.35,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.duration_s < 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "duration_s must be non-negative, got {}",
                self.duration_s
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(SimError::InvalidConfig(
                "seed must fit in 63 bits for config serialization".into(),
            ));
        }
        if !(self.x_bound_m > 0.0 && self.v_bound_m_s > 0.0) {
            return Err(SimError::InvalidConfig(
                "divergence bounds must be positive".into(),
            ));
        }
        if self.psm_lag_tau_s < 0.0 || !(self.pretension_factor > 0.0) {
            return Err(SimError::InvalidConfig(
                "psm_lag_tau_s must be >= 0 and pretension_factor > 0".into(),
            ));
        }
        for (task, rate) in [
            ("plant", self.plant_rate_hz),
            ("popc", self.popc_rate_hz),
            ("log", self.log_rate_hz),
        ] {
            self.check_divisible(task, rate)?;
        }
        Ok(())
    }

    pub fn check_divisible(&self, task: &'static str, rate: u32) -> Result<()> {
        if rate == 0 || self.master_rate_hz % rate != 0 {
            return Err(SimError::RateNotDivisible {
                task,
                rate,
                master: self.master_rate_hz,
            });
        }
        Ok(())
    }
}

/// Nominal tissue plus the seeded jitter defining the material family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TissueConfig {
    pub k1: f64,
    pub k3: f64,
    pub b_env: f64,
    pub tension_asymmetry: f64,
    /// Relative spread of the per-material parameter jitter.
    pub material_jitter: f64,
    /// Number of sampled materials.
    pub materials: u32,
}

impl Default for TissueConfig {
    fn default() -> Self {
        let t = TissueParams::default();
        Self {
            k1: t.k1,
            k3: t.k3,
            b_env: t.b_env,
            tension_asymmetry: t.tension_asymmetry,
            material_jitter: 0.10,
            materials: 3,
        }
    }
}

impl TissueConfig {
    pub fn nominal(&self) -> TissueParams {
        TissueParams {
            k1: self.k1,
            k3: self.k3,
            b_env: self.b_env,
            tension_asymmetry: self.tension_asymmetry,
            material_id: 0,
        }
    }

    /// The per-material parameter sets: multiplicative jitter around the
    /// nominal values, drawn from a stream derived from `seed` alone so every
    /// estimator faces the same materials.
    pub fn sample_materials(&self, seed: u64) -> Vec<TissueParams> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x6d61_7465_7269_616c);
        (1..=self.materials)
            .map(|id| {
                let mut jitter = || 1.0 + self.material_jitter * rng.gen_range(-1.0..1.0);
                TissueParams {
                    k1: self.k1 * jitter(),
                    k3: self.k3 * jitter(),
                    b_env: self.b_env * jitter(),
                    tension_asymmetry: self.tension_asymmetry,
                    material_id: id,
                }
            })
            .collect()
    }
}

/// Hold detection and spectrum settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Movement onset threshold as a fraction of peak commanded speed.
    pub theta_on_frac: f64,
    /// Movement offset threshold as a fraction of peak commanded speed.
    pub theta_off_frac: f64,
    /// Quiet time required to confirm an offset (s).
    pub min_hold_s: f64,
    /// Margin trimmed from both ends of each detected hold (s).
    pub settle_margin_s: f64,
    /// Common spectrum grid upper edge (Hz).
    pub spectrum_f_max_hz: f64,
    /// Common spectrum grid spacing (Hz).
    pub spectrum_df_hz: f64,
    /// Cutoff of the passivation-effort conditioning filter (Hz).
    pub effort_cutoff_hz: f64,
    /// Displacement bin width for stiffness curves (m).
    pub stiffness_bin_m: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            theta_on_frac: 0.05,
            theta_off_frac: 0.02,
            min_hold_s: 0.5,
            settle_margin_s: 0.25,
            spectrum_f_max_hz: 15.0,
            spectrum_df_hz: 0.25,
            effort_cutoff_hz: 100.0,
            stiffness_bin_m: 0.0005,
        }
    }
}

/// Network shape and optimizer settings for the trainable estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralConfig {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l1: f64,
    pub batch_size: usize,
    /// Update rate of the network estimator (Hz).
    pub rate_hz: u32,
    /// Inference latency (s), rounded to whole frames of the rate.
    pub latency_s: f64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            epochs: 50,
            learning_rate: 0.001,
            l1: 0.001,
            batch_size: 64,
            rate_hz: 60,
            // end-to-end capture/inference/display delay of the estimation
            // pipeline, realized as whole frames of the update rate
            latency_s: 0.1,
        }
    }
}

impl NeuralConfig {
    pub fn train_config(&self, seed: u64) -> crate::neural::TrainConfig {
        crate::neural::TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l1: self.l1,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Serialized estimator preset, resolved to a runtime spec on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorPreset {
    GroundTruth {
        rate_hz: u32,
        #[serde(default)]
        noise_sd: f64,
    },
    Dynamic {
        rate_hz: u32,
        cutoff_hz: f64,
        #[serde(default)]
        bias: f64,
        #[serde(default)]
        torque_noise_sd: f64,
    },
    Behavioral {
        rate_hz: u32,
        gain: f64,
        #[serde(default)]
        bias: f64,
        #[serde(default)]
        latency_s: f64,
        #[serde(default = "default_saturation")]
        saturation_force: f64,
        #[serde(default)]
        velocity_overshoot_gain: f64,
        #[serde(default)]
        hysteresis_offset: f64,
    },
    Neural {
        rate_hz: u32,
        checkpoint: PathBuf,
        #[serde(default)]
        latency_s: f64,
    },
}

fn default_saturation() -> f64 {
    f64::INFINITY
}

impl EstimatorPreset {
    pub fn rate_hz(&self) -> u32 {
        match self {
            EstimatorPreset::GroundTruth { rate_hz, .. }
            | EstimatorPreset::Dynamic { rate_hz, .. }
            | EstimatorPreset::Behavioral { rate_hz, .. }
            | EstimatorPreset::Neural { rate_hz, .. } => *rate_hz,
        }
    }

    /// Resolve to a runtime spec, loading the checkpoint for network presets.
    pub fn to_spec(&self, id: &str) -> Result<EstimatorSpec> {
        let kind = match self {
            EstimatorPreset::GroundTruth { noise_sd, .. } => EstimatorKind::GroundTruth {
                noise_sd: *noise_sd,
            },
            EstimatorPreset::Dynamic {
                cutoff_hz,
                bias,
                torque_noise_sd,
                ..
            } => EstimatorKind::DynamicSurrogate {
                cutoff_hz: *cutoff_hz,
                bias: *bias,
                torque_noise_sd: *torque_noise_sd,
            },
            EstimatorPreset::Behavioral {
                gain,
                bias,
                latency_s,
                saturation_force,
                velocity_overshoot_gain,
                hysteresis_offset,
                ..
            } => EstimatorKind::Behavioral {
                gain: *gain,
                bias: *bias,
                latency: *latency_s,
                saturation_force: *saturation_force,
                velocity_overshoot_gain: *velocity_overshoot_gain,
                hysteresis_offset: *hysteresis_offset,
            },
            EstimatorPreset::Neural {
                checkpoint,
                latency_s,
                ..
            } => EstimatorKind::Neural {
                model: Arc::new(Mlp::load(checkpoint)?),
                latency: *latency_s,
            },
        };
        let spec = EstimatorSpec {
            id: id.to_string(),
            rate_hz: self.rate_hz(),
            kind,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Study-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Repetitions per cell.
    pub repetitions: u32,
    /// Execute cells in a seeded random order.
    pub randomize_order: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            repetitions: 3,
            randomize_order: true,
        }
    }
}

/// Top-level experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub sim: SimConfig,
    pub plant: HumanSsmParams,
    pub tissue: TissueConfig,
    pub popc: PoPcConfig,
    pub analysis: AnalysisConfig,
    pub neural: NeuralConfig,
    pub plan: PlanConfig,
    /// Named estimator presets; the map ordering is the canonical estimator
    /// order for studies.
    pub estimators: BTreeMap<String, EstimatorPreset>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            sim: SimConfig::default(),
            plant: HumanSsmParams::default(),
            tissue: TissueConfig::default(),
            popc: PoPcConfig::default(),
            analysis: AnalysisConfig::default(),
            neural: NeuralConfig::default(),
            plan: PlanConfig::default(),
            estimators: default_presets(),
        }
    }
}

/// Built-in presets: the sensor path plus surrogates for the dynamic-model
/// and learned estimators, each at its documented rate, and a deliberately
/// destabilizing variant used by the stability experiments.
pub fn default_presets() -> BTreeMap<String, EstimatorPreset> {
    let mut m = BTreeMap::new();
    m.insert(
        "fs".to_string(),
        EstimatorPreset::GroundTruth {
            rate_hz: 1000,
            noise_sd: 0.0,
        },
    );
    m.insert(
        "d".to_string(),
        EstimatorPreset::Dynamic {
            rate_hz: 400,
            cutoff_hz: 1.0,
            bias: 0.08,
            torque_noise_sd: 0.02,
        },
    );
    // saturates early and carries a palpation bias: poor stiffness tracking,
    // no oscillation tendency
    m.insert(
        "v".to_string(),
        EstimatorPreset::Behavioral {
            rate_hz: 60,
            gain: 0.9,
            bias: 0.30,
            latency_s: 1.0 / 60.0,
            saturation_force: 2.0,
            velocity_overshoot_gain: 0.0,
            hysteresis_offset: 0.12,
        },
    );
    // fast but overestimates under motion: mild oscillation tendency
    m.insert(
        "s".to_string(),
        EstimatorPreset::Behavioral {
            rate_hz: 500,
            gain: 1.2,
            bias: 0.0,
            latency_s: 0.04,
            saturation_force: 8.0,
            velocity_overshoot_gain: 1.0,
            hysteresis_offset: 0.0,
        },
    );
    // close replication with mild overestimation and frame latency
    m.insert(
        "vs".to_string(),
        EstimatorPreset::Behavioral {
            rate_hz: 60,
            gain: 1.08,
            bias: 0.12,
            latency_s: 1.0 / 60.0,
            saturation_force: 6.0,
            velocity_overshoot_gain: 2.0,
            hysteresis_offset: 0.05,
        },
    );
    // documented destabilizing preset: overestimation plus long latency at a
    // low rate makes the delayed stiffness path inject negative damping, so
    // hold oscillations grow into a saturation-bounded limit cycle
    m.insert(
        "unstable".to_string(),
        EstimatorPreset::Behavioral {
            rate_hz: 60,
            gain: 2.0,
            bias: 0.0,
            latency_s: 0.100,
            saturation_force: 12.0,
            velocity_overshoot_gain: 3.0,
            hysteresis_offset: 0.0,
        },
    );
    m
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SimError::InvalidConfig(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.sim.validate()?;
        self.plant.validate()?;
        self.popc.validate()?;
        self.tissue.nominal().validate()?;
        if self.plan.repetitions == 0 {
            return Err(SimError::InvalidConfig("repetitions must be >= 1".into()));
        }
        for preset in self.estimators.values() {
            self.sim.check_divisible("estimator", preset.rate_hz())?;
        }
        self.sim.check_divisible("neural", self.neural.rate_hz)?;
        Ok(())
    }

    /// Hash of the effective (serialized) configuration; recorded in run
    /// metadata so outputs are traceable to their exact settings.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Look up a named preset.
    pub fn preset(&self, name: &str) -> Result<&EstimatorPreset> {
        self.estimators
            .get(name)
            .ok_or_else(|| SimError::UnknownPreset(name.to_string()))
    }

    /// Resolve preset names to runtime specs in the given order.
    pub fn resolve_estimators(&self, names: &[String]) -> Result<Vec<EstimatorSpec>> {
        names
            .iter()
            .map(|n| self.preset(n)?.to_spec(n))
            .collect()
    }
}

/// Derive a child seed from the base seed and a context label. Streams for
/// different labels are independent; the derivation is stable across runs.
/// Values stay within 63 bits so they survive TOML metadata round trips.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is long enough")) & (i64::MAX as u64)
}
