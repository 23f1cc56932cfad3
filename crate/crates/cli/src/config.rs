//! Run configuration: one JSON document with a block per stage.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surge_core::causal::ForestConfig;
use surge_core::empirics::{Asset, BootstrapConfig};
use surge_core::estimator::{ModelConfig, ScenarioPoint, SweepAxis, TrainConfig};
use surge_core::metrics::{DerDelayModel, SurgeWindow};
use surge_core::mitigation::MitigationPolicies;
use surge_core::projection::{GridConfig, ProjectionSettings, TempBin, Trajectory, WindowName};
use surge_core::synth::io::parse_time;
use surge_core::synth::CityConfig;

/// Invalid configuration; reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Worker thread cap; `None` uses every core.
    pub threads: Option<usize>,
    /// Seed of the synthetic city.
    pub seed: u64,
    pub synth: CityConfig,
    pub metrics: MetricsConfig,
    pub empirics: EmpiricsConfig,
    pub causal: CausalConfig,
    pub estimator: EstimatorConfig,
    pub sweep: SweepConfig,
    pub projection: ProjectionConfig,
    pub mitigation: MitigationPolicies,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("surge_out"),
            threads: None,
            seed: 0,
            synth: CityConfig::default(),
            metrics: MetricsConfig::default(),
            empirics: EmpiricsConfig::default(),
            causal: CausalConfig::default(),
            estimator: EstimatorConfig::default(),
            sweep: SweepConfig::default(),
            projection: ProjectionConfig::default(),
            mitigation: MitigationPolicies::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub window: SurgeWindow,
    /// Reconnection model used for the DER term; defaults to the generator's.
    pub der_delay: Option<DerDelayModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpiricsConfig {
    pub assets: Vec<Asset>,
    pub bootstrap: BootstrapConfig,
    pub percentiles: Vec<f64>,
    pub exceedance_bins: usize,
}

impl Default for EmpiricsConfig {
    fn default() -> Self {
        Self {
            assets: Asset::ALL.to_vec(),
            bootstrap: BootstrapConfig::default(),
            percentiles: vec![70.0, 80.0, 90.0],
            exceedance_bins: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalConfig {
    pub assets: Vec<Asset>,
    pub forest: ForestConfig,
    /// Penetration change the effects are reported per (0.1 = +10 points).
    pub scale: f64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self {
            assets: Asset::ALL.to_vec(),
            forest: ForestConfig::default(),
            scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ScenarioPoint,
    pub axes: Vec<SweepSpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let range = |lo: f64, hi: f64, n: usize| (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Self {
            base: default_sweep_base(),
            axes: vec![
                SweepSpec {
                    axis: SweepAxis::DurationH,
                    values: range(0.5, 8.0, 16),
                },
                SweepSpec {
                    axis: SweepAxis::Hour,
                    values: range(0.0, 23.0, 24),
                },
                SweepSpec {
                    axis: SweepAxis::TempC,
                    values: range(-20.0, 35.0, 12),
                },
            ],
        }
    }
}

/// A cold winter evening with moderate penetrations.
fn default_sweep_base() -> ScenarioPoint {
    ScenarioPoint {
        restoration_time: parse_time("2023-01-16T19:00:00").expect("valid literal"),
        duration_h: 2.0,
        temp_c: -5.0,
        ghi: 0.0,
        precip_water_mm: 8.0,
        r_ev: 0.2,
        r_hp: 0.4,
        r_der: 0.15,
    }
}

/// Single-scenario defaults of `project`; flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioDefaults {
    pub trajectory: String,
    pub window: WindowName,
    pub temp_bin: TempBin,
    pub duration_h: f64,
    pub alpha: f64,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        Self {
            trajectory: "policy".into(),
            window: WindowName::Evening,
            temp_bin: TempBin::Any,
            duration_h: 2.0,
            alpha: 0.3,
            n_draws: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub trajectories: Vec<Trajectory>,
    pub settings: ProjectionSettings,
    pub grid: GridConfig,
    pub scenario: ScenarioDefaults,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            trajectories: vec![Trajectory::baseline(), Trajectory::policy()],
            settings: ProjectionSettings::default(),
            grid: GridConfig::default(),
            scenario: ScenarioDefaults::default(),
        }
    }
}

impl ProjectionConfig {
    pub fn trajectory(&self, name: &str) -> anyhow::Result<Trajectory> {
        match self.trajectories.iter().find(|t| t.name == name) {
            Some(t) => Ok(t.clone()),
            None => Ok(Trajectory::preset(name)?),
        }
    }
}

/// JSON pointer (RFC 6901) of a deserialisation path.
pub(crate) fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        s.push('/');
        match seg {
            Segment::Seq { index } => s.push_str(&index.to_string()),
            Segment::Map { key } => s.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => s.push_str(variant),
            Segment::Unknown => s.push('?'),
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| ConfigError(format!("at {}: {}", pointer(e.path()), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => {
                let cfg = Self::default();
                cfg.validate()?;
                Ok(cfg)
            }
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Semantic checks, reported with the pointer of the offending block.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let at = |ptr: &str, e: surge_core::error::Error| ConfigError(format!("at {ptr}: {e}"));
        if self.synth.n_feeders == 0 || self.synth.n_events == 0 {
            return Err(ConfigError("at /synth: n_feeders and n_events must be >= 1".into()));
        }
        self.synth.params.validate().map_err(|e| at("/synth/params", e))?;
        self.synth.sampling.validate().map_err(|e| at("/synth/sampling", e))?;
        self.metrics.window.validate().map_err(|e| at("/metrics/window", e))?;
        if let Some(d) = &self.metrics.der_delay {
            d.validate().map_err(|e| at("/metrics/der_delay", e))?;
        }
        if self.empirics.bootstrap.iterations < 100 || self.empirics.bootstrap.pair_draws == 0 {
            return Err(ConfigError("at /empirics/bootstrap: iterations must be >= 100 and pair_draws >= 1".into()));
        }
        if self.empirics.exceedance_bins == 0 {
            return Err(ConfigError("at /empirics/exceedance_bins: must be >= 1".into()));
        }
        if let Some(i) = self.empirics.percentiles.iter().position(|q| !(*q > 0.0 && *q < 100.0)) {
            return Err(ConfigError(format!("at /empirics/percentiles/{i}: must lie in (0, 100)")));
        }
        self.causal.forest.validate().map_err(|e| at("/causal/forest", e))?;
        if !(self.causal.scale.is_finite() && self.causal.scale != 0.0) {
            return Err(ConfigError("at /causal/scale: must be finite and non-zero".into()));
        }
        self.estimator.model.validate().map_err(|e| at("/estimator/model", e))?;
        let t = &self.estimator.train;
        if t.epochs == 0 || t.batch_size == 0 || !(t.lr > 0.0) {
            return Err(ConfigError("at /estimator/train: epochs and batch_size must be >= 1, lr > 0".into()));
        }
        if !(t.val_fraction > 0.0 && t.test_fraction > 0.0 && t.val_fraction + t.test_fraction < 1.0) {
            return Err(ConfigError("at /estimator/train: val and test fractions must be > 0 and sum below 1".into()));
        }
        for (i, s) in self.sweep.axes.iter().enumerate() {
            if s.values.is_empty() {
                return Err(ConfigError(format!("at /sweep/axes/{i}/values: must not be empty")));
            }
        }
        for (i, tr) in self.projection.trajectories.iter().enumerate() {
            tr.validate().map_err(|e| at(&format!("/projection/trajectories/{i}"), e))?;
        }
        self.projection
            .settings
            .validate()
            .map_err(|e| at("/projection/settings", e))?;
        let g = &self.projection.grid;
        if let Some(i) = g.alphas.iter().position(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(ConfigError(format!("at /projection/grid/alphas/{i}: α ∈ (0,1]")));
        }
        if let Some(i) = g.durations_h.iter().position(|d| !(*d > 0.0)) {
            return Err(ConfigError(format!("at /projection/grid/durations_h/{i}: must be > 0")));
        }
        if g.n_draws < surge_core::projection::MIN_DRAWS {
            return Err(ConfigError(format!(
                "at /projection/grid/n_draws: must be >= {}",
                surge_core::projection::MIN_DRAWS
            )));
        }
        let s = &self.projection.scenario;
        if !(s.alpha > 0.0 && s.alpha <= 1.0) {
            return Err(ConfigError("at /projection/scenario/alpha: α ∈ (0,1]".into()));
        }
        if s.n_draws < surge_core::projection::MIN_DRAWS || !(s.duration_h > 0.0) {
            return Err(ConfigError("at /projection/scenario: n_draws must be >= 100 and duration_h > 0".into()));
        }
        self.mitigation.ev.validate().map_err(|e| at("/mitigation/ev", e))?;
        if !(self.mitigation.thermostat.offset_c >= 0.0) {
            return Err(ConfigError("at /mitigation/thermostat/offset_c: must be >= 0".into()));
        }
        self.mitigation.der.density.validate().map_err(|e| at("/mitigation/der", e))?;
        if self.threads == Some(0) {
            return Err(ConfigError("at /threads: must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical form of every field that affects artifacts
    /// (everything except the output directory and thread cap).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.threads = None;
        let canonical = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn der_delay(&self) -> DerDelayModel {
        self.metrics.der_delay.unwrap_or(self.synth.params.der_delay)
    }
}
