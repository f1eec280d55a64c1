//! Experiment configuration (TOML). Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{Allocation, DominanceProfile, PopulationSettings};
use crate::matching::MatchingSettings;
use crate::norms::{BlockKind, FrequencyGrid, NormKind, DEFAULT_GRID_POINTS};
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_N_LIST: [usize; 7] = [30, 60, 120, 200, 300, 400, 600];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_list: Vec<usize>,
    pub norm: NormKind,
    pub block: BlockKind,
    /// Pins the worker pool to one thread.
    pub deterministic: bool,
    pub output_dir: PathBuf,
    pub grid: GridSettings,
    pub population: PopulationSettings,
    pub matching: MatchingSettings,
    pub dominance: DominanceSettings,
    pub decay: DecaySettings,
    pub simulation: SimulationSettings,
    pub single_agent: SingleAgentSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: DEFAULT_SEED,
            n_list: DEFAULT_N_LIST.to_vec(),
            norm: NormKind::Hinf,
            block: BlockKind::Two,
            deterministic: false,
            output_dir: PathBuf::from("out"),
            grid: GridSettings::default(),
            population: PopulationSettings::default(),
            matching: MatchingSettings::default(),
            dominance: DominanceSettings::default(),
            decay: DecaySettings::default(),
            simulation: SimulationSettings::default(),
            single_agent: SingleAgentSettings::default(),
        }
    }
}

/// Grid used for every reported ensemble cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub points: usize,
    pub refine: bool,
    pub max_doublings: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            points: DEFAULT_GRID_POINTS,
            refine: true,
            max_doublings: 3,
        }
    }
}

impl GridSettings {
    pub fn build(&self) -> Result<FrequencyGrid> {
        Ok(FrequencyGrid::uniform(self.points)?
            .with_refine(self.refine)
            .with_doublings(self.max_doublings))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub c: f64,
    pub p: f64,
}

impl ProfileSpec {
    pub fn profile(&self) -> Result<DominanceProfile> {
        DominanceProfile::new(self.c, self.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DominanceSettings {
    pub compliant: ProfileSpec,
    pub violating: ProfileSpec,
    /// Off-diagonal rows per column; absent means all `n - 1`.
    pub fanout: Option<usize>,
    /// Sign pattern of the redistributed weights in the scaling study.
    pub allocation: Allocation,
}

impl Default for DominanceSettings {
    fn default() -> Self {
        DominanceSettings {
            compliant: ProfileSpec { c: 1.0, p: 0.25 },
            violating: ProfileSpec { c: 1.0, p: 0.6 },
            fanout: None,
            allocation: Allocation::Signed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecaySettings {
    /// Truncation sizes `M`; each must not exceed the smallest `n`.
    pub m_values: Vec<usize>,
    /// Exponents `p` of `alpha(n) = c n^p`.
    pub exponents: Vec<f64>,
    pub c: f64,
    pub allocation: Allocation,
}

impl Default for DecaySettings {
    fn default() -> Self {
        DecaySettings {
            m_values: vec![1, 10, 30],
            exponents: vec![0.0, 0.25, 0.6],
            c: 1.0,
            allocation: Allocation::Coherent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    /// Sinusoid added to every agent's measurement channel `v`.
    VChannel,
    /// Sinusoid used as a reference for `x_1`; the `z` column reports the
    /// tracking error.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub n_list: Vec<usize>,
    pub horizon: usize,
    pub noise_sigma: f64,
    pub amplitude: f64,
    pub period: f64,
    pub injection: Injection,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            n_list: vec![60, 120],
            horizon: 400,
            noise_sigma: 0.05,
            amplitude: 1.0,
            period: 50.0,
            injection: Injection::VChannel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleAgentSettings {
    pub a: f64,
    pub b: f64,
}

impl Default for SingleAgentSettings {
    fn default() -> Self {
        SingleAgentSettings { a: 1.0, b: 1.0 }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML echo.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_list.is_empty() {
            return bad("n_list is empty".into());
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("n_list must be strictly ascending, got {:?}", self.n_list));
        }
        if self.n_list[0] < 2 {
            return bad("populations need n >= 2".into());
        }
        let n_min = self.n_list[0];
        if let Some(&m) = self.decay.m_values.iter().find(|&&m| m == 0 || m > n_min) {
            return bad(format!("decay M = {m} outside 1..={n_min}"));
        }
        if let Some(k) = self.dominance.fanout {
            if k == 0 || k >= n_min {
                return bad(format!("fanout {k} outside 1..{n_min}"));
            }
        }
        self.dominance.compliant.profile()?;
        self.dominance.violating.profile()?;
        for &p in &self.decay.exponents {
            DominanceProfile::new(self.decay.c, p)?;
        }
        let sim = &self.simulation;
        if sim.horizon == 0 {
            return bad("simulation horizon must be >= 1".into());
        }
        if !(sim.noise_sigma >= 0.0 && sim.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be finite and >= 0", sim.noise_sigma));
        }
        if !(sim.period > 0.0 && sim.amplitude.is_finite()) {
            return bad("sinusoid needs a positive period and finite amplitude".into());
        }
        if sim.n_list.contains(&0) {
            return bad("simulation populations need n >= 1".into());
        }
        let m = &self.matching;
        if m.fir_order == 0 || m.grid_points < 2 || !(m.damping > 0.0 && m.damping <= 1.0) {
            return bad("matching needs fir_order >= 1, grid_points >= 2 and damping in (0, 1]".into());
        }
        if self.grid.points < 2 || self.population.grid_points < 2 {
            return bad("grids need at least 2 points".into());
        }
        if !(self.single_agent.a.is_finite() && self.single_agent.b.is_finite()) {
            return bad("single-agent parameters must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 9\nn_list = [10, 20]\n[dominance]\nfanout = 4\n[decay]\nm_values = [1, 5]\n[simulation]\ninjection = \"reference\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dominance.fanout, Some(4));
        assert_eq!(cfg.dominance.violating.p, 0.6);
        assert_eq!(cfg.simulation.injection, Injection::Reference);
        assert_eq!(cfg.simulation.horizon, 400);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(ExperimentConfig::from_toml_str("sed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[grid]\npoint = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("n_list = [60, 30]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("n_list = [5, 10]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[simulation]\nhorizon = 0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[dominance.compliant]\nc = -1.0\np = 0.1\n").is_err());
    }
}
