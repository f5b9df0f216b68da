//! Run configuration: a TOML file with a global `seed` and one table per
//! command. Command-line flags override file values; the merged result is
//! written back as `config.toml` in the output directory.

use std::path::{Path, PathBuf};

use prefgame_core::models::ModelKind;
use prefgame_core::selfplay::{StepRule, StepSize};
use prefgame_core::synthdata::SynthMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_data: Option<GenDataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selfplay: Option<SelfplayConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeConfig {
    /// Score matrix file.
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub mode: SynthMode,
    pub count: usize,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self { mode: SynthMode::DominantCycle, count: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub dataset: PathBuf,
    pub kind: ModelKind,
    /// `1` for bt, `2d` for gpm, `2d+1` for hrc.
    pub dim: String,
    pub feature_dim: usize,
    pub context_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub gate_init: f64,
    pub init_scale: f64,
    pub tau: f64,
    pub clip: f64,
    pub unit_norm: bool,
    pub train_weights: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            kind: ModelKind::Hrc,
            dim: "2+1".into(),
            feature_dim: 8,
            context_dim: 2,
            learning_rate: 0.5,
            epochs: 3000,
            batch_size: 0,
            c1: 3.0,
            c2: 1.0,
            gate_init: 0.3,
            init_scale: 0.1,
            tau: 0.1,
            clip: 10.0,
            unit_norm: true,
            train_weights: false,
        }
    }
}

impl FitConfig {
    /// Number of 2-D subspaces implied by `dim`.
    pub fn subspaces(&self) -> Result<usize, CliError> {
        parse_dim(self.kind, &self.dim)
    }
}

/// `bt`: "1"; `gpm`: an even number `2d`; `hrc`: `2d+1`.
pub fn parse_dim(kind: ModelKind, dim: &str) -> Result<usize, CliError> {
    let bad = || CliError::Usage(format!("dimension {dim:?} does not fit a {kind:?} model"));
    let even = |s: &str| -> Result<usize, CliError> {
        let k: usize = s.trim().parse().map_err(|_| bad())?;
        if k == 0 || k % 2 != 0 {
            return Err(bad());
        }
        Ok(k / 2)
    };
    match kind {
        ModelKind::Bt => (dim.trim() == "1").then_some(1).ok_or_else(bad),
        ModelKind::Gpm => even(dim),
        ModelKind::Hrc => {
            let (cyc, one) = dim.split_once('+').ok_or_else(bad)?;
            if one.trim() != "1" {
                return Err(bad());
            }
            even(cyc)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Static,
    Hrc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EstimationKind {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfplayConfig {
    /// Score matrix file; exclusive with `model`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,
    /// Fitted model file written by `fit`; exclusive with `matrix`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Item ids from the fitted model's table forming the action set.
    pub items: Vec<String>,
    /// Context id used to score the items.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub schedule: ScheduleKind,
    pub lambda: f64,
    pub exponent: f64,
    pub eta: StepSize,
    pub iterations: usize,
    pub estimation: EstimationKind,
    pub samples: usize,
    /// Checkpoint stride; absent means powers of two.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl Default for SelfplayConfig {
    fn default() -> Self {
        Self {
            matrix: None,
            model: None,
            items: Vec::new(),
            context: None,
            schedule: ScheduleKind::Hrc,
            lambda: 1.0,
            exponent: 0.5,
            eta: StepSize::Named(StepRule::Theory),
            iterations: 1000,
            estimation: EstimationKind::Exact,
            samples: 1000,
            checkpoint_every: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum WitnessCheck {
    D1Semicircle,
    D2Construction,
    HardCycle,
    Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PatternKind {
    Rps,
    Cycle,
    DominantCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WitnessConfig {
    pub check: WitnessCheck,
    /// Cycle length.
    pub n: usize,
    /// Number of 2-D subspaces.
    pub d: usize,
    /// Item angles for `d1_semicircle`, in radians.
    pub angles: Vec<f64>,
    pub pattern: PatternKind,
    pub restarts: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub sharpness: f64,
}

impl Default for WitnessConfig {
    fn default() -> Self {
        let search = prefgame_core::witnesses::SearchConfig::default();
        Self {
            check: WitnessCheck::D2Construction,
            n: 3,
            d: 2,
            angles: Vec::new(),
            pattern: PatternKind::Rps,
            restarts: search.restarts,
            iterations: search.iterations,
            learning_rate: search.learning_rate,
            sharpness: search.sharpness,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        assert_eq!(parse_dim(ModelKind::Bt, "1").unwrap(), 1);
        assert_eq!(parse_dim(ModelKind::Gpm, "4").unwrap(), 2);
        assert_eq!(parse_dim(ModelKind::Hrc, "2+1").unwrap(), 1);
        assert_eq!(parse_dim(ModelKind::Hrc, "4 + 1").unwrap(), 2);
        for (k, d) in [(ModelKind::Gpm, "3"), (ModelKind::Gpm, "2+1"), (ModelKind::Hrc, "2"), (ModelKind::Hrc, "2+2"), (ModelKind::Bt, "2")] {
            assert!(parse_dim(k, d).is_err(), "{k:?} {d}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("seed = 1\nbogus = 2\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[fit]\nepoch = 3\n").is_err());
        let ok: ConfigFile = toml::from_str("seed = 4\n[fit]\nepochs = 3\n").unwrap();
        assert_eq!(ok.fit.unwrap().epochs, 3);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ConfigFile {
            seed: Some(9),
            selfplay: Some(SelfplayConfig { matrix: Some("m.json".into()), checkpoint_every: Some(10), ..Default::default() }),
            witness: Some(WitnessConfig { angles: vec![0.0, 1.5], ..Default::default() }),
            fit: Some(FitConfig::default()),
            ..Default::default()
        };
        let text = cfg.to_toml();
        let back: ConfigFile = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        let fixed = SelfplayConfig { eta: StepSize::Fixed(0.5), ..Default::default() };
        let text = toml::to_string(&fixed).unwrap();
        assert_eq!(toml::from_str::<SelfplayConfig>(&text).unwrap(), fixed);
    }
}
