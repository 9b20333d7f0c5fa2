//! One JSON document describing a whole experiment, and the shipped presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_EVAL_PATHS;
use crate::market::{self, AgentSpec, MarketConfig};
use crate::rollout::Model;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    pub paths: usize,
    pub seed: u64,
    /// Full trajectories written to the per-path CSV.
    pub keep_paths: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { paths: DEFAULT_EVAL_PATHS, seed: 7, keep_paths: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    pub market: MarketConfig,
    pub roster: Vec<AgentSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvalSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Parses and validates. Market violations come back as [`Error::Invalid`].
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| Error::Format { what: "experiment spec".into(), detail: e.to_string() })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        market::ensure_valid(&self.market, &self.roster)?;
        self.train.validate()?;
        if self.evaluation.paths == 0 {
            return Err(Error::Config("evaluation needs at least one path".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.market.clone(), self.roster.clone())
    }

    /// Pretty JSON with every default written out.
    pub fn resolved_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format { what: "experiment spec".into(), detail: e.to_string() })
    }
}

/// Shipped presets by name.
pub const PRESETS: [(&str, &str); 6] = [
    ("quad10", include_str!("../presets/quad10.json")),
    ("quad10_known", include_str!("../presets/quad10_known.json")),
    ("power10", include_str!("../presets/power10.json")),
    ("power2", include_str!("../presets/power2.json")),
    ("power2_known", include_str!("../presets/power2_known.json")),
    ("quad2_smoke", include_str!("../presets/quad2_smoke.json")),
];

pub fn preset(name: &str) -> Result<ExperimentSpec> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}; available: {}", preset_names().join(", "))))?;
    ExperimentSpec::from_json(text)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::DiscriminatorMode;
    use crate::market::{TEN_AGENT_GAMMAS, TEN_AGENT_XIS};

    #[test]
    fn every_preset_validates() {
        for name in preset_names() {
            preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn ten_agent_presets_encode_the_roster() {
        for name in ["quad10", "quad10_known", "power10"] {
            let s = preset(name).unwrap();
            let m = &s.market;
            assert_eq!((m.supply, m.horizon, m.cost_level, m.beta, m.alpha), (1.0, 0.2, 0.01, 2.0, 1.0));
            let g: Vec<f64> = s.roster.iter().map(|a| a.risk_aversion).collect();
            let x: Vec<f64> = s.roster.iter().map(|a| a.endowment_vol).collect();
            assert_eq!(g, TEN_AGENT_GAMMAS);
            assert_eq!(x, TEN_AGENT_XIS);
        }
        assert_eq!(preset("quad10").unwrap().market.elasticity, 2.0);
        assert_eq!(preset("power10").unwrap().market.elasticity, 1.5);
        assert_eq!(preset("quad10_known").unwrap().train.discriminator.mode, DiscriminatorMode::KnownQuadratic);
    }

    #[test]
    fn two_agent_power_preset() {
        let s = preset("power2").unwrap();
        assert_eq!((s.market.horizon, s.market.elasticity), (0.4, 1.5));
        assert_eq!(s.roster[0].risk_aversion, 1.0);
        assert_eq!(s.roster[1].risk_aversion, 2.0);
        assert_eq!(s.roster[0].endowment_vol, 3.0);
        assert_eq!(s.roster[1].endowment_vol, -3.0);
    }

    #[test]
    fn unknown_keys_and_violations_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(PRESETS[0].1).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(matches!(ExperimentSpec::from_json(&v.to_string()), Err(Error::Format { .. })));
        let mut v: serde_json::Value = serde_json::from_str(PRESETS[0].1).unwrap();
        v["roster"][0]["endowment_vol"] = serde_json::json!(99.0);
        match ExperimentSpec::from_json(&v.to_string()) {
            Err(Error::Invalid(list)) => assert!(list.iter().any(|x| x.to_string().contains("aggregate endowment nonzero"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolved_spec_round_trips() {
        let s = preset("power2").unwrap();
        let back = ExperimentSpec::from_json(&s.resolved_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }
}
