//! Run configuration: one TOML file describes the input source, the
//! estimation request, inference settings, and output location, so a run
//! manifest can reproduce the run bit for bit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attgt::EstimationMode;
use crate::dgp::{scenarios, DgpConfig};
use crate::error::{Error, Result};
use crate::panel::{CsvSchema, TreatmentKind};
use crate::pipeline::PipelineSpec;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    pub output: OutputConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
}

/// Where the panel comes from. Exactly one source must be set.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Panel CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Column mapping for the CSV (defaults to the standard schema).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<CsvSchema>,
    /// Built-in scenario name (s1, s2, s3, s4, s4_additive, s5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Full generator configuration, overriding any scenario preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dgp: Option<DgpConfig>,
    /// Generator seed for scenario inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Treatment combination codes to estimate; absent means every
    /// combination with treated units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatments: Option<Vec<u8>>,
    /// "unconditional" or "conditional".
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Covariate columns for the conditional mode.
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_event_window")]
    pub event_window: (i64, i64),
    /// Joint-minus-singular complementary effects; absent means on whenever
    /// both d = 4 and d = 2 have treated units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complement: Option<bool>,
    #[serde(default)]
    pub cohort_first: bool,
}

fn default_mode() -> String {
    "unconditional".into()
}

fn default_event_window() -> (i64, i64) {
    (-5, 10)
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            treatments: None,
            mode: default_mode(),
            covariates: Vec::new(),
            event_window: default_event_window(),
            complement: None,
            cohort_first: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_draws() -> usize {
    999
}

fn default_alpha() -> f64 {
    0.05
}

fn default_seed() -> u64 {
    42
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            draws: default_draws(),
            alpha: default_alpha(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    /// First-stage CSV (unit, included, covariates); unnecessary for
    /// generated inputs, which carry their own first stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_csv: Option<PathBuf>,
    /// "mills", "ipw", or "none".
    pub correction: String,
    /// Inclusion-probability clamp for the IPW correction.
    #[serde(default = "default_trim")]
    pub trim: (f64, f64),
    /// Dataset covariate columns used to predict first-stage outcomes for
    /// units outside the first-stage sample; absent means all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
}

fn default_trim() -> (f64, f64) {
    (0.01, 0.99)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Worker-pool size; 0 picks the machine default. The STAGDID_WORKERS
    /// environment variable overrides this.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub replications: usize,
    /// Replication r uses generator seed base_seed + r.
    #[serde(default)]
    pub base_seed: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<()> {
        let sources = [
            self.input.csv.is_some(),
            self.input.scenario.is_some(),
            self.input.dgp.is_some(),
        ]
        .iter()
        .filter(|&&s| s)
        .count();
        if sources != 1 {
            return Err(Error::Config(format!(
                "exactly one input source required (csv, scenario, or dgp), found {sources}"
            )));
        }
        if self.input.csv.is_some() && self.input.seed.is_some() {
            return Err(Error::Config("seed applies only to generated inputs".into()));
        }
        match self.estimation.mode.as_str() {
            "unconditional" => {
                if !self.estimation.covariates.is_empty() {
                    return Err(Error::Config(
                        "covariates require mode = \"conditional\"".into(),
                    ));
                }
            }
            "conditional" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown mode '{other}' (expected unconditional or conditional)"
                )))
            }
        }
        if let Some(ts) = &self.estimation.treatments {
            if ts.is_empty() {
                return Err(Error::Config("empty treatments list".into()));
            }
            for &d in ts {
                if TreatmentKind::from_code(d).is_none() {
                    return Err(Error::Config(format!("unknown treatment code d={d}")));
                }
            }
        }
        if self.estimation.event_window.0 > self.estimation.event_window.1 {
            return Err(Error::Config("empty event window".into()));
        }
        if let Some(b) = &self.bootstrap {
            if b.draws < 100 {
                return Err(Error::Config(format!(
                    "bootstrap.draws must be at least 100, got {}",
                    b.draws
                )));
            }
            if !(b.alpha > 0.0 && b.alpha < 1.0) {
                return Err(Error::Config(format!(
                    "bootstrap.alpha {} outside (0, 1)",
                    b.alpha
                )));
            }
        }
        if let Some(s) = &self.selection {
            match s.correction.as_str() {
                "mills" | "ipw" | "none" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown selection correction '{other}'"
                    )))
                }
            }
            if !(0.0 < s.trim.0 && s.trim.0 < s.trim.1 && s.trim.1 < 1.0) {
                return Err(Error::Config(format!(
                    "invalid trim bounds ({}, {})",
                    s.trim.0, s.trim.1
                )));
            }
            if s.first_stage_csv.is_some() && self.input.csv.is_none() {
                return Err(Error::Config(
                    "first_stage_csv applies only to csv inputs".into(),
                ));
            }
        }
        if let Some(sim) = &self.simulate {
            if sim.replications < 1 {
                return Err(Error::Config("replications must be at least 1".into()));
            }
            if self.input.csv.is_some() {
                return Err(Error::Config(
                    "simulation requires a generated input (scenario or dgp)".into(),
                ));
            }
        }
        Ok(())
    }

    /// Resolve the generator configuration for scenario or dgp inputs.
    pub fn dgp_config(&self) -> Result<DgpConfig> {
        if let Some(dgp) = &self.input.dgp {
            let mut dgp = dgp.clone();
            if let Some(seed) = self.input.seed {
                dgp.seed = seed;
            }
            return Ok(dgp);
        }
        let name = self.input.scenario.as_deref().ok_or_else(|| {
            Error::Config("input is not generated (no scenario or dgp)".into())
        })?;
        let seed = self.input.seed.unwrap_or(0);
        scenario_config(name, seed)
    }

    /// Build the pipeline spec, given the treatments the dataset supports.
    pub fn pipeline_spec(
        &self,
        available: &[TreatmentKind],
        unit_weight_multipliers: Option<BTreeMap<String, f64>>,
    ) -> Result<PipelineSpec> {
        let treatments = match &self.estimation.treatments {
            Some(codes) => codes
                .iter()
                .map(|&d| TreatmentKind::from_code(d).expect("validated"))
                .collect(),
            None => available.to_vec(),
        };
        let complement = self.estimation.complement.unwrap_or_else(|| {
            available.contains(&TreatmentKind::Both) && available.contains(&TreatmentKind::OnlyA)
        });
        let mode = match self.estimation.mode.as_str() {
            "conditional" => EstimationMode::Conditional(self.estimation.covariates.clone()),
            _ => EstimationMode::Unconditional,
        };
        Ok(PipelineSpec {
            treatments,
            mode,
            event_window: self.estimation.event_window,
            complement,
            cohort_first: self.estimation.cohort_first,
            unit_weight_multipliers,
        })
    }
}

pub fn scenario_config(name: &str, seed: u64) -> Result<DgpConfig> {
    match name {
        "s1" => Ok(scenarios::s1(seed)),
        "s2" => Ok(scenarios::s2(seed)),
        "s3" => Ok(scenarios::s3(seed)),
        "s4" => Ok(scenarios::s4(seed)),
        "s4_additive" => Ok(scenarios::s4_additive(seed)),
        "s5" => Ok(scenarios::s5(seed)),
        other => Err(Error::Config(format!("unknown scenario '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_config_parses() {
        let c = RunConfig::parse(
            "[input]\nscenario = \"s1\"\nseed = 7\n[output]\ndir = \"out\"\n",
        )
        .unwrap();
        assert_eq!(c.input.scenario.as_deref(), Some("s1"));
        assert_eq!(c.dgp_config().unwrap().seed, 7);
        assert_eq!(c.estimation.mode, "unconditional");
    }

    #[test]
    fn both_sources_rejected_with_message() {
        let err = RunConfig::parse(
            "[input]\ncsv = \"p.csv\"\nscenario = \"s1\"\n[output]\ndir = \"out\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("exactly one input source"), "{err}");
    }

    #[test]
    fn no_source_rejected() {
        assert!(RunConfig::parse("[input]\n[output]\ndir = \"out\"\n").is_err());
    }

    #[test]
    fn covariates_need_conditional_mode() {
        let err = RunConfig::parse(
            "[input]\nscenario = \"s3\"\n[estimation]\ncovariates = [\"x\"]\n[output]\ndir = \"out\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("conditional"));
    }

    #[test]
    fn bad_treatment_code_rejected() {
        let err = RunConfig::parse(
            "[input]\nscenario = \"s1\"\n[estimation]\ntreatments = [5]\n[output]\ndir = \"out\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("d=5"));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::parse(
            "[input]\nscenario = \"s1\"\ntypo = 1\n[output]\ndir = \"out\"\n"
        )
        .is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig::parse(
            "[input]\nscenario = \"s4\"\nseed = 3\n\
             [estimation]\nmode = \"conditional\"\ncovariates = [\"x\"]\n\
             [bootstrap]\ndraws = 200\n\
             [output]\ndir = \"out\"\n",
        )
        .unwrap();
        let text = toml::to_string(&c).unwrap();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(c, back);
    }
}
