//! Experiment configuration and the commands behind the `decoysplit` binary.

pub mod commands;
pub mod validate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{QConfig, TrainConfig};
use crate::env::{EnvConfig, SplitEnv};
use crate::error::{Error, Result};
use crate::slmodel::{make_model, ModelProfile, ModelSpec, REFERENCE_LAYERS};
use crate::topology::{gen_scenario, Scenario, ScenarioDefaults};

pub use commands::{
    cmd_leakage_oracle, cmd_powers, cmd_show_plan, cmd_sweep, cmd_train, AgentKind, OracleRow,
    PlanHop, PlanReport, PowerRow, RunArtifacts, SweepRow,
};
pub use validate::{run_validation, CheckResult, ClosedForms, ValidationOptions, ValidationReport};

/// Environment variable naming the directory all outputs go under.
pub const OUTPUT_ROOT_ENV: &str = "DECOYSPLIT_OUT";

/// Where the deployment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSource {
    /// A scenario TOML file, relative to the config file.
    File(PathBuf),
    Generate(ScenarioGen),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioGen {
    pub seed: u64,
    pub devices: usize,
    pub eavesdroppers: usize,
    pub area_side: f64,
    pub defaults: ScenarioDefaults,
}

impl Default for ScenarioGen {
    fn default() -> Self {
        Self {
            seed: 7,
            devices: 6,
            eavesdroppers: 2,
            area_side: 800.0,
            defaults: ScenarioDefaults::default(),
        }
    }
}

impl Default for ScenarioSource {
    fn default() -> Self {
        Self::Generate(ScenarioGen::default())
    }
}

/// Where the layer profile comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// A model TOML file, relative to the config file.
    File(PathBuf),
    Generate(ModelGen),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelGen {
    pub seed: u64,
    pub layers: usize,
    pub profile: ModelProfile,
}

impl Default for ModelGen {
    fn default() -> Self {
        Self {
            seed: 7,
            layers: REFERENCE_LAYERS,
            profile: ModelProfile::reference(),
        }
    }
}

impl Default for ModelSource {
    fn default() -> Self {
        Self::Generate(ModelGen::default())
    }
}

/// The swept quantity of `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepAxis {
    MonitorProb {
        values: Vec<f64>,
    },
    EavesdropperCount {
        values: Vec<usize>,
    },
    /// One point per agent in `agents`.
    AgentKind,
    /// The four curiosity/attention combinations.
    Ablations,
    ObserveEavesdroppers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(flatten)]
    pub axis: SweepAxis,
    #[serde(default = "default_agents")]
    pub agents: Vec<AgentKind>,
    /// Greedy episodes used to score each trained policy.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
}

fn default_agents() -> Vec<AgentKind> {
    vec![AgentKind::IcmCa]
}

fn default_eval_episodes() -> usize {
    20
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Everything one CLI invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub qlearn: QConfig,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSource::default(),
            model: ModelSource::default(),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            qlearn: QConfig::default(),
            sweep: None,
            seeds: default_seeds(),
            output_dir: None,
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [&cfg.scenario_file(), &cfg.model_file()]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "referenced file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.train.validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.agents.is_empty() {
                return Err(Error::Config("sweep needs at least one agent".into()));
            }
            match &sweep.axis {
                SweepAxis::MonitorProb { values }
                    if values.is_empty() || values.iter().any(|q| !(0.0..=1.0).contains(q)) =>
                {
                    return Err(Error::Config(format!("monitor probabilities {values:?}")));
                }
                SweepAxis::EavesdropperCount { values }
                    if values.is_empty() || values.contains(&0) =>
                {
                    return Err(Error::Config(format!("eavesdropper counts {values:?}")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn scenario_file(&self) -> Option<PathBuf> {
        match &self.scenario {
            ScenarioSource::File(p) => Some(self.resolve(p)),
            ScenarioSource::Generate(_) => None,
        }
    }

    fn model_file(&self) -> Option<PathBuf> {
        match &self.model {
            ModelSource::File(p) => Some(self.resolve(p)),
            ModelSource::Generate(_) => None,
        }
    }

    /// The configured scenario, optionally with a different eavesdropper count.
    pub fn build_scenario(&self, eavesdroppers: Option<usize>) -> Result<Scenario> {
        let scn = match &self.scenario {
            ScenarioSource::File(_) => {
                let path = self.scenario_file().expect("file source");
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let mut scn = Scenario::from_toml(&text)?;
                if let Some(n) = eavesdroppers {
                    if n > scn.eavesdroppers.len() {
                        return Err(Error::Config(format!(
                            "scenario file has {} eavesdroppers, {n} requested",
                            scn.eavesdroppers.len()
                        )));
                    }
                    scn.eavesdroppers.truncate(n);
                }
                scn
            }
            ScenarioSource::Generate(g) => gen_scenario(
                g.seed,
                g.devices,
                eavesdroppers.unwrap_or(g.eavesdroppers),
                g.area_side,
                &g.defaults,
            )?,
        };
        scn.validate()?;
        Ok(scn)
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        match &self.model {
            ModelSource::File(_) => {
                let path = self.model_file().expect("file source");
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                ModelSpec::from_toml(&text)
            }
            ModelSource::Generate(g) => make_model(g.layers, self.env.segments, &g.profile, g.seed),
        }
    }

    pub fn build_env(&self) -> Result<SplitEnv> {
        SplitEnv::new(
            self.build_scenario(None)?,
            self.build_model()?,
            self.env.clone(),
        )
    }

    /// Output directory: explicit override, then the environment variable,
    /// then the config's `output_dir`, then `./out`.
    pub fn output_root(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.output_dir
            .as_ref()
            .map(|p| self.resolve(p))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_reference_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        let env = cfg.build_env().unwrap();
        assert_eq!(env.scenario.device_count(), 6);
        assert_eq!(env.scenario.eavesdropper_count(), 2);
        assert_eq!(env.cfg.segments, 4);
    }

    #[test]
    fn round_trip_and_overrides() {
        let text = r#"
            seeds = [3, 4]
            [scenario.generate]
            seed = 11
            devices = 4
            eavesdroppers = 1
            [train]
            episodes = 5
            no_icm = true
            [sweep]
            axis = "monitor_prob"
            values = [0.3, 0.6]
            agents = ["random", "q_learning"]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.train.episodes, 5);
        assert!(cfg.train.no_icm);
        assert_eq!(
            cfg.sweep.as_ref().unwrap().axis,
            SweepAxis::MonitorProb {
                values: vec![0.3, 0.6]
            }
        );
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.build_scenario(None).unwrap().device_count(), 4);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[train]\ngamma = 0.0").is_err());
        assert!(
            ExperimentConfig::from_toml("[sweep]\naxis = \"monitor_prob\"\nvalues = [1.5]")
                .is_err()
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "[scenario]\nfile = \"missing.toml\"").unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn file_sources_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let scn = gen_scenario(2, 5, 3, 500.0, &ScenarioDefaults::default()).unwrap();
        std::fs::write(dir.path().join("scn.toml"), scn.to_toml().unwrap()).unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "[scenario]\nfile = \"scn.toml\"").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.build_scenario(None).unwrap(), scn);
        assert_eq!(cfg.build_scenario(Some(2)).unwrap().eavesdropper_count(), 2);
        assert!(cfg.build_scenario(Some(4)).is_err());
    }
}
