use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::EpsilonMode;
use crate::detector::DetectorConfig;
use crate::envsim::{load_benchmark, Benchmark, BenchmarkFile, EnvModel};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::gpopt::AcquisitionConfig;
use crate::neuralctl::TrainerConfig;
use crate::shield::AuxConfig;
use crate::specdsl::{parse_spec, SafetySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VictimKind {
    /// LQR when the benchmark is linear and ships LQR weights, DDPG otherwise.
    #[default]
    Auto,
    Ddpg,
    Lqr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VictimConfig {
    pub kind: VictimKind,
    /// Load this policy checkpoint instead of building one.
    pub checkpoint: Option<PathBuf>,
    pub trainer: TrainerConfig,
    /// Reward subtracted when a training episode violates the spec.
    pub violation_penalty: f64,
}

impl Default for VictimConfig {
    fn default() -> Self {
        Self {
            kind: VictimKind::Auto,
            checkpoint: None,
            trainer: TrainerConfig {
                total_steps: 30_000,
                ..TrainerConfig::default()
            },
            violation_penalty: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSettings {
    pub epsilon: EpsilonMode,
    /// Perturbable dimensions; all of them when absent.
    pub filter: Option<Vec<usize>>,
    pub acquisition: AcquisitionConfig,
    /// Attack every `stride`-th base state; 10 on horizons of 2000 steps
    /// or more and 1 otherwise when absent.
    pub stride: Option<usize>,
    /// Rank features on the first attack and rerun it on the top fraction.
    pub two_stage: bool,
    pub feature_fraction: f64,
    pub selection_forest: ForestConfig,
    /// Nominal rollouts; the safe one with the lowest safety reward is attacked.
    pub nominal_rollouts: usize,
    /// Safe nominal trajectories contributed to the detector data.
    pub safe_trajectories: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            epsilon: EpsilonMode::InitBox,
            filter: None,
            acquisition: AcquisitionConfig::default(),
            stride: None,
            two_stage: true,
            feature_fraction: 0.2,
            selection_forest: ForestConfig::default(),
            nominal_rollouts: 1000,
            safe_trajectories: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Matched BO attacks on the original and shielded policy, one per seed.
    pub improvement: bool,
    pub perf_runs: usize,
    pub sweep: bool,
    /// Horizon for the recovery check of the auxiliary policy alone.
    pub recovery_steps: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            improvement: true,
            perf_runs: 200,
            sweep: true,
            recovery_steps: 50,
        }
    }
}

/// One experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A bundled benchmark name or a path to a benchmark `.toml`.
    pub benchmark: String,
    /// Overrides the benchmark's own spec.
    #[serde(default)]
    pub spec_file: Option<PathBuf>,
    #[serde(default)]
    pub victim: VictimConfig,
    #[serde(default)]
    pub attack: AttackSettings,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub aux: AuxConfig,
    #[serde(default)]
    pub evaluation: EvalSettings,
    /// The first seed is the root of every stage; all of them are used for
    /// multi-seed evaluations.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// A benchmark ready to run.
#[derive(Debug, Clone)]
pub struct ResolvedBenchmark {
    pub file: BenchmarkFile,
    pub env: EnvModel,
    pub spec: SafetySpec,
}

impl ExperimentConfig {
    /// A default configuration for a bundled benchmark.
    pub fn for_benchmark(bench: Benchmark, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            benchmark: bench.name().to_string(),
            spec_file: None,
            victim: VictimConfig::default(),
            attack: AttackSettings::default(),
            detector: DetectorConfig::default(),
            aux: AuxConfig::default(),
            evaluation: EvalSettings::default(),
            seeds: vec![0],
            output_dir: output_dir.into(),
        }
    }

    /// Parse a config; relative paths are taken relative to `base_dir`.
    pub fn from_toml_str(src: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(src)?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        if let Some(p) = cfg.spec_file.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.victim.checkpoint.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.output_dir);
        if cfg.benchmark.parse::<Benchmark>().is_err() {
            let mut p = PathBuf::from(&cfg.benchmark);
            rebase(&mut p);
            cfg.benchmark = p.to_string_lossy().into_owned();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_str(&src, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn root_seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let must_exist = |p: &Path, what: &str| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
            }
        };
        if let Some(p) = &self.spec_file {
            must_exist(p, "spec file")?;
        }
        if let Some(p) = &self.victim.checkpoint {
            must_exist(p, "victim checkpoint")?;
        }
        if self.benchmark.parse::<Benchmark>().is_err() {
            must_exist(Path::new(&self.benchmark), "benchmark")?;
        }
        let a = &self.attack;
        if a.stride == Some(0) {
            return Err(Error::Config("attack.stride must be at least 1".into()));
        }
        if !(a.feature_fraction > 0.0 && a.feature_fraction <= 1.0) {
            return Err(Error::Config("attack.feature_fraction must lie in (0, 1]".into()));
        }
        if a.nominal_rollouts == 0 {
            return Err(Error::Config("attack.nominal_rollouts must be positive".into()));
        }
        a.acquisition.validate()?;
        self.victim.trainer.validate()?;
        self.aux.trainer.validate()?;
        if self.evaluation.perf_runs == 0 {
            return Err(Error::Config("evaluation.perf_runs must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<ResolvedBenchmark> {
        let (file, own_spec) = match self.benchmark.parse::<Benchmark>() {
            Ok(b) => (b.file(), Some(b.spec())),
            Err(_) => load_benchmark(Path::new(&self.benchmark))?,
        };
        let spec = match &self.spec_file {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!("spec file `{}` does not exist", p.display())));
                }
                parse_spec(&std::fs::read_to_string(p)?)?
            }
            None => own_spec.ok_or_else(|| Error::Config(format!("no spec for benchmark `{}`", self.benchmark)))?,
        };
        spec.bind(file.state_dim)?;
        let env = file.to_env()?;
        if let Some(f) = &self.attack.filter {
            if f.is_empty() || f.iter().any(|&i| i >= env.state_dim) {
                return Err(Error::Config(format!(
                    "attack.filter must name dimensions below {}",
                    env.state_dim
                )));
            }
        }
        Ok(ResolvedBenchmark { file, env, spec })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "benchmark = \"pendulum\"\nseeds = [3]\noutput_dir = \"out\"\n",
            Path::new("/tmp/x"),
        )
        .unwrap();
        assert_eq!(cfg.root_seed(), 3);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x/out"));
        assert_eq!(cfg.attack.acquisition.budget(), 40);
        assert_eq!(cfg.victim.kind, VictimKind::Auto);
        let r = cfg.resolve().unwrap();
        assert_eq!(r.env.state_dim, 2);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::for_benchmark(Benchmark::CarPlatoon4, "/tmp/out");
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap(), Path::new("/")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = Path::new("/tmp");
        let empty = ExperimentConfig::from_toml_str("benchmark = \"pendulum\"\nseeds = []\noutput_dir = \"o\"\n", base);
        assert!(matches!(empty, Err(Error::Config(_))));
        let missing = ExperimentConfig::from_toml_str(
            "benchmark = \"pendulum\"\nspec_file = \"/nonexistent/p.spec\"\nseeds = [1]\noutput_dir = \"o\"\n",
            base,
        );
        match missing {
            Err(Error::Config(m)) => assert!(m.contains("/nonexistent/p.spec"), "{m}"),
            other => panic!("{other:?}"),
        }
        let typo = ExperimentConfig::from_toml_str("benchmark = \"pendulum\"\nseed = [1]\noutput_dir = \"o\"\n", base);
        assert!(typo.is_err());
    }
}
