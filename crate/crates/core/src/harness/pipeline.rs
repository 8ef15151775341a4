use std::collections::HashSet;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ResolvedBenchmark, VictimKind};
use super::manifest::{sha256_hex, Manifest};
use super::report::{perf_report, summary_csv, sweep_csv, Metrics, PerfReport, SummaryRow};
use crate::attack::{
    bo_attack, random_attack, rank_features, read_records_jsonl, rehydrate_rollouts, safety_rollout, select_epsilon,
    write_records_jsonl, AttackOutcome, AttackRecord, BoAttackConfig, EpsilonMode, PerturbationBox, Retention,
};
use crate::detector::{build_dataset, c_range, train_detector, Detector, DetectorReport};
use crate::envsim::{read_trajectories_jsonl, write_trajectories_jsonl, EnvModel, State, Trajectory};
use crate::error::{Error, Result};
use crate::forest::importance_csv;
use crate::neuralctl::{make_lqr_policy, train_ddpg, EnvTask, NeuralPolicy, Policy, StoredPolicy};
use crate::seed;
use crate::shield::{
    eval_defense, eval_shielded_attack_improvement, intervention_sweep, neighborhood_starts, recovery_rate, train_aux,
    ShieldedPolicy, SweepRow,
};
use crate::specdsl::SafetySpec;

pub const VICTIM_FILE: &str = "victim.json";
pub const BASE_FILE: &str = "base.jsonl";
pub const SAFE_FILE: &str = "safe.jsonl";
pub const NOMINAL_FILE: &str = "nominal.json";
pub const PERTURBATION_FILE: &str = "perturbation.json";
pub const STAGE1_FILE: &str = "attack_stage1.jsonl";
pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const SELECTED_FILE: &str = "selected_features.json";
pub const STAGE2_FILE: &str = "attack_stage2.jsonl";
pub const DETECTOR_FILE: &str = "detector.json";
pub const DETECTOR_REPORT_FILE: &str = "detector_report.json";
pub const AUX_FILE: &str = "aux.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PERF_FILE: &str = "perf.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Metric tables that must reproduce byte for byte under the same root seed.
pub const METRIC_FILES: [&str; 5] = [SUMMARY_FILE, METRICS_FILE, PERF_FILE, SWEEP_FILE, IMPORTANCE_FILE];

/// Safe nominal rollouts of the victim.
#[derive(Debug, Clone)]
pub struct NominalSet {
    /// The safe rollout with the lowest safety reward; the attack target.
    pub base: Trajectory,
    /// Safe rollouts labeled safe in the detector data.
    pub safe: Vec<Trajectory>,
    pub safe_rate: f64,
}

#[derive(Debug, Clone)]
pub struct AttackStages {
    pub stage1: AttackOutcome,
    pub importances: Option<Vec<f64>>,
    pub selected: Option<Vec<usize>>,
    pub stage2: Option<AttackOutcome>,
}

impl AttackStages {
    /// Both stages as one attack; its success rate is the reported BO rate.
    pub fn combined(&self) -> AttackOutcome {
        AttackOutcome {
            records: self.records(),
        }
    }

    pub fn records(&self) -> Vec<AttackRecord> {
        let mut all = self.stage1.records.clone();
        if let Some(s2) = &self.stage2 {
            all.extend(s2.records.iter().cloned());
        }
        all
    }

    /// Distinct unsafe perturbed states over both stages.
    pub fn adversarial_set(&self) -> Vec<State> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for outcome in std::iter::once(&self.stage1).chain(self.stage2.as_ref()) {
            for s in outcome.adversarial_set() {
                if seen.insert(s.iter().map(|v| v.to_bits()).collect::<Vec<_>>()) {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Drop retained rollouts once the detector data is built.
    pub fn strip_rollouts(&mut self) {
        for outcome in std::iter::once(&mut self.stage1).chain(self.stage2.as_mut()) {
            for r in &mut outcome.records {
                r.rollout = None;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NominalSummary {
    rollouts: usize,
    safe_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SelectedFeatures {
    importances: Vec<f64>,
    selected: Vec<usize>,
}

/// Everything the evaluation stage produced.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub summary: SummaryRow,
    pub metrics: Metrics,
    pub perf: PerfReport,
    pub sweep: Option<Vec<SweepRow>>,
}

/// An experiment bound to its output directory.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub bench: ResolvedBenchmark,
    pub manifest: Manifest,
}

impl Experiment {
    /// Validate the config, resolve the benchmark and open the output
    /// directory, keeping an existing manifest from the same root seed.
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let bench = cfg.resolve()?;
        std::fs::create_dir_all(&cfg.output_dir)?;
        let manifest = match Manifest::load(&cfg.output_dir)? {
            Some(m) if m.root_seed == cfg.root_seed() => m,
            _ => Manifest::new(cfg.root_seed()),
        };
        Ok(Self { cfg, bench, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn env(&self) -> &EnvModel {
        &self.bench.env
    }

    pub fn spec(&self) -> &SafetySpec {
        &self.bench.spec
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.cfg.root_seed(), stage, 0)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir().join(file)
    }

    /// Hash of the config without its output directory, so identical
    /// experiments written to different places hash the same.
    fn config_hash(&self) -> Result<(String, String)> {
        let mut cfg = self.cfg.clone();
        cfg.output_dir = PathBuf::new();
        Ok(("config".into(), sha256_hex(cfg.to_toml()?.as_bytes())))
    }

    fn input(&self, file: &str) -> Result<(String, String)> {
        let p = self.path(file);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        Ok((file.to_string(), sha256_hex(&std::fs::read(p)?)))
    }

    fn begin(&mut self, stage: &str, files: &[&str]) -> Result<u64> {
        let mut inputs = vec![self.config_hash()?];
        for f in files {
            inputs.push(self.input(f)?);
        }
        let seed = self.stage_seed(stage);
        self.manifest.record_stage(stage, seed, inputs);
        self.manifest.save(self.dir())?;
        Ok(seed)
    }

    fn emit(&mut self, stage: &str, file: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.path(file), bytes)?;
        self.manifest.record_artifact(stage, file, sha256_hex(bytes));
        self.manifest.save(self.dir())?;
        Ok(())
    }

    fn open_file(&self, file: &str) -> Result<BufReader<std::fs::File>> {
        let p = self.path(file);
        if !p.exists() {
            return Err(Error::MissingFile(p));
        }
        Ok(BufReader::new(std::fs::File::open(p)?))
    }

    /// Train, build or load the victim and store it as `victim.json`.
    pub fn victim(&mut self) -> Result<StoredPolicy> {
        let seed = self.begin("victim", &[])?;
        let env = self.env().clone();
        let file = &self.bench.file;
        let victim = if let Some(p) = &self.cfg.victim.checkpoint {
            StoredPolicy::load(p)?
        } else {
            let lqr_ready = file.lqr_victim.is_some() && env.linear_parts().is_some();
            let kind = match self.cfg.victim.kind {
                VictimKind::Auto if lqr_ready => VictimKind::Lqr,
                VictimKind::Auto => VictimKind::Ddpg,
                k => k,
            };
            match kind {
                VictimKind::Lqr => {
                    let w = file
                        .lqr_victim
                        .as_ref()
                        .ok_or_else(|| Error::Config(format!("benchmark `{}` has no LQR weights", file.name)))?;
                    StoredPolicy::Linear(
                        make_lqr_policy(&env, &w.q_diag, &w.r_diag)?.with_bound(file.victim_bound().to_vec())?,
                    )
                }
                _ => {
                    let mut task = EnvTask::new(env.clone())
                        .with_safety(self.spec().clone(), self.cfg.victim.violation_penalty)
                        .with_action_scale(file.victim_bound().to_vec())?;
                    StoredPolicy::Neural(train_ddpg(&mut task, &self.cfg.victim.trainer, seed, "victim")?)
                }
            }
        };
        if victim.state_dim().is_some_and(|d| d != env.state_dim) || victim.action_dim() != env.action_dim {
            return Err(Error::DimensionMismatch {
                expected: env.state_dim,
                actual: victim.state_dim().unwrap_or(0),
            });
        }
        self.emit("victim", VICTIM_FILE, victim.to_json()?.as_bytes())?;
        Ok(victim)
    }

    pub fn load_victim(&self) -> Result<StoredPolicy> {
        StoredPolicy::load(&self.path(VICTIM_FILE))
    }

    /// Nominal rollouts from the initial box; the least safe safe one is the
    /// attack base.
    pub fn nominal(&mut self, victim: &dyn Policy) -> Result<NominalSet> {
        let seed = self.begin("nominal", &[VICTIM_FILE])?;
        let n = self.cfg.attack.nominal_rollouts;
        let mut rng = seed::rng(seed);
        let starts: Vec<State> = (0..n).map(|_| self.env().sample_initial(&mut rng)).collect();
        let (env, spec) = (self.env(), self.spec());
        let runs: Vec<(Trajectory, f64)> = starts
            .par_iter()
            .map(|s| safety_rollout(env, victim, spec, s))
            .collect::<Result<_>>()?;
        let safe: Vec<(Trajectory, f64)> = runs.into_iter().filter(|(_, r)| *r > 0.0).collect();
        let safe_rate = safe.len() as f64 / n as f64;
        let base_idx = safe
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
            .ok_or(Error::EmptyInput("safe nominal rollouts"))?;
        let base = safe[base_idx].0.clone();
        let kept: Vec<Trajectory> = safe
            .into_iter()
            .take(self.cfg.attack.safe_trajectories)
            .map(|(t, _)| t)
            .collect();
        let mut buf = Vec::new();
        write_trajectories_jsonl(&mut buf, std::slice::from_ref(&base))?;
        self.emit("nominal", BASE_FILE, &buf)?;
        let mut buf = Vec::new();
        write_trajectories_jsonl(&mut buf, &kept)?;
        self.emit("nominal", SAFE_FILE, &buf)?;
        let summary = NominalSummary { rollouts: n, safe_rate };
        self.emit("nominal", NOMINAL_FILE, serde_json::to_string(&summary)?.as_bytes())?;
        log::info!(
            "nominal: {:.4} safe, base safety reward {:.4}",
            safe_rate,
            self.spec().trajectory_reward(&base)?
        );
        Ok(NominalSet {
            base,
            safe: kept,
            safe_rate,
        })
    }

    pub fn load_nominal(&self) -> Result<NominalSet> {
        let base = read_trajectories_jsonl(self.open_file(BASE_FILE)?, self.env())?
            .into_iter()
            .next()
            .ok_or(Error::EmptyInput("base trajectory file"))?;
        let safe = read_trajectories_jsonl(self.open_file(SAFE_FILE)?, self.env())?;
        let summary: NominalSummary = serde_json::from_reader(self.open_file(NOMINAL_FILE)?)?;
        Ok(NominalSet {
            base,
            safe,
            safe_rate: summary.safe_rate,
        })
    }

    /// The ε-box of the configured mode, stored as `perturbation.json`.
    pub fn perturbation_box(&mut self, victim: &dyn Policy) -> Result<PerturbationBox> {
        let seed = self.begin("epsilon", &[VICTIM_FILE])?;
        let env = self.env();
        let filter: Vec<usize> = self
            .cfg
            .attack
            .filter
            .clone()
            .unwrap_or_else(|| (0..env.state_dim).collect());
        let clip = |b: PerturbationBox| -> Result<PerturbationBox> {
            match &env.safety_box {
                Some(s) => b.with_clip(s.clone()),
                None => Ok(b),
            }
        };
        let pbox = match &self.cfg.attack.epsilon {
            EpsilonMode::InitBox => PerturbationBox::from_init_box(env)?.restricted(&filter)?,
            EpsilonMode::Fixed { epsilon } => clip(PerturbationBox::new(*epsilon, filter, env.state_dim)?)?,
            EpsilonMode::Auto(search) => {
                let eps = select_epsilon(env, &[victim], self.spec(), &filter, search, seed)?;
                log::info!("selected epsilon {eps}");
                clip(PerturbationBox::new(eps, filter, env.state_dim)?)?
            }
        };
        self.emit("epsilon", PERTURBATION_FILE, serde_json::to_string(&pbox)?.as_bytes())?;
        Ok(pbox)
    }

    pub fn load_perturbation_box(&self) -> Result<PerturbationBox> {
        Ok(serde_json::from_reader(self.open_file(PERTURBATION_FILE)?)?)
    }

    fn bo_config(&self) -> BoAttackConfig {
        BoAttackConfig {
            acquisition: self.cfg.attack.acquisition.clone(),
            stride: self
                .cfg
                .attack
                .stride
                .unwrap_or(if self.env().horizon >= 2000 { 10 } else { 1 }),
            retention: Retention::All,
        }
    }

    /// BO attack over the full filter.
    pub fn attack_stage1(
        &mut self,
        victim: &dyn Policy,
        nominal: &NominalSet,
        pbox: &PerturbationBox,
    ) -> Result<AttackOutcome> {
        let seed = self.begin("attack-stage1", &[VICTIM_FILE, BASE_FILE, PERTURBATION_FILE])?;
        let out = bo_attack(
            self.env(),
            victim,
            self.spec(),
            pbox,
            &nominal.base,
            &self.bo_config(),
            seed,
        )?;
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &out.records)?;
        self.emit("attack-stage1", STAGE1_FILE, &buf)?;
        log::info!(
            "stage-1 attack: {}/{} unsafe rollouts",
            out.unsafe_count(),
            out.records.len()
        );
        Ok(out)
    }

    /// Forest importances over the stage-1 records and the selected dimensions.
    pub fn select_features(
        &mut self,
        pbox: &PerturbationBox,
        stage1: &AttackOutcome,
    ) -> Result<(Vec<f64>, Vec<usize>)> {
        let seed = self.begin("select-features", &[STAGE1_FILE, PERTURBATION_FILE])?;
        let a = &self.cfg.attack;
        let (importances, selected) =
            rank_features(pbox, &stage1.records, &a.selection_forest, a.feature_fraction, seed)?;
        let names: Vec<String> = pbox.filter().iter().map(|f| format!("x{f}")).collect();
        self.emit(
            "select-features",
            IMPORTANCE_FILE,
            importance_csv(&names, &importances).as_bytes(),
        )?;
        let sel = SelectedFeatures {
            importances: importances.clone(),
            selected: selected.clone(),
        };
        self.emit(
            "select-features",
            SELECTED_FILE,
            serde_json::to_string(&sel)?.as_bytes(),
        )?;
        Ok((importances, selected))
    }

    /// BO attack restricted to the selected dimensions.
    pub fn attack_stage2(
        &mut self,
        victim: &dyn Policy,
        nominal: &NominalSet,
        pbox: &PerturbationBox,
        selected: &[usize],
    ) -> Result<AttackOutcome> {
        let seed = self.begin("attack-stage2", &[VICTIM_FILE, BASE_FILE, SELECTED_FILE])?;
        let reduced = pbox.restricted(selected)?;
        let out = bo_attack(
            self.env(),
            victim,
            self.spec(),
            &reduced,
            &nominal.base,
            &self.bo_config(),
            seed,
        )?;
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &out.records)?;
        self.emit("attack-stage2", STAGE2_FILE, &buf)?;
        log::info!(
            "stage-2 attack on {:?}: {}/{} unsafe rollouts",
            selected,
            out.unsafe_count(),
            out.records.len()
        );
        Ok(out)
    }

    /// Every attack stage of the configured run.
    pub fn attack(
        &mut self,
        victim: &dyn Policy,
        nominal: &NominalSet,
        pbox: &PerturbationBox,
    ) -> Result<AttackStages> {
        let stage1 = self.attack_stage1(victim, nominal, pbox)?;
        if !self.cfg.attack.two_stage {
            return Ok(AttackStages {
                stage1,
                importances: None,
                selected: None,
                stage2: None,
            });
        }
        let (importances, selected) = self.select_features(pbox, &stage1)?;
        let stage2 = self.attack_stage2(victim, nominal, pbox, &selected)?;
        Ok(AttackStages {
            stage1,
            importances: Some(importances),
            selected: Some(selected),
            stage2: Some(stage2),
        })
    }

    /// Stored attack records, with rollouts re-simulated when `rehydrate`.
    pub fn load_attack(&self, victim: &dyn Policy, rehydrate: bool) -> Result<AttackStages> {
        let mut stage1 = read_records_jsonl(self.open_file(STAGE1_FILE)?)?;
        let (mut importances, mut selected, mut stage2) = (None, None, None);
        if self.path(STAGE2_FILE).exists() && self.path(SELECTED_FILE).exists() {
            let sel: SelectedFeatures = serde_json::from_reader(self.open_file(SELECTED_FILE)?)?;
            importances = Some(sel.importances);
            selected = Some(sel.selected);
            stage2 = Some(read_records_jsonl(self.open_file(STAGE2_FILE)?)?);
        }
        if rehydrate {
            rehydrate_rollouts(self.env(), victim, self.spec(), &mut stage1)?;
            if let Some(s2) = stage2.as_mut() {
                rehydrate_rollouts(self.env(), victim, self.spec(), s2)?;
            }
        }
        Ok(AttackStages {
            stage1: AttackOutcome { records: stage1 },
            importances,
            selected,
            stage2: stage2.map(|records| AttackOutcome { records }),
        })
    }

    /// Train the detector on attack records and the safe nominal rollouts.
    pub fn detector(&mut self, attacks: &AttackStages, nominal: &NominalSet) -> Result<(Detector, DetectorReport)> {
        let mut inputs = vec![STAGE1_FILE, SAFE_FILE];
        if attacks.stage2.is_some() {
            inputs.push(STAGE2_FILE);
        }
        let seed = self.begin("detector", &inputs)?;
        let data = build_dataset(&attacks.records(), &nominal.safe)?;
        let (det, report) = train_detector(&data, &self.cfg.detector, seed)?;
        self.emit("detector", DETECTOR_FILE, serde_json::to_string(&det)?.as_bytes())?;
        self.emit(
            "detector",
            DETECTOR_REPORT_FILE,
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
        log::info!(
            "detector: {} rows, holdout accuracy {:.4}",
            report.train_rows + report.holdout_rows,
            report.holdout_accuracy
        );
        Ok((det, report))
    }

    pub fn load_detector(&self) -> Result<Detector> {
        Detector::load(&self.path(DETECTOR_FILE))
    }

    pub fn load_detector_report(&self) -> Result<DetectorReport> {
        Ok(serde_json::from_reader(self.open_file(DETECTOR_REPORT_FILE)?)?)
    }

    /// Train the auxiliary policy from the adversarial states.
    pub fn aux(
        &mut self,
        victim: &dyn Policy,
        det: &Detector,
        adversarial: &[State],
        pbox: &PerturbationBox,
    ) -> Result<NeuralPolicy> {
        let seed = self.begin("aux", &[VICTIM_FILE, DETECTOR_FILE, STAGE1_FILE])?;
        let aux = train_aux(
            self.env(),
            self.spec(),
            det,
            adversarial,
            Some(pbox),
            victim,
            &self.cfg.aux,
            seed,
        )?;
        self.emit("aux", AUX_FILE, StoredPolicy::Neural(aux.clone()).to_json()?.as_bytes())?;
        Ok(aux)
    }

    pub fn load_aux(&self) -> Result<StoredPolicy> {
        StoredPolicy::load(&self.path(AUX_FILE))
    }

    /// Random-attack baseline at the combined attack's budget, defense rates,
    /// recovery and attack improvement; writes `summary.csv` and `metrics.csv`.
    pub fn defend_eval(
        &mut self,
        sp: &ShieldedPolicy,
        victim: &dyn Policy,
        aux: &dyn Policy,
        nominal: &NominalSet,
        attacks: &AttackStages,
        pbox: &PerturbationBox,
    ) -> Result<(SummaryRow, Metrics)> {
        let seed = self.begin(
            "defend-eval",
            &[VICTIM_FILE, AUX_FILE, DETECTOR_FILE, BASE_FILE, STAGE1_FILE],
        )?;
        let (env, spec) = (self.env(), self.spec());
        let ev = &self.cfg.evaluation;
        let combined = attacks.combined();
        let adversarial = attacks.adversarial_set();
        let mut metrics = Metrics::default();
        metrics.num("nominal_safe_rate", nominal.safe_rate);
        metrics.num("base_safety_reward", spec.trajectory_reward(&nominal.base)?);
        metrics.count("stage1_rollouts", attacks.stage1.records.len());
        metrics.count("stage1_unsafe", attacks.stage1.unsafe_count());
        if let Some(s2) = &attacks.stage2 {
            metrics.count("stage2_rollouts", s2.records.len());
            metrics.count("stage2_unsafe", s2.unsafe_count());
        }
        metrics.count("adversarial_states", adversarial.len());

        let random = random_attack(
            env,
            victim,
            spec,
            pbox,
            &nominal.base,
            combined.records.len(),
            Retention::None,
            seed::derive(seed, "random", 0),
        )?;
        metrics.count("random_rollouts", random.records.len());
        metrics.count("random_unsafe", random.unsafe_count());

        sp.reset_counter();
        let defense_rate = if adversarial.is_empty() {
            log::warn!("no adversarial states; defense rate undefined");
            f64::NAN
        } else {
            let d = eval_defense(env, spec, sp, &adversarial)?;
            metrics.count("defense_interventions", sp.interventions());
            metrics.num(
                "recovery_rate",
                recovery_rate(env, spec, sp.detector(), aux, &adversarial, ev.recovery_steps)?,
            );
            d.rate
        };
        metrics.num("defense_rate_adversarial", defense_rate);
        let all_starts: Vec<State> = combined
            .records
            .iter()
            .filter(|r| r.error.is_none())
            .map(|r| r.perturbed.clone())
            .collect();
        if !all_starts.is_empty() {
            metrics.num(
                "defense_rate_all_rollouts",
                eval_defense(env, spec, sp, &all_starts)?.rate,
            );
        }

        let improvement = if ev.improvement {
            let seeds: Vec<u64> = self
                .cfg
                .seeds
                .iter()
                .map(|s| seed::derive(*s, "improvement", 0))
                .collect();
            let cfg = BoAttackConfig {
                retention: Retention::None,
                ..self.bo_config()
            };
            match eval_shielded_attack_improvement(env, spec, victim, sp, pbox, &nominal.base, &cfg, &seeds) {
                Ok(rep) => {
                    metrics.count("improvement_unsafe_original", rep.unsafe_original.iter().sum());
                    metrics.count("improvement_unsafe_shielded", rep.unsafe_shielded.iter().sum());
                    Some(rep.mean)
                }
                Err(Error::Undefined(m)) => {
                    log::warn!("attack improvement undefined: {m}");
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        metrics.opt("attack_improvement", improvement);

        let summary = SummaryRow {
            benchmark: env.name.clone(),
            random_attack: random.success_rate(),
            bo_attack: combined.success_rate(),
            defense_rate,
            attack_improvement: improvement,
        };
        self.emit(
            "defend-eval",
            SUMMARY_FILE,
            summary_csv(std::slice::from_ref(&summary)).as_bytes(),
        )?;
        self.emit("defend-eval", METRICS_FILE, metrics.csv().as_bytes())?;
        Ok((summary, metrics))
    }

    /// Shielded against original returns around the base trajectory; writes `perf.csv`.
    pub fn perf(
        &mut self,
        sp: &ShieldedPolicy,
        victim: &dyn Policy,
        nominal: &NominalSet,
        pbox: &PerturbationBox,
    ) -> Result<PerfReport> {
        let seed = self.begin("perf", &[VICTIM_FILE, AUX_FILE, DETECTOR_FILE, BASE_FILE])?;
        let rep = perf_report(
            self.env(),
            victim,
            sp,
            &nominal.base,
            pbox,
            self.cfg.evaluation.perf_runs,
            seed,
        )?;
        self.emit("perf", PERF_FILE, rep.csv().as_bytes())?;
        Ok(rep)
    }

    /// Defense rate, return and interventions at the ten sampled `C` values;
    /// writes `sweep.csv`. The reference set for counting interventions and
    /// for the `C` range is the adversarial set plus the safe nominal states.
    pub fn sweep(
        &mut self,
        sp: &ShieldedPolicy,
        nominal: &NominalSet,
        attacks: &AttackStages,
        pbox: &PerturbationBox,
    ) -> Result<Vec<SweepRow>> {
        let seed = self.begin(
            "sweep-c",
            &[VICTIM_FILE, AUX_FILE, DETECTOR_FILE, BASE_FILE, STAGE1_FILE],
        )?;
        let adversarial = attacks.adversarial_set();
        let mut reference = adversarial.clone();
        reference.extend(nominal.safe.iter().flat_map(|t| t.states.iter().cloned()));
        let range = c_range(sp.detector(), &reference)?;
        let perf_starts = neighborhood_starts(&nominal.base, pbox, self.cfg.evaluation.perf_runs, seed)?;
        let rows = intervention_sweep(
            self.env(),
            self.spec(),
            sp,
            &range,
            &adversarial,
            &perf_starts,
            &reference,
        )?;
        self.emit("sweep-c", SWEEP_FILE, sweep_csv(&rows).as_bytes())?;
        Ok(rows)
    }

    /// `defend_eval`, `perf` and, when enabled, `sweep`.
    pub fn evaluate(
        &mut self,
        victim: Arc<dyn Policy>,
        aux: Arc<dyn Policy>,
        det: Arc<Detector>,
        nominal: &NominalSet,
        attacks: &AttackStages,
        pbox: &PerturbationBox,
    ) -> Result<EvalSummary> {
        let sp = ShieldedPolicy::new(det, victim.clone(), aux.clone())?;
        let (summary, metrics) = self.defend_eval(&sp, victim.as_ref(), aux.as_ref(), nominal, attacks, pbox)?;
        let perf = self.perf(&sp, victim.as_ref(), nominal, pbox)?;
        let sweep = if self.cfg.evaluation.sweep {
            Some(self.sweep(&sp, nominal, attacks, pbox)?)
        } else {
            None
        };
        Ok(EvalSummary {
            summary,
            metrics,
            perf,
            sweep,
        })
    }
}

/// Output of a full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub output_dir: PathBuf,
    pub detector: DetectorReport,
    pub adversarial_states: usize,
    pub eval: EvalSummary,
}

/// victim → nominal rollouts → ε-box → attack (two stages when configured)
/// → detector → auxiliary policy → evaluation. A failing stage aborts the
/// run with its name; artifacts of earlier stages stay on disk.
pub fn run_pipeline(cfg: ExperimentConfig) -> Result<PipelineReport> {
    let mut ex = Experiment::open(cfg)?;
    let victim: Arc<dyn Policy> = Arc::new(ex.victim().map_err(|e| e.in_stage("victim"))?);
    let nominal = ex.nominal(victim.as_ref()).map_err(|e| e.in_stage("nominal"))?;
    let pbox = ex
        .perturbation_box(victim.as_ref())
        .map_err(|e| e.in_stage("epsilon"))?;
    let mut attacks = ex
        .attack(victim.as_ref(), &nominal, &pbox)
        .map_err(|e| e.in_stage("attack"))?;
    let (det, detector) = ex.detector(&attacks, &nominal).map_err(|e| e.in_stage("detector"))?;
    attacks.strip_rollouts();
    let adversarial = attacks.adversarial_set();
    let aux = ex
        .aux(victim.as_ref(), &det, &adversarial, &pbox)
        .map_err(|e| e.in_stage("aux"))?;
    let eval = ex
        .evaluate(victim, Arc::new(aux), Arc::new(det), &nominal, &attacks, &pbox)
        .map_err(|e| e.in_stage("evaluate"))?;
    Ok(PipelineReport {
        output_dir: ex.dir().to_path_buf(),
        detector,
        adversarial_states: adversarial.len(),
        eval,
    })
}
