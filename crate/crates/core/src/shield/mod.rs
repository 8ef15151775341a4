//! Auxiliary recovery policy training and the per-step shielded composition.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{bo_attack, violates, BoAttackConfig, PerturbationBox};
use crate::detector::{CRange, Detector};
use crate::envsim::{rollout, EnvModel, State, Trajectory};
use crate::error::{Error, Result};
use crate::neuralctl::{train_ddpg, NeuralPolicy, Policy, StepOutcome, TrainEnv, TrainerConfig};
use crate::seed;
use crate::specdsl::SafetySpec;

/// 1 when the detector judges `s` safe, else 0.
pub fn detector_reward(det: &Detector, s: &[f64]) -> f64 {
    if det.classify(s) {
        0.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyRewardMode {
    /// `L(φ)(s)` of every visited state.
    #[default]
    PerState,
    /// Minimum of `L(φ)` over the episode, paid once at its end.
    RolloutMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuxConfig {
    /// Weight of the safety reward.
    pub lambda: f64,
    /// Probability that an episode starts from an adversarial state.
    pub p_adv: f64,
    pub episode_steps: usize,
    pub safety_reward: SafetyRewardMode,
    /// Train inside the shielded loop: after each auxiliary action the
    /// original policy keeps control while the detector judges the state
    /// safe, and the rewards of those states accrue to the auxiliary action.
    pub handoff: bool,
    /// Output limit of the auxiliary policy; `None` uses the plant's full
    /// action bound.
    pub action_scale: Option<Vec<f64>>,
    pub trainer: TrainerConfig,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            p_adv: 0.8,
            episode_steps: 100,
            safety_reward: SafetyRewardMode::PerState,
            handoff: true,
            action_scale: None,
            trainer: TrainerConfig::default(),
        }
    }
}

/// Training environment for the auxiliary policy: the plant with reward
/// `detector_reward(s') + λ·L(φ)(s')`, episodes ending on a violation or
/// after `episode_steps` steps.
pub struct ShieldTrainEnv<'a> {
    env: &'a EnvModel,
    spec: &'a SafetySpec,
    detector: &'a Detector,
    adversarial: &'a [State],
    fallback: Option<&'a PerturbationBox>,
    original: Option<&'a dyn Policy>,
    cfg: AuxConfig,
    state: State,
    t: usize,
    running_min: f64,
}

impl<'a> ShieldTrainEnv<'a> {
    /// `fallback` perturbs nominal starts when the adversarial set is empty.
    pub fn new(
        env: &'a EnvModel,
        spec: &'a SafetySpec,
        detector: &'a Detector,
        adversarial: &'a [State],
        fallback: Option<&'a PerturbationBox>,
        cfg: AuxConfig,
    ) -> Result<Self> {
        spec.bind(env.state_dim)?;
        if !(0.0..=1.0).contains(&cfg.p_adv) || cfg.episode_steps == 0 || !cfg.lambda.is_finite() {
            return Err(Error::Config(
                "aux: p_adv in [0,1], episode_steps >= 1, finite lambda".into(),
            ));
        }
        if let Some(scale) = &cfg.action_scale {
            if scale.len() != env.action_dim {
                return Err(Error::DimensionMismatch {
                    expected: env.action_dim,
                    actual: scale.len(),
                });
            }
            if scale.iter().zip(&env.action_bound).any(|(s, b)| !(*s > 0.0 && s <= b)) {
                return Err(Error::Config(
                    "aux: action_scale must be positive and within the action bound".into(),
                ));
            }
        }
        if adversarial.is_empty() {
            log::warn!("aux training: empty adversarial set, starting from perturbed nominal states");
        }
        Ok(Self {
            env,
            spec,
            detector,
            adversarial,
            fallback,
            original: None,
            cfg,
            state: vec![0.0; env.state_dim],
            t: 0,
            running_min: f64::INFINITY,
        })
    }

    /// The policy that acts between interventions when `cfg.handoff` is set.
    pub fn with_original(mut self, original: &'a dyn Policy) -> Result<Self> {
        if original.action_dim() != self.env.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.env.action_dim,
                actual: original.action_dim(),
            });
        }
        self.original = Some(original);
        Ok(self)
    }

    fn advance(&mut self, u: &[f64]) -> Result<f64> {
        let next = self.env.step(&self.state, &self.env.clip_action(u));
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericOverflow { step: self.t + 1 });
        }
        self.t += 1;
        let l = self.spec.reward(&next)?;
        self.state = next;
        Ok(l)
    }

    fn state_reward(&mut self, l: f64, end: bool) -> f64 {
        let mut reward = detector_reward(self.detector, &self.state);
        match self.cfg.safety_reward {
            SafetyRewardMode::PerState => reward += self.cfg.lambda * l,
            SafetyRewardMode::RolloutMin => {
                self.running_min = self.running_min.min(l);
                if end {
                    reward += self.cfg.lambda * self.running_min;
                }
            }
        }
        reward
    }
}

impl TrainEnv for ShieldTrainEnv<'_> {
    fn state_dim(&self) -> usize {
        self.env.state_dim
    }

    fn action_bound(&self) -> &[f64] {
        self.cfg.action_scale.as_deref().unwrap_or(&self.env.action_bound)
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state = if rng.gen::<f64>() < self.cfg.p_adv {
            if self.adversarial.is_empty() {
                let s = self.env.sample_initial(rng);
                match self.fallback {
                    Some(b) => {
                        let (lo, hi) = b.offset_bounds(&s);
                        let off: Vec<f64> = lo
                            .iter()
                            .zip(&hi)
                            .map(|(l, h)| if h > l { rng.gen_range(*l..*h) } else { *l })
                            .collect();
                        b.perturb(&s, &off).unwrap_or(s)
                    }
                    None => s,
                }
            } else {
                self.adversarial[rng.gen_range(0..self.adversarial.len())].clone()
            }
        } else {
            self.env.sample_initial(rng)
        };
        self.t = 0;
        self.running_min = f64::INFINITY;
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let handoff = match (self.cfg.handoff, self.original) {
            (true, Some(p)) => Some(p),
            (true, None) => return Err(Error::Config("aux: handoff training needs the original policy".into())),
            (false, _) => None,
        };
        let l = self.advance(action)?;
        let mut terminal = l <= 0.0;
        let mut truncated = self.t >= self.cfg.episode_steps;
        let mut reward = self.state_reward(l, terminal || truncated);
        if let Some(original) = handoff {
            while !terminal && !truncated && !self.detector.classify(&self.state) {
                let u = original.act(&self.state);
                let l = self.advance(&u)?;
                terminal = l <= 0.0;
                truncated = self.t >= self.cfg.episode_steps;
                reward += self.state_reward(l, terminal || truncated);
            }
        }
        Ok(StepOutcome {
            next: self.state.clone(),
            reward,
            terminal,
            truncated,
        })
    }
}

/// Train the auxiliary recovery policy.
#[allow(clippy::too_many_arguments)]
pub fn train_aux(
    env: &EnvModel,
    spec: &SafetySpec,
    detector: &Detector,
    adversarial: &[State],
    fallback: Option<&PerturbationBox>,
    original: &dyn Policy,
    cfg: &AuxConfig,
    seed: u64,
) -> Result<NeuralPolicy> {
    let mut task =
        ShieldTrainEnv::new(env, spec, detector, adversarial, fallback, cfg.clone())?.with_original(original)?;
    train_ddpg(&mut task, &cfg.trainer, seed, "aux")
}

/// Per-step composition: the auxiliary policy acts on steps where the
/// detector fires, the original policy otherwise.
pub struct ShieldedPolicy {
    detector: Arc<Detector>,
    original: Arc<dyn Policy>,
    aux: Arc<dyn Policy>,
    name: String,
    interventions: AtomicUsize,
    decisions: Option<Mutex<Vec<bool>>>,
}

impl ShieldedPolicy {
    pub fn new(detector: Arc<Detector>, original: Arc<dyn Policy>, aux: Arc<dyn Policy>) -> Result<Self> {
        if original.action_dim() != aux.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: original.action_dim(),
                actual: aux.action_dim(),
            });
        }
        let name = format!("shielded({})", original.name());
        Ok(Self {
            detector,
            original,
            aux,
            name,
            interventions: AtomicUsize::new(0),
            decisions: None,
        })
    }

    /// Also record every detector decision, in call order.
    pub fn with_decision_log(mut self) -> Self {
        self.decisions = Some(Mutex::new(Vec::new()));
        self
    }

    /// Same components with another approximating constant and fresh counters.
    pub fn with_c(&self, c: f64) -> Self {
        Self {
            detector: Arc::new(self.detector.with_c(c)),
            original: self.original.clone(),
            aux: self.aux.clone(),
            name: self.name.clone(),
            interventions: AtomicUsize::new(0),
            decisions: self.decisions.as_ref().map(|_| Mutex::new(Vec::new())),
        }
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn interventions(&self) -> usize {
        self.interventions.load(Ordering::Relaxed)
    }

    pub fn reset_counter(&self) {
        self.interventions.store(0, Ordering::Relaxed);
        if let Some(d) = &self.decisions {
            d.lock().expect("decision log").clear();
        }
    }

    pub fn decisions(&self) -> Vec<bool> {
        self.decisions
            .as_ref()
            .map(|d| d.lock().expect("decision log").clone())
            .unwrap_or_default()
    }
}

impl Policy for ShieldedPolicy {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        let fire = self.detector.classify(s);
        if let Some(d) = &self.decisions {
            d.lock().expect("decision log").push(fire);
        }
        if fire {
            self.interventions.fetch_add(1, Ordering::Relaxed);
            self.aux.act(s)
        } else {
            self.original.act(s)
        }
    }

    fn action_dim(&self) -> usize {
        self.original.action_dim()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> Option<usize> {
        self.original.state_dim()
    }
}

pub fn shielded_step(sp: &ShieldedPolicy, s: &[f64]) -> Vec<f64> {
    sp.act(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub safe: usize,
    pub total: usize,
    pub rate: f64,
}

/// Fraction of full-horizon rollouts from `starts` that never violate the spec.
pub fn eval_defense(env: &EnvModel, spec: &SafetySpec, policy: &dyn Policy, starts: &[State]) -> Result<DefenseReport> {
    if starts.is_empty() {
        return Err(Error::EmptyInput("defense evaluation starts"));
    }
    spec.bind(env.state_dim)?;
    let stop = violates(spec);
    let outcomes: Vec<bool> = starts
        .par_iter()
        .map(|s| -> Result<bool> {
            let t = rollout(env, policy, s, Some(&stop))?;
            Ok(spec.trajectory_reward(&t)? > 0.0)
        })
        .collect::<Result<_>>()?;
    let safe = outcomes.iter().filter(|&&b| b).count();
    Ok(DefenseReport {
        safe,
        total: starts.len(),
        rate: safe as f64 / starts.len() as f64,
    })
}

/// Fraction of `starts` from which `policy` alone reaches a detector-safe
/// state within `steps` steps without violating the spec.
pub fn recovery_rate(
    env: &EnvModel,
    spec: &SafetySpec,
    detector: &Detector,
    policy: &dyn Policy,
    starts: &[State],
    steps: usize,
) -> Result<f64> {
    if starts.is_empty() {
        return Err(Error::EmptyInput("recovery starts"));
    }
    let viol = violates(spec);
    let hits: Vec<bool> = starts
        .par_iter()
        .map(|s| -> Result<bool> {
            let stop = |x: &[f64]| viol(x) || !detector.classify(x);
            let t = crate::envsim::rollout_for(env, policy, s, steps, Some(&stop))?;
            let last = t.last();
            Ok(!viol(last) && !detector.classify(last))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&b| b).count() as f64 / starts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub unsafe_original: Vec<usize>,
    pub unsafe_shielded: Vec<usize>,
    /// `1 - shielded / original` per seed; `None` when the baseline found nothing.
    pub per_seed: Vec<Option<f64>>,
    pub mean: f64,
}

/// Reduction in unsafe states found by matched BO attacks on the shielded
/// policy relative to the original, averaged over seeds.
#[allow(clippy::too_many_arguments)]
pub fn eval_shielded_attack_improvement(
    env: &EnvModel,
    spec: &SafetySpec,
    original: &dyn Policy,
    shielded: &dyn Policy,
    pbox: &PerturbationBox,
    base: &Trajectory,
    cfg: &BoAttackConfig,
    seeds: &[u64],
) -> Result<ImprovementReport> {
    let mut uo = Vec::new();
    let mut us = Vec::new();
    let mut per_seed = Vec::new();
    for &s in seeds {
        let a = bo_attack(env, original, spec, pbox, base, cfg, s)?.unsafe_count();
        let b = bo_attack(env, shielded, spec, pbox, base, cfg, s)?.unsafe_count();
        uo.push(a);
        us.push(b);
        per_seed.push(improvement(a, b));
    }
    let defined: Vec<f64> = per_seed.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Undefined("baseline attack found no unsafe states".into()));
    }
    Ok(ImprovementReport {
        unsafe_original: uo,
        unsafe_shielded: us,
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        per_seed,
    })
}

/// `1 - shielded / original`, undefined for a zero baseline.
pub fn improvement(unsafe_original: usize, unsafe_shielded: usize) -> Option<f64> {
    (unsafe_original > 0).then(|| 1.0 - unsafe_shielded as f64 / unsafe_original as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: f64,
    pub defense_rate: f64,
    pub mean_perf_return: f64,
    /// Unsafe classifications on the fixed reference state set.
    pub intervention_count: usize,
    /// Interventions during the defense and performance rollouts.
    pub live_interventions: usize,
}

/// Defense rate, mean return and interventions for each sampled `C`.
#[allow(clippy::too_many_arguments)]
pub fn intervention_sweep(
    env: &EnvModel,
    spec: &SafetySpec,
    sp: &ShieldedPolicy,
    range: &CRange,
    adversarial: &[State],
    perf_starts: &[State],
    reference: &[State],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(range.samples.len());
    for &c in &range.samples {
        let p = sp.with_c(c);
        let defense_rate = if adversarial.is_empty() {
            f64::NAN
        } else {
            eval_defense(env, spec, &p, adversarial)?.rate
        };
        let mean_perf_return = mean_return(env, &p, perf_starts)?;
        let intervention_count = reference.iter().filter(|s| p.detector().classify(s)).count();
        rows.push(SweepRow {
            c,
            defense_rate,
            mean_perf_return,
            intervention_count,
            live_interventions: p.interventions(),
        });
    }
    Ok(rows)
}

/// Mean undiscounted return of full-horizon rollouts (no early stop).
pub fn mean_return(env: &EnvModel, policy: &dyn Policy, starts: &[State]) -> Result<f64> {
    if starts.is_empty() {
        return Err(Error::EmptyInput("performance starts"));
    }
    let returns: Vec<f64> = starts
        .par_iter()
        .map(|s| rollout(env, policy, s, None).map(|t| t.perf_return))
        .collect::<Result<_>>()?;
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

/// `n` starts: a uniformly chosen state of `base`, perturbed uniformly in its box.
pub fn neighborhood_starts(base: &Trajectory, pbox: &PerturbationBox, n: usize, seed: u64) -> Result<Vec<State>> {
    let mut rng = seed::child_rng(seed, "neighborhood", 0);
    (0..n)
        .map(|_| {
            let s = &base.states[rng.gen_range(0..base.len())];
            let (lo, hi) = pbox.offset_bounds(s);
            let off: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| if h > l { rng.gen_range(*l..*h) } else { *l })
                .collect();
            pbox.perturb(s, &off)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{rf_train, ForestConfig, Label, LabeledDataset};
    use crate::neuralctl::FnPolicy;

    fn threshold_detector() -> Detector {
        // unsafe iff x0 > 0.5
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let labels = rows
            .iter()
            .map(|r| if r[0] > 0.5 { Label::Unsafe } else { Label::Safe })
            .collect();
        let data = LabeledDataset::from_rows(rows, labels).unwrap();
        let rf = rf_train(
            &data,
            &ForestConfig {
                n_trees: 5,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        Detector::from_forest(rf, 0.0)
    }

    #[test]
    fn dispatch_follows_detector() {
        let det = Arc::new(threshold_detector());
        let o: Arc<dyn Policy> = Arc::new(FnPolicy::new("o", 1, |_| vec![1.0]));
        let a: Arc<dyn Policy> = Arc::new(FnPolicy::new("a", 1, |_| vec![-1.0]));
        let sp = ShieldedPolicy::new(det, o, a).unwrap().with_decision_log();
        assert_eq!(sp.act(&[0.1]), vec![1.0]);
        assert_eq!(sp.act(&[0.9]), vec![-1.0]);
        assert_eq!(sp.act(&[0.95]), vec![-1.0]);
        assert_eq!(sp.interventions(), 2);
        assert_eq!(sp.decisions(), vec![false, true, true]);
        assert_eq!(detector_reward(sp.detector(), &[0.1]), 1.0);
        assert_eq!(detector_reward(sp.detector(), &[0.9]), 0.0);
        let all = sp.with_c(2.0);
        assert_eq!(all.act(&[0.0]), vec![-1.0]);
        assert_eq!(all.interventions(), 1);
    }

    #[test]
    fn improvement_edge_cases() {
        assert_eq!(improvement(10, 10), Some(0.0));
        assert_eq!(improvement(10, 0), Some(1.0));
        assert_eq!(improvement(0, 3), None);
    }
}
