//! ε-bounded state-perturbation attacks: ε selection, the uniform random
//! baseline, per-state Bayesian-optimization attacks and the two-stage
//! driver with forest-based feature selection.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envsim::{rollout, BoxBounds, EnvModel, State, Trajectory};
use crate::error::{Error, Result};
use crate::forest::{rf_train, select_top_features, ForestConfig, Label, LabeledDataset};
use crate::gpopt::{bo_minimize, AcquisitionConfig};
use crate::neuralctl::Policy;
use crate::seed;
use crate::specdsl::SafetySpec;

/// L∞ perturbation region around a state, restricted to the filtered
/// dimensions and optionally clipped to a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBox {
    filter: Vec<usize>,
    radii: Vec<f64>,
    state_dim: usize,
    clip: Option<BoxBounds>,
}

impl PerturbationBox {
    /// Radius `epsilon` on every filtered dimension.
    pub fn new(epsilon: f64, filter: Vec<usize>, state_dim: usize) -> Result<Self> {
        let radii = vec![epsilon; filter.len()];
        Self::with_radii(radii, filter, state_dim)
    }

    pub fn with_radii(radii: Vec<f64>, filter: Vec<usize>, state_dim: usize) -> Result<Self> {
        if filter.is_empty() {
            return Err(Error::InvalidArgument("perturbation filter is empty".into()));
        }
        if radii.len() != filter.len() {
            return Err(Error::DimensionMismatch {
                expected: filter.len(),
                actual: radii.len(),
            });
        }
        let mut seen = HashSet::new();
        for &f in &filter {
            if f >= state_dim || !seen.insert(f) {
                return Err(Error::InvalidArgument(format!(
                    "filter index {f} repeated or outside state dimension {state_dim}"
                )));
            }
        }
        if radii.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(
                "perturbation radii must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            filter,
            radii,
            state_dim,
            clip: None,
        })
    }

    /// Every dimension perturbed by the half-width of the initial box,
    /// clipped to the safety box when the environment has one.
    pub fn from_init_box(env: &EnvModel) -> Result<Self> {
        let b = Self::with_radii(env.init_box.half_widths(), (0..env.state_dim).collect(), env.state_dim)?;
        Ok(match &env.safety_box {
            Some(s) => b.with_clip(s.clone())?,
            None => b,
        })
    }

    pub fn with_clip(mut self, clip: BoxBounds) -> Result<Self> {
        if clip.dim() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: clip.dim(),
            });
        }
        self.clip = Some(clip);
        Ok(self)
    }

    /// Same radii restricted to a subset of the current filter.
    pub fn restricted(&self, dims: &[usize]) -> Result<Self> {
        let mut radii = Vec::with_capacity(dims.len());
        for d in dims {
            let pos = self
                .filter
                .iter()
                .position(|f| f == d)
                .ok_or_else(|| Error::InvalidArgument(format!("dimension {d} is not in the filter")))?;
            radii.push(self.radii[pos]);
        }
        let mut b = Self::with_radii(radii, dims.to_vec(), self.state_dim)?;
        b.clip = self.clip.clone();
        Ok(b)
    }

    pub fn filter(&self) -> &[usize] {
        &self.filter
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Per-filtered-dimension offset interval admissible at `s`.
    pub fn offset_bounds(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.filter.len());
        let mut hi = Vec::with_capacity(self.filter.len());
        for (k, &f) in self.filter.iter().enumerate() {
            let r = self.radii[k];
            let (mut l, mut h) = (-r, r);
            if let Some(c) = &self.clip {
                l = l.max(c.lower[f] - s[f]);
                h = h.min(c.upper[f] - s[f]);
            }
            if l > h {
                // source state already outside the clip box on this axis
                l = 0.0;
                h = 0.0;
            }
            lo.push(l);
            hi.push(h);
        }
        (lo, hi)
    }

    /// `s` with `offsets` added on the filtered dimensions.
    pub fn perturb(&self, s: &[f64], offsets: &[f64]) -> Result<State> {
        if s.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: s.len(),
            });
        }
        if offsets.len() != self.filter.len() {
            return Err(Error::DimensionMismatch {
                expected: self.filter.len(),
                actual: offsets.len(),
            });
        }
        let mut out = s.to_vec();
        for (k, &f) in self.filter.iter().enumerate() {
            if !(offsets[k].abs() <= self.radii[k] * (1.0 + 1e-12)) {
                return Err(Error::InvalidArgument(format!(
                    "offset {} on dimension {f} exceeds radius {}",
                    offsets[k], self.radii[k]
                )));
            }
            out[f] += offsets[k];
        }
        Ok(out)
    }

    /// Whether `perturbed` is a valid perturbation of `source`.
    pub fn admits(&self, source: &[f64], perturbed: &[f64]) -> bool {
        if source.len() != self.state_dim || perturbed.len() != self.state_dim {
            return false;
        }
        (0..self.state_dim).all(|i| match self.filter.iter().position(|&f| f == i) {
            Some(k) => (perturbed[i] - source[i]).abs() <= self.radii[k] * (1.0 + 1e-9) + 1e-12,
            None => perturbed[i] == source[i],
        })
    }

    fn sample_offsets<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Vec<f64> {
        let (lo, hi) = self.offset_bounds(s);
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| if h > l { rng.gen_range(*l..*h) } else { *l })
            .collect()
    }
}

pub fn perturb(s: &[f64], pbox: &PerturbationBox, offsets: &[f64]) -> Result<State> {
    pbox.perturb(s, offsets)
}

/// How the perturbation radius is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EpsilonMode {
    Fixed {
        epsilon: f64,
    },
    Auto(EpsilonSearch),
    /// Radii equal to the initial-box half-widths.
    InitBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSearch {
    pub start: f64,
    pub step: f64,
    pub n_sims: usize,
    pub max: f64,
}

impl Default for EpsilonSearch {
    fn default() -> Self {
        Self {
            start: 0.001,
            step: 0.0005,
            n_sims: 1000,
            max: 0.5,
        }
    }
}

/// Violation predicate for early stopping.
pub fn violates(spec: &SafetySpec) -> impl Fn(&[f64]) -> bool + '_ {
    move |s: &[f64]| !spec.holds(s).unwrap_or(false)
}

/// Roll out from `start` for the full horizon, stopping at the first violation.
pub fn safety_rollout(
    env: &EnvModel,
    policy: &dyn Policy,
    spec: &SafetySpec,
    start: &[f64],
) -> Result<(Trajectory, f64)> {
    let stop = violates(spec);
    let traj = rollout(env, policy, start, Some(&stop))?;
    let r = spec.trajectory_reward(&traj)?;
    Ok((traj, r))
}

fn any_unsafe_at(
    env: &EnvModel,
    policy: &dyn Policy,
    spec: &SafetySpec,
    pbox: &PerturbationBox,
    n_sims: usize,
    seed: u64,
) -> Result<bool> {
    let mut rng = seed::child_rng(seed, "eps-sims", 0);
    let stop = violates(spec);
    let mut jobs = Vec::with_capacity(n_sims);
    for _ in 0..n_sims {
        let start = env.sample_initial(&mut rng);
        let pick: f64 = rng.gen();
        let seed = rng.gen::<u64>();
        jobs.push((start, pick, seed));
    }
    let hits: Vec<bool> = jobs
        .par_iter()
        .map(|(start, pick, s)| -> Result<bool> {
            let base = rollout(env, policy, start, Some(&stop))?;
            let k = ((pick * base.len() as f64) as usize).min(base.len() - 1);
            let mut rng = seed::rng(*s);
            let off = pbox.sample_offsets(&base.states[k], &mut rng);
            let sp = pbox.perturb(&base.states[k], &off)?;
            let traj = rollout(env, policy, &sp, Some(&stop))?;
            Ok(spec.trajectory_reward(&traj)? <= 0.0)
        })
        .collect::<Result<_>>()?;
    Ok(hits.into_iter().any(|h| h))
}

/// Smallest ε on the grid `start, start + step, ...` at which every policy
/// shows at least one unsafe rollout among `n_sims` random ε-perturbed ones.
pub fn select_epsilon(
    env: &EnvModel,
    policies: &[&dyn Policy],
    spec: &SafetySpec,
    filter: &[usize],
    search: &EpsilonSearch,
    seed: u64,
) -> Result<f64> {
    if policies.is_empty() {
        return Err(Error::EmptyInput("policies for epsilon selection"));
    }
    if !(search.start > 0.0 && search.step > 0.0 && search.max >= search.start) || search.n_sims == 0 {
        return Err(Error::Config("bad epsilon search settings".into()));
    }
    spec.bind(env.state_dim)?;
    let mut k = 0u64;
    loop {
        let eps = search.start + search.step * k as f64;
        if eps > search.max * (1.0 + 1e-12) {
            return Err(Error::NoEpsilonFound { max: search.max });
        }
        let pbox = PerturbationBox::new(eps, filter.to_vec(), env.state_dim)?;
        let mut all = true;
        for (i, p) in policies.iter().enumerate() {
            if !any_unsafe_at(
                env,
                *p,
                spec,
                &pbox,
                search.n_sims,
                seed::derive(seed, "eps", k * 1000 + i as u64),
            )? {
                all = false;
                break;
            }
        }
        if all {
            return Ok(eps);
        }
        k += 1;
    }
}

/// Which perturbed rollouts to keep in attack records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    All,
    #[default]
    UnsafeOnly,
    None,
}

/// One perturbed rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub source_traj: usize,
    /// Index of the attacked state on the source trajectory.
    pub step: usize,
    /// Evaluation ordinal for this attacked state.
    pub eval: usize,
    pub perturbed: State,
    pub safety_reward: Option<f64>,
    #[serde(rename = "unsafe")]
    pub is_unsafe: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub records: Vec<AttackRecord>,
}

impl AttackOutcome {
    pub fn unsafe_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_unsafe).count()
    }

    /// Unsafe rollouts over all rollouts.
    pub fn success_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.unsafe_count() as f64 / self.records.len() as f64
        }
    }

    /// Distinct unsafe perturbed states, in record order.
    pub fn adversarial_set(&self) -> Vec<State> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| r.is_unsafe)
            .filter(|r| seen.insert(r.perturbed.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .map(|r| r.perturbed.clone())
            .collect()
    }
}

fn evaluate(
    env: &EnvModel,
    policy: &dyn Policy,
    spec: &SafetySpec,
    perturbed: State,
    retention: Retention,
    ids: (usize, usize, usize),
) -> AttackRecord {
    let (source_traj, step, eval) = ids;
    match safety_rollout(env, policy, spec, &perturbed) {
        Ok((traj, reward)) => {
            let is_unsafe = reward <= 0.0;
            let keep = match retention {
                Retention::All => true,
                Retention::UnsafeOnly => is_unsafe,
                Retention::None => false,
            };
            AttackRecord {
                source_traj,
                step,
                eval,
                perturbed,
                safety_reward: Some(reward),
                is_unsafe,
                rollout: keep.then_some(traj),
                error: None,
            }
        }
        Err(e) => AttackRecord {
            source_traj,
            step,
            eval,
            perturbed,
            safety_reward: None,
            is_unsafe: false,
            rollout: None,
            error: Some(e.to_string()),
        },
    }
}

fn check_base(env: &EnvModel, spec: &SafetySpec, base: &Trajectory) -> Result<()> {
    spec.bind(env.state_dim)?;
    if base.is_empty() {
        return Err(Error::EmptyInput("base trajectory"));
    }
    if spec.trajectory_reward(base)? <= 0.0 {
        return Err(Error::InvalidArgument("base trajectory must be safe".into()));
    }
    Ok(())
}

/// Uniform random attack: a uniformly chosen state of `base`, perturbed
/// uniformly inside its box, per sample.
#[allow(clippy::too_many_arguments)]
pub fn random_attack(
    env: &EnvModel,
    policy: &dyn Policy,
    spec: &SafetySpec,
    pbox: &PerturbationBox,
    base: &Trajectory,
    n_samples: usize,
    retention: Retention,
    seed: u64,
) -> Result<AttackOutcome> {
    if n_samples == 0 {
        return Err(Error::Undefined(
            "random attack with zero samples has no success rate".into(),
        ));
    }
    check_base(env, spec, base)?;
    let mut rng = seed::child_rng(seed, "random-attack", 0);
    let jobs: Vec<(usize, State)> = (0..n_samples)
        .map(|_| {
            let k = rng.gen_range(0..base.len());
            let off = pbox.sample_offsets(&base.states[k], &mut rng);
            pbox.perturb(&base.states[k], &off).map(|s| (k, s))
        })
        .collect::<Result<_>>()?;
    let records = jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, (k, s))| evaluate(env, policy, spec, s, retention, (0, k, i)))
        .collect();
    Ok(AttackOutcome { records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoAttackConfig {
    pub acquisition: AcquisitionConfig,
    /// Attack every `stride`-th state of the base trajectory.
    pub stride: usize,
    pub retention: Retention,
}

impl Default for BoAttackConfig {
    fn default() -> Self {
        Self {
            acquisition: AcquisitionConfig::default(),
            stride: 1,
            retention: Retention::UnsafeOnly,
        }
    }
}

/// Attacked indices of a trajectory with `len` states.
pub fn attacked_indices(len: usize, stride: usize) -> Vec<usize> {
    (0..len).step_by(stride.max(1)).collect()
}

/// Per-state BO attack minimizing the perturbed rollout's safety reward.
pub fn bo_attack(
    env: &EnvModel,
    policy: &dyn Policy,
    spec: &SafetySpec,
    pbox: &PerturbationBox,
    base: &Trajectory,
    cfg: &BoAttackConfig,
    seed: u64,
) -> Result<AttackOutcome> {
    check_base(env, spec, base)?;
    cfg.acquisition.validate()?;
    if cfg.stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let per_state: Vec<Vec<AttackRecord>> = attacked_indices(base.len(), cfg.stride)
        .into_par_iter()
        .map(|k| -> Result<Vec<AttackRecord>> {
            let s = &base.states[k];
            let (lo, hi) = pbox.offset_bounds(s);
            let mut recs: Vec<AttackRecord> = Vec::with_capacity(cfg.acquisition.budget());
            let mut objective = |off: &[f64]| -> f64 {
                let eval = recs.len();
                let rec = match pbox.perturb(s, off) {
                    Ok(p) => evaluate(env, policy, spec, p, cfg.retention, (0, k, eval)),
                    Err(e) => AttackRecord {
                        source_traj: 0,
                        step: k,
                        eval,
                        perturbed: s.clone(),
                        safety_reward: None,
                        is_unsafe: false,
                        rollout: None,
                        error: Some(e.to_string()),
                    },
                };
                let y = rec.safety_reward.unwrap_or(f64::NAN);
                recs.push(rec);
                y
            };
            bo_minimize(
                &mut objective,
                &lo,
                &hi,
                &cfg.acquisition,
                seed::derive(seed, "bo-state", k as u64),
            )?;
            Ok(recs)
        })
        .collect::<Result<_>>()?;
    Ok(AttackOutcome {
        records: per_state.into_iter().flatten().collect(),
    })
}

/// Re-simulate the rollouts of records stored without them. Fails if a
/// recomputed safety reward differs from the stored one, which means the
/// policy or environment changed since the attack.
pub fn rehydrate_rollouts(
    env: &EnvModel,
    policy: &dyn Policy,
    spec: &SafetySpec,
    records: &mut [AttackRecord],
) -> Result<()> {
    records
        .par_iter_mut()
        .filter(|r| r.error.is_none() && r.rollout.is_none())
        .try_for_each(|r| -> Result<()> {
            let (traj, reward) = safety_rollout(env, policy, spec, &r.perturbed)?;
            if r.safety_reward.map(f64::to_bits) != Some(reward.to_bits()) {
                return Err(Error::InvalidArgument(format!(
                    "record (step {}, eval {}) does not replay: stored reward {:?}, recomputed {reward}",
                    r.step, r.eval, r.safety_reward
                )));
            }
            r.rollout = Some(traj);
            Ok(())
        })
}

/// Records as JSON lines, without their rollouts.
pub fn write_records_jsonl<W: std::io::Write>(mut w: W, records: &[AttackRecord]) -> Result<()> {
    for r in records {
        let line = AttackRecord {
            rollout: None,
            ..r.clone()
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl<R: std::io::BufRead>(r: R) -> Result<Vec<AttackRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Perturbed states labeled by the outcome of their rollouts.
pub fn records_dataset(records: &[AttackRecord], feature_names: Vec<String>) -> Result<LabeledDataset> {
    let rows: Vec<State> = records
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| r.perturbed.clone())
        .collect();
    let labels = records
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| if r.is_unsafe { Label::Unsafe } else { Label::Safe })
        .collect();
    LabeledDataset::new(rows, labels, feature_names)
}

/// Forest importances over the filter dimensions of `pbox`, learned from
/// attack records, and the state dimensions of the top `fraction` of them.
/// A single-class record set ranks every dimension equally.
pub fn rank_features(
    pbox: &PerturbationBox,
    records: &[AttackRecord],
    forest: &ForestConfig,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let full = records_dataset(records, (0..pbox.state_dim()).map(|i| format!("x{i}")).collect())?;
    let data = full.project(pbox.filter());
    let importances = match rf_train(&data, forest, seed) {
        Ok(rf) => rf.importances().to_vec(),
        Err(Error::SingleClass) | Err(Error::EmptyInput(_)) => {
            log::warn!("attack records hold a single class; ranking every filtered dimension equally");
            vec![1.0 / pbox.filter().len() as f64; pbox.filter().len()]
        }
        Err(e) => return Err(e),
    };
    let selected = select_top_features(&importances, fraction)?
        .into_iter()
        .map(|k| pbox.filter()[k])
        .collect();
    Ok((importances, selected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoStageConfig {
    pub stage1: BoAttackConfig,
    pub stage2: BoAttackConfig,
    /// Fraction of the filtered dimensions kept for stage 2.
    pub feature_fraction: f64,
    pub forest: ForestConfig,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            stage1: BoAttackConfig::default(),
            stage2: BoAttackConfig::default(),
            feature_fraction: 0.2,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageOutcome {
    pub stage1: AttackOutcome,
    /// Importances over the stage-1 filter dimensions (uniform if stage 1 found nothing).
    pub importances: Vec<f64>,
    pub selected: Vec<usize>,
    pub stage2: AttackOutcome,
}

/// Full-filter attack, forest importance ranking on its records, then a
/// second attack restricted to the top features.
pub fn two_stage_attack(
    env: &EnvModel,
    policy: &dyn Policy,
    spec: &SafetySpec,
    pbox: &PerturbationBox,
    base: &Trajectory,
    cfg: &TwoStageConfig,
    seed: u64,
) -> Result<TwoStageOutcome> {
    let stage1 = bo_attack(
        env,
        policy,
        spec,
        pbox,
        base,
        &cfg.stage1,
        seed::derive(seed, "stage1", 0),
    )?;
    let (importances, selected) = rank_features(
        pbox,
        &stage1.records,
        &cfg.forest,
        cfg.feature_fraction,
        seed::derive(seed, "select", 0),
    )?;
    let reduced = pbox.restricted(&selected)?;
    let stage2 = bo_attack(
        env,
        policy,
        spec,
        &reduced,
        base,
        &cfg.stage2,
        seed::derive(seed, "stage2", 0),
    )?;
    Ok(TwoStageOutcome {
        stage1,
        importances,
        selected,
        stage2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_offsets_identity() {
        let b = PerturbationBox::new(0.1, vec![0, 2], 3).unwrap();
        let s = vec![1.0, 2.0, 3.0];
        assert_eq!(b.perturb(&s, &[0.0, 0.0]).unwrap(), s);
    }

    #[test]
    fn single_dimension_shift() {
        let b = PerturbationBox::new(0.1, vec![0], 2).unwrap();
        let s = b.perturb(&[0.5, 0.5], &[0.1]).unwrap();
        assert_eq!(s, vec![0.5 + 0.1, 0.5]);
        assert!(b.admits(&[0.5, 0.5], &s));
        assert!(matches!(b.perturb(&[0.5, 0.5], &[0.2]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn filter_validation() {
        assert!(PerturbationBox::new(0.1, vec![0, 0], 2).is_err());
        assert!(PerturbationBox::new(0.1, vec![2], 2).is_err());
        assert!(PerturbationBox::new(0.1, vec![], 2).is_err());
    }

    #[test]
    fn clipped_offsets_stay_in_clip_box() {
        let b = PerturbationBox::new(0.3, vec![0, 1], 2)
            .unwrap()
            .with_clip(BoxBounds::symmetric(&[0.5, 0.5]))
            .unwrap();
        let (lo, hi) = b.offset_bounds(&[0.4, -0.1]);
        assert!((hi[0] - 0.1).abs() < 1e-12);
        assert!((lo[0] + 0.3).abs() < 1e-12);
        assert_eq!((lo[1], hi[1]), (-0.3, 0.3));
    }

    #[test]
    fn restriction_keeps_radii() {
        let b = PerturbationBox::with_radii(vec![0.1, 0.2, 0.3], vec![0, 1, 2], 3).unwrap();
        let r = b.restricted(&[2, 0]).unwrap();
        assert_eq!(r.filter(), &[2, 0]);
        assert_eq!(r.radii(), &[0.3, 0.1]);
        assert!(b.restricted(&[5]).is_err());
    }

    #[test]
    fn adversarial_set_is_deduplicated() {
        let rec = |p: Vec<f64>, u: bool| AttackRecord {
            source_traj: 0,
            step: 0,
            eval: 0,
            perturbed: p,
            safety_reward: Some(if u { -1.0 } else { 1.0 }),
            is_unsafe: u,
            rollout: None,
            error: None,
        };
        let out = AttackOutcome {
            records: vec![
                rec(vec![1.0], true),
                rec(vec![2.0], false),
                rec(vec![1.0], true),
                rec(vec![3.0], true),
            ],
        };
        assert_eq!(out.adversarial_set(), vec![vec![1.0], vec![3.0]]);
        assert_eq!(out.success_rate(), 0.75);
    }
}
