//! Safe/unsafe state detector trained on attack outcomes, with the
//! approximating constant `C` in the decision `safe <=> S_safe > S_unsafe + C`.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackRecord;
use crate::envsim::{State, Trajectory};
use crate::error::{Error, Result};
use crate::forest::{rf_train, Bootstrap, ForestConfig, Label, LabeledDataset, RandomForest};
use crate::neuralctl::{Activation, Adam, DenseNet};
use crate::seed;

/// Label every state of each safe trajectory as safe, and every state of each
/// unsafe perturbed rollout (starting at the perturbed state) as unsafe.
///
/// Safe perturbed rollouts, when retained, count as safe trajectories.
/// Identical `(state, label)` pairs are kept once, in first-seen order.
pub fn build_dataset(records: &[AttackRecord], safe_trajs: &[Trajectory]) -> Result<LabeledDataset> {
    let mut rows: Vec<State> = Vec::new();
    let mut labels: Vec<Label> = Vec::new();
    let mut seen: HashSet<(Vec<u64>, Label)> = HashSet::new();
    let mut dim: Option<usize> = None;
    let mut push = |s: &State, l: Label, rows: &mut Vec<State>, labels: &mut Vec<Label>| -> Result<()> {
        match dim {
            None => dim = Some(s.len()),
            Some(d) if d != s.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: s.len(),
                })
            }
            _ => {}
        }
        if seen.insert((s.iter().map(|v| v.to_bits()).collect(), l)) {
            rows.push(s.clone());
            labels.push(l);
        }
        Ok(())
    };
    for t in safe_trajs {
        for s in &t.states {
            push(s, Label::Safe, &mut rows, &mut labels)?;
        }
    }
    for r in records.iter().filter(|r| r.error.is_none()) {
        match (&r.rollout, r.is_unsafe) {
            (Some(t), true) => {
                for s in &t.states {
                    push(s, Label::Unsafe, &mut rows, &mut labels)?;
                }
            }
            (Some(t), false) => {
                for s in &t.states {
                    push(s, Label::Safe, &mut rows, &mut labels)?;
                }
            }
            (None, true) => {
                return Err(Error::InvalidArgument(format!(
                    "unsafe record at step {} eval {} has no rollout",
                    r.step, r.eval
                )))
            }
            (None, false) => {}
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("detector dataset"));
    }
    LabeledDataset::from_rows(rows, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Forest,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseClassifierConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for DenseClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub forest: ForestConfig,
    pub dense: DenseClassifierConfig,
    pub holdout_fraction: f64,
    /// Stratified cap on rows per class before the split.
    pub max_rows_per_class: Option<usize>,
    /// Approximating constant.
    pub c: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Forest,
            forest: ForestConfig {
                bootstrap: Bootstrap::Balanced,
                ..ForestConfig::default()
            },
            dense: DenseClassifierConfig::default(),
            holdout_fraction: 0.2,
            max_rows_per_class: Some(20_000),
            c: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Backend {
    Forest(RandomForest),
    Dense(DenseNet),
}

/// Two-score classifier; `classify` returns `true` for unsafe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    backend: Backend,
    c: f64,
    state_dim: usize,
}

fn softmax2(z: &[f64]) -> (f64, f64) {
    let m = z[0].max(z[1]);
    let a = (z[0] - m).exp();
    let b = (z[1] - m).exp();
    (a / (a + b), b / (a + b))
}

impl Detector {
    pub fn from_forest(rf: RandomForest, c: f64) -> Self {
        let state_dim = rf.n_features();
        Self {
            backend: Backend::Forest(rf),
            c,
            state_dim,
        }
    }

    pub fn kind(&self) -> DetectorKind {
        match self.backend {
            Backend::Forest(_) => DetectorKind::Forest,
            Backend::Dense(_) => DetectorKind::Dense,
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `(S_safe, S_unsafe)`, summing to one.
    pub fn scores(&self, s: &[f64]) -> (f64, f64) {
        match &self.backend {
            Backend::Forest(rf) => rf.predict_scores(s),
            Backend::Dense(net) => match net.forward(s) {
                Ok(z) => softmax2(&z),
                Err(_) => (0.0, 1.0),
            },
        }
    }

    /// `S_safe - S_unsafe`.
    pub fn margin(&self, s: &[f64]) -> f64 {
        let (a, b) = self.scores(s);
        a - b
    }

    /// `true` when the state is judged unsafe: not `S_safe > S_unsafe + C`.
    pub fn classify(&self, s: &[f64]) -> bool {
        let (a, b) = self.scores(s);
        !(a > b + self.c)
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .rows
            .iter()
            .zip(&data.labels)
            .filter(|(r, l)| self.classify(r) == (**l == Label::Unsafe))
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn classify(det: &Detector, s: &[f64]) -> bool {
    det.classify(s)
}

/// Training summary stored next to a detector checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub kind: DetectorKind,
    pub c: f64,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub train_counts: [usize; 2],
    pub holdout_accuracy: f64,
    pub train_accuracy: f64,
    /// SHA-256 of the full dataset before subsampling and splitting.
    pub data_hash: String,
}

pub fn dataset_hash(data: &LabeledDataset) -> String {
    let mut h = Sha256::new();
    for (r, l) in data.rows.iter().zip(&data.labels) {
        for v in r {
            h.update(v.to_le_bytes());
        }
        h.update([l.index() as u8]);
    }
    hex::encode(h.finalize())
}

/// Stratified split into `(train, holdout)` index lists, after an optional
/// per-class cap. Both lists are sorted.
pub fn stratified_split(
    data: &LabeledDataset,
    holdout_fraction: f64,
    max_per_class: Option<usize>,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::child_rng(seed, "split", 0);
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for class in [Label::Safe, Label::Unsafe] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        idx.shuffle(&mut rng);
        if let Some(cap) = max_per_class {
            idx.truncate(cap);
        }
        let n_hold = if idx.len() >= 2 {
            ((idx.len() as f64 * holdout_fraction).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        hold.extend_from_slice(&idx[..n_hold]);
        train.extend_from_slice(&idx[n_hold..]);
    }
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

fn train_dense(data: &LabeledDataset, cfg: &DenseClassifierConfig, seed: u64) -> Result<DenseNet> {
    let d = data.dim();
    let mut sizes = vec![d];
    sizes.extend(&cfg.hidden);
    sizes.push(2);
    let mut acts = vec![Activation::Relu; cfg.hidden.len()];
    acts.push(Activation::Identity);
    let mut rng = seed::child_rng(seed, "dense-detector", 0);
    let mut net = DenseNet::random(
        &sizes,
        &acts,
        1.0 / (*sizes.iter().rev().nth(1).unwrap() as f64).sqrt(),
        &mut rng,
    )?;
    let counts = data.counts();
    let n = data.len() as f64;
    // inverse class frequency, normalized so that a balanced set has weight 1
    let weight = [n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)];
    let mut opt = Adam::new(net.num_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; net.num_params()];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let cache = net.forward_cached(&data.rows[i])?;
                let (p0, p1) = softmax2(cache.output());
                let y = data.labels[i].index();
                let w = weight[y];
                let p = [p0, p1];
                loss -= w * p[y].max(1e-300).ln() * inv;
                let up = [w * (p0 - f64::from(y == 0)) * inv, w * (p1 - f64::from(y == 1)) * inv];
                net.backward_into(&cache, &up, &mut grad)?;
            }
            opt.step(net.params_mut(), &grad);
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: epoch,
                detail: "detector loss is not finite".into(),
            });
        }
        log::debug!("dense detector epoch {epoch}: loss {loss:.4}");
    }
    Ok(net)
}

/// Train a detector on a stratified split and report held-out accuracy.
pub fn train_detector(data: &LabeledDataset, cfg: &DetectorConfig, seed: u64) -> Result<(Detector, DetectorReport)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("detector dataset"));
    }
    let counts = data.counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass);
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::Config("holdout fraction must lie in [0, 1)".into()));
    }
    let (train_idx, hold_idx) = stratified_split(data, cfg.holdout_fraction, cfg.max_rows_per_class, seed);
    let train = data.subset(&train_idx);
    let hold = data.subset(&hold_idx);
    let backend = match cfg.kind {
        DetectorKind::Forest => Backend::Forest(rf_train(&train, &cfg.forest, seed::derive(seed, "forest", 0))?),
        DetectorKind::Dense => Backend::Dense(train_dense(&train, &cfg.dense, seed)?),
    };
    let det = Detector {
        backend,
        c: cfg.c,
        state_dim: data.dim(),
    };
    let report = DetectorReport {
        kind: cfg.kind,
        c: cfg.c,
        train_rows: train.len(),
        holdout_rows: hold.len(),
        train_counts: train.counts(),
        holdout_accuracy: if hold.is_empty() { f64::NAN } else { det.accuracy(&hold) },
        train_accuracy: det.accuracy(&train),
        data_hash: dataset_hash(data),
    };
    Ok((det, report))
}

/// Range of `S_safe - S_unsafe` over a state set, with ten evenly spaced
/// candidate values of `C` (endpoints included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CRange {
    pub l: f64,
    pub h: f64,
    pub samples: Vec<f64>,
}

pub const C_SAMPLES: usize = 10;

pub fn c_range(det: &Detector, states: &[State]) -> Result<CRange> {
    if states.is_empty() {
        return Err(Error::EmptyInput("states for the C range"));
    }
    let (mut l, mut h) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in states {
        let m = det.margin(s);
        l = l.min(m);
        h = h.max(m);
    }
    let samples = (0..C_SAMPLES)
        .map(|i| {
            if i + 1 == C_SAMPLES {
                h
            } else {
                l + (h - l) * i as f64 / (C_SAMPLES - 1) as f64
            }
        })
        .collect();
    Ok(CRange { l, h, samples })
}

/// Uniform random states in a box, for invariant checks.
pub fn random_states(lower: &[f64], upper: &[f64], n: usize, seed: u64) -> Vec<State> {
    let mut rng = seed::child_rng(seed, "random-states", 0);
    (0..n)
        .map(|_| lower.iter().zip(upper).map(|(l, h)| rng.gen_range(*l..=*h)).collect())
        .collect()
}
