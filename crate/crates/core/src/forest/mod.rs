//! CART random forest with Gini impurity and mean-decrease-in-impurity importances.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Unsafe,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Safe => 0,
            Label::Unsafe => 1,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Safe => Label::Unsafe,
            Label::Unsafe => Label::Safe,
        }
    }
}

/// States with safe/unsafe labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<Label>, feature_names: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        let d = feature_names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.len(),
            });
        }
        Ok(Self {
            rows,
            labels,
            feature_names,
        })
    }

    /// Dataset with features named `x0, x1, ...`.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        Self::new(rows, labels, (0..d).map(|i| format!("x{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// `[safe, unsafe]` row counts.
    pub fn counts(&self) -> [usize; 2] {
        let mut c = [0, 0];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same rows with the labels swapped.
    pub fn flipped(&self) -> LabeledDataset {
        LabeledDataset {
            labels: self.labels.iter().map(|l| l.flipped()).collect(),
            ..self.clone()
        }
    }

    /// Keep only the listed columns, in order.
    pub fn project(&self, features: &[usize]) -> LabeledDataset {
        LabeledDataset {
            rows: self
                .rows
                .iter()
                .map(|r| features.iter().map(|&f| r[f]).collect())
                .collect(),
            labels: self.labels.clone(),
            feature_names: features.iter().map(|&f| self.feature_names[f].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bootstrap {
    /// `n` rows drawn with replacement.
    Standard,
    /// `n` rows drawn with replacement, half from each class.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: Bootstrap,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 50,
            max_features: None,
            bootstrap: Bootstrap::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        freq: [f64; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_freq(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { freq } => return *freq,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
    importances: Vec<f64>,
    n_features: usize,
}

fn gini(c: [f64; 2]) -> f64 {
    let n = c[0] + c[1];
    if n == 0.0 {
        return 0.0;
    }
    let p = c[0] / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a, R: Rng> {
    rows: &'a [Vec<f64>],
    labels: &'a [Label],
    max_depth: usize,
    mtry: usize,
    total: f64,
    importance: Vec<f64>,
    nodes: Vec<Node>,
    rng: R,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn counts(&self, idx: &[usize]) -> [f64; 2] {
        let mut c = [0.0, 0.0];
        for &i in idx {
            c[self.labels[i].index()] += 1.0;
        }
        c
    }

    fn best_on(&self, feature: usize, idx: &[usize], parent: [f64; 2]) -> Option<BestSplit> {
        let mut pairs: Vec<(f64, usize)> = idx
            .iter()
            .map(|&i| (self.rows[i][feature], self.labels[i].index()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[pairs.len() - 1].0 {
            return None;
        }
        let n = pairs.len() as f64;
        let parent_imp = n * gini(parent);
        let mut left = [0.0, 0.0];
        let mut best: Option<BestSplit> = None;
        for k in 0..pairs.len() - 1 {
            left[pairs[k].1] += 1.0;
            if pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let nl = (k + 1) as f64;
            let gain = parent_imp - nl * gini(left) - (n - nl) * gini(right);
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = 0.5 * (pairs[k].0 + pairs[k + 1].0);
                if threshold >= pairs[k + 1].0 {
                    threshold = pairs[k].0;
                }
                best = Some(BestSplit {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let c = self.counts(&idx);
        let id = self.nodes.len();
        let n = c[0] + c[1];
        self.nodes.push(Node::Leaf {
            freq: [c[0] / n, c[1] / n],
        });
        if depth >= self.max_depth || idx.len() < 2 || c[0] == 0.0 || c[1] == 0.0 {
            return id;
        }
        let d = self.rows[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in order.iter().enumerate() {
            // keep looking past mtry only while no valid split was found
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.best_on(f, &idx, c) {
                if best.as_ref().is_none_or(|b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else {
            return id;
        };
        self.importance[split.feature] += split.gain.max(0.0) / self.total;
        let (li, ri): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.rows[i][split.feature] <= split.threshold);
        let left = self.build(li, depth + 1);
        let right = self.build(ri, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / v.len() as f64;
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Train a forest; trees are built in parallel from per-tree seeds.
pub fn rf_train(data: &LabeledDataset, cfg: &ForestConfig, seed: u64) -> Result<RandomForest> {
    if data.is_empty() {
        return Err(Error::EmptyInput("forest training set"));
    }
    let counts = data.counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass);
    }
    if cfg.n_trees == 0 || cfg.max_depth == 0 {
        return Err(Error::Config("forest needs n_trees >= 1 and max_depth >= 1".into()));
    }
    let d = data.dim();
    if d == 0 {
        return Err(Error::EmptyInput("forest features"));
    }
    let mtry = cfg
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let by_class: [Vec<usize>; 2] = [
        (0..data.len()).filter(|&i| data.labels[i] == Label::Safe).collect(),
        (0..data.len()).filter(|&i| data.labels[i] == Label::Unsafe).collect(),
    ];
    let n = data.len();
    let results: Vec<(Tree, Vec<f64>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::child_rng(seed, "tree", t as u64);
            let idx: Vec<usize> = match cfg.bootstrap {
                Bootstrap::Standard => (0..n).map(|_| rng.gen_range(0..n)).collect(),
                Bootstrap::Balanced => (0..n)
                    .map(|k| {
                        let class = &by_class[k % 2];
                        class[rng.gen_range(0..class.len())]
                    })
                    .collect(),
            };
            let mut b = Builder {
                rows: &data.rows,
                labels: &data.labels,
                max_depth: cfg.max_depth,
                mtry,
                total: idx.len() as f64,
                importance: vec![0.0; d],
                nodes: Vec::new(),
                rng,
            };
            b.build(idx, 0);
            let mut imp = b.importance;
            if imp.iter().sum::<f64>() > 0.0 {
                normalize(&mut imp);
            }
            (Tree { nodes: b.nodes }, imp)
        })
        .collect();
    let mut importances = vec![0.0; d];
    let mut trees = Vec::with_capacity(results.len());
    for (tree, imp) in results {
        for (a, b) in importances.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    normalize(&mut importances);
    Ok(RandomForest {
        trees,
        importances,
        n_features: d,
    })
}

impl RandomForest {
    /// `(score_safe, score_unsafe)`: mean leaf class frequencies over trees.
    pub fn predict_scores(&self, x: &[f64]) -> (f64, f64) {
        let mut acc = [0.0, 0.0];
        for t in &self.trees {
            let f = t.leaf_freq(x);
            acc[0] += f[0];
            acc[1] += f[1];
        }
        let k = self.trees.len() as f64;
        let safe = acc[0] / k;
        (safe, 1.0 - safe)
    }

    /// Majority label; ties go to `Unsafe`.
    pub fn predict(&self, x: &[f64]) -> Label {
        let (s, u) = self.predict_scores(x);
        if s > u {
            Label::Safe
        } else {
            Label::Unsafe
        }
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .rows
            .iter()
            .zip(&data.labels)
            .filter(|(r, l)| self.predict(r) == **l)
            .count();
        hits as f64 / data.len() as f64
    }

    /// Normalized mean-decrease-in-impurity importances.
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

pub fn rf_predict_scores(rf: &RandomForest, x: &[f64]) -> (f64, f64) {
    rf.predict_scores(x)
}

/// Indices of the `ceil(fraction * d)` most important features, most
/// important first, ties broken by lower index.
pub fn select_top_features(importances: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "feature fraction {fraction} outside (0, 1]"
        )));
    }
    let d = importances.len();
    let k = top_k_count(d, fraction);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// `ceil(fraction * d)`, guarding against round-off just above an integer.
pub fn top_k_count(d: usize, fraction: f64) -> usize {
    ((fraction * d as f64 - 1e-9).ceil() as usize).clamp(1, d.max(1))
}

/// Two-column CSV report, most important feature first.
pub fn importance_csv(names: &[String], importances: &[f64]) -> String {
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    let mut out = String::from("feature,importance\n");
    for i in order {
        out.push_str(&format!("{},{:.6}\n", names[i], importances[i]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor() -> LabeledDataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let a = (i % 2) as f64;
            let b = ((i / 2) % 2) as f64;
            rows.push(vec![a + 0.01 * (i as f64 / 200.0), b]);
            labels.push(if (a == 1.0) ^ (b == 1.0) {
                Label::Unsafe
            } else {
                Label::Safe
            });
        }
        LabeledDataset::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn stump_cannot_fit_xor() {
        let data = xor();
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: 1,
            max_features: Some(2),
            ..Default::default()
        };
        let rf = rf_train(&data, &cfg, 1).unwrap();
        assert!(rf.accuracy(&data) <= 0.75);
        let deep = rf_train(
            &data,
            &ForestConfig {
                n_trees: 10,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert!(deep.accuracy(&data) > 0.99);
    }

    #[test]
    fn single_class_rejected() {
        let data = LabeledDataset::from_rows(vec![vec![0.0], vec![1.0]], vec![Label::Safe; 2]).unwrap();
        assert!(matches!(
            rf_train(&data, &ForestConfig::default(), 0),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let data = LabeledDataset::from_rows(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![Label::Safe, Label::Safe, Label::Unsafe, Label::Unsafe],
        )
        .unwrap();
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: Bootstrap::Balanced,
            ..Default::default()
        };
        let rf = rf_train(&data, &cfg, 3).unwrap();
        // one split, two pure leaves
        assert_eq!(rf.trees[0].nodes.len(), 3);
        assert_eq!(rf.predict_scores(&[-5.0]), (1.0, 0.0));
    }

    #[test]
    fn top_features_order_and_ties() {
        let imp = [0.1, 0.4, 0.1, 0.4];
        assert_eq!(select_top_features(&imp, 0.5).unwrap(), vec![1, 3]);
        assert_eq!(select_top_features(&imp, 1.0).unwrap(), vec![1, 3, 0, 2]);
        assert_eq!(select_top_features(&imp, 0.01).unwrap(), vec![1]);
        assert!(select_top_features(&imp, 0.0).is_err());
        assert!(select_top_features(&imp, 1.5).is_err());
        assert_eq!(top_k_count(44, 0.2), 9);
        assert_eq!(top_k_count(10, 0.2), 2);
    }

    #[test]
    fn csv_report() {
        let names = vec!["a".to_string(), "b".to_string()];
        assert_eq!(
            importance_csv(&names, &[0.25, 0.75]),
            "feature,importance\nb,0.750000\na,0.250000\n"
        );
    }
}
