use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{safety_rollout, PerturbationBox};
use crate::envsim::{EnvModel, State, Trajectory};
use crate::error::{Error, Result};
use crate::neuralctl::Policy;
use crate::seed;
use crate::shield::{mean_return, neighborhood_starts, SweepRow};
use crate::specdsl::SafetySpec;

/// Fixed-precision rendering used by every metric CSV, so reruns compare
/// byte for byte.
pub fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "N/A".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_metric).unwrap_or_else(|| "N/A".to_string())
}

pub const SUMMARY_HEADER: &str = "benchmark,rand. attack,BO attack,defense succ. rate,attack improvement";

/// One row of the attack/defense summary table. Rates are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub benchmark: String,
    pub random_attack: f64,
    pub bo_attack: f64,
    pub defense_rate: f64,
    /// `None` when the baseline attack found nothing or the evaluation was skipped.
    pub attack_improvement: Option<f64>,
}

impl SummaryRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.benchmark,
            fmt_metric(self.random_attack),
            fmt_metric(self.bo_attack),
            fmt_metric(self.defense_rate),
            fmt_opt(self.attack_improvement)
        )
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Ordered `key,value` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics(pub Vec<(String, String)>);

impl Metrics {
    pub fn num(&mut self, key: &str, v: f64) {
        self.0.push((key.to_string(), fmt_metric(v)));
    }

    pub fn count(&mut self, key: &str, v: usize) {
        self.0.push((key.to_string(), v.to_string()));
    }

    pub fn opt(&mut self, key: &str, v: Option<f64>) {
        self.0.push((key.to_string(), fmt_opt(v)));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.0 {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}

pub const SWEEP_HEADER: &str = "c,defense_rate,mean_perf_return,intervention_count,live_interventions";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_metric(r.c),
            fmt_metric(r.defense_rate),
            fmt_metric(r.mean_perf_return),
            r.intervention_count,
            r.live_interventions
        ));
    }
    out
}

/// Row `i` holds, for each policy `j`, the fraction of adversarial set `i`
/// that is also adversarial for `j`. Rows of empty sets are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl TransferMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows[i].as_ref().map(|r| r[j])
    }

    pub fn csv(&self) -> String {
        let mut out = format!("source,{}\n", self.names.join(","));
        for (name, row) in self.names.iter().zip(&self.rows) {
            let cells: Vec<String> = match row {
                Some(r) => r.iter().map(|v| fmt_metric(*v)).collect(),
                None => vec!["N/A".to_string(); self.names.len()],
            };
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }
}

/// Cross-evaluate adversarial sets: entry `(i, j)` is the fraction of
/// `sets[i]` whose rollout under `policies[j]` violates the spec. The
/// diagonal is 1 by definition of an adversarial set.
pub fn transferability(
    env: &EnvModel,
    spec: &SafetySpec,
    names: &[String],
    sets: &[Vec<State>],
    policies: &[&dyn Policy],
) -> Result<TransferMatrix> {
    if policies.len() < 2 {
        return Err(Error::InvalidArgument(
            "transferability needs at least two policies".into(),
        ));
    }
    if sets.len() != policies.len() || names.len() != policies.len() {
        return Err(Error::DimensionMismatch {
            expected: policies.len(),
            actual: sets.len().min(names.len()),
        });
    }
    let mut rows = Vec::with_capacity(sets.len());
    for (i, set) in sets.iter().enumerate() {
        if set.is_empty() {
            rows.push(None);
            continue;
        }
        let mut row = Vec::with_capacity(policies.len());
        for (j, p) in policies.iter().enumerate() {
            if i == j {
                row.push(1.0);
                continue;
            }
            let hits: Vec<bool> = set
                .par_iter()
                .map(|s| safety_rollout(env, *p, spec, s).map(|(_, r)| r <= 0.0))
                .collect::<Result<_>>()?;
            row.push(hits.iter().filter(|&&h| h).count() as f64 / set.len() as f64);
        }
        rows.push(Some(row));
    }
    Ok(TransferMatrix {
        names: names.to_vec(),
        rows,
    })
}

/// Performance of the shielded policy against the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub n_runs: usize,
    /// `|mean return of the original policy on nominal starts|`.
    pub normalization: f64,
    pub mean_return_orig: f64,
    pub mean_return_shielded: f64,
    pub relative_gap: f64,
    /// A single run carries no variance information.
    pub unreliable: bool,
}

impl PerfReport {
    pub fn csv(&self) -> String {
        format!(
            "n_runs,normalization,mean_return_orig,mean_return_shielded,relative_gap,unreliable\n{},{},{},{},{},{}\n",
            self.n_runs,
            fmt_metric(self.normalization),
            fmt_metric(self.mean_return_orig),
            fmt_metric(self.mean_return_shielded),
            fmt_metric(self.relative_gap),
            self.unreliable
        )
    }
}

/// Mean normalized returns of both policies from `n_runs` starts in the
/// perturbation neighborhood of `base`.
pub fn perf_report(
    env: &EnvModel,
    original: &dyn Policy,
    shielded: &dyn Policy,
    base: &Trajectory,
    pbox: &PerturbationBox,
    n_runs: usize,
    seed: u64,
) -> Result<PerfReport> {
    if n_runs == 0 {
        return Err(Error::EmptyInput("performance runs"));
    }
    let mut rng = seed::child_rng(seed, "perf-nominal", 0);
    let nominal: Vec<State> = (0..n_runs).map(|_| env.sample_initial(&mut rng)).collect();
    let mut normalization = mean_return(env, original, &nominal)?.abs();
    if !(normalization > 0.0 && normalization.is_finite()) {
        log::warn!("degenerate nominal return; reporting unnormalized returns");
        normalization = 1.0;
    }
    let starts = neighborhood_starts(base, pbox, n_runs, seed::derive(seed, "perf-starts", 0))?;
    let orig = mean_return(env, original, &starts)? / normalization;
    let shielded = mean_return(env, shielded, &starts)? / normalization;
    let relative_gap = if orig == 0.0 {
        if shielded == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (orig - shielded).abs() / orig.abs()
    };
    if n_runs == 1 {
        log::warn!("performance report from a single run is unreliable");
    }
    Ok(PerfReport {
        n_runs,
        normalization,
        mean_return_orig: orig,
        mean_return_shielded: shielded,
        relative_gap,
        unreliable: n_runs < 2,
    })
}
