//! Discrete-time plant models and rollouts.

mod benchmarks;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralctl::Policy;

pub use benchmarks::{load_benchmark, make_benchmark, Benchmark, BenchmarkFile};

pub type State = Vec<f64>;

/// Weight of the action term in the quadratic performance cost.
pub const ACTION_COST: f64 = 0.01;

/// Per-dimension closed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Config(format!(
                "box dimension {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(half_widths: &[f64]) -> Self {
        Self {
            lower: half_widths.iter().map(|w| -w).collect(),
            upper: half_widths.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == self.dim()
            && s.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) / 2.0)
            .collect()
    }

    /// Uniform sample, independently per dimension.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| lo + (hi - lo) * rng.gen::<f64>())
            .collect()
    }
}

type StepFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub enum Dynamics {
    /// Frictionless pendulum `θ'' = (g/l) sin θ + u/(m l²)` with `θ = 0` upright,
    /// integrated by fixed-step RK4.
    Pendulum {
        gravity: f64,
        length: f64,
        mass: f64,
        dt: f64,
    },
    /// `s' = A s + B u`.
    Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
    Custom(Arc<StepFn>),
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Pendulum {
                gravity,
                length,
                mass,
                dt,
            } => f
                .debug_struct("Pendulum")
                .field("gravity", gravity)
                .field("length", length)
                .field("mass", mass)
                .field("dt", dt)
                .finish(),
            Dynamics::Linear { a, b } => write!(f, "Linear({}x{}, {}x{})", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
            Dynamics::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Dynamics {
    fn step(&self, s: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            Dynamics::Pendulum {
                gravity,
                length,
                mass,
                dt,
            } => {
                let torque = u[0];
                let accel = |theta: f64| gravity / length * theta.sin() + torque / (mass * length * length);
                let deriv = |th: f64, om: f64| (om, accel(th));
                let (th, om) = (s[0], s[1]);
                let (k1t, k1w) = deriv(th, om);
                let (k2t, k2w) = deriv(th + 0.5 * dt * k1t, om + 0.5 * dt * k1w);
                let (k3t, k3w) = deriv(th + 0.5 * dt * k2t, om + 0.5 * dt * k2w);
                let (k4t, k4w) = deriv(th + dt * k3t, om + dt * k3w);
                vec![
                    th + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
                    om + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
                ]
            }
            Dynamics::Linear { a, b } => {
                let n = a.nrows();
                (0..n)
                    .map(|i| {
                        let mut v = 0.0;
                        for j in 0..a.ncols() {
                            v += a[(i, j)] * s[j];
                        }
                        for j in 0..b.ncols() {
                            v += b[(i, j)] * u[j];
                        }
                        v
                    })
                    .collect()
            }
            Dynamics::Custom(f) => f(s, u),
        }
    }
}

/// A deterministic discrete-time plant with a bounded initial region.
#[derive(Debug, Clone)]
pub struct EnvModel {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub dynamics: Dynamics,
    pub init_box: BoxBounds,
    /// Safe region used to clip perturbations, when the benchmark defines one.
    pub safety_box: Option<BoxBounds>,
    /// Symmetric actuator limits, one per action dimension.
    pub action_bound: Vec<f64>,
}

impl EnvModel {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        action_dim: usize,
        horizon: usize,
        dynamics: Dynamics,
        init_box: BoxBounds,
    ) -> Result<Self> {
        let env = Self {
            name: name.into(),
            state_dim,
            action_dim,
            horizon,
            dynamics,
            init_box,
            safety_box: None,
            action_bound: vec![f64::INFINITY; action_dim],
        };
        env.validate()?;
        Ok(env)
    }

    pub fn with_action_bound(mut self, bound: Vec<f64>) -> Result<Self> {
        self.action_bound = bound;
        self.validate()?;
        Ok(self)
    }

    pub fn with_safety_box(mut self, safety: BoxBounds) -> Result<Self> {
        self.safety_box = Some(safety);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.horizon == 0 {
            return Err(Error::Config(format!(
                "{}: state_dim, action_dim and horizon must be positive",
                self.name
            )));
        }
        let dim_check = |expected: usize, actual: usize| {
            if expected != actual {
                Err(Error::DimensionMismatch { expected, actual })
            } else {
                Ok(())
            }
        };
        dim_check(self.state_dim, self.init_box.dim())?;
        if let Some(s) = &self.safety_box {
            dim_check(self.state_dim, s.dim())?;
        }
        dim_check(self.action_dim, self.action_bound.len())?;
        if self.action_bound.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("action bounds must be positive".into()));
        }
        match &self.dynamics {
            Dynamics::Linear { a, b } => {
                dim_check(self.state_dim, a.nrows())?;
                dim_check(self.state_dim, a.ncols())?;
                dim_check(self.state_dim, b.nrows())?;
                dim_check(self.action_dim, b.ncols())?;
            }
            Dynamics::Pendulum { .. } => {
                dim_check(2, self.state_dim)?;
                dim_check(1, self.action_dim)?;
            }
            Dynamics::Custom(_) => {}
        }
        Ok(())
    }

    pub fn clip_action(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.action_bound).map(|(x, b)| x.clamp(-b, *b)).collect()
    }

    /// One transition with actuator saturation applied.
    pub fn step(&self, s: &[f64], u: &[f64]) -> Vec<f64> {
        let u = self.clip_action(u);
        self.dynamics.step(s, &u)
    }

    /// Quadratic performance reward `-sᵀs - 0.01 uᵀu`.
    pub fn perf_reward(&self, s: &[f64], u: &[f64]) -> f64 {
        let ss: f64 = s.iter().map(|x| x * x).sum();
        let uu: f64 = u.iter().map(|x| x * x).sum();
        -ss - ACTION_COST * uu
    }

    /// Uniform sample from the initial region.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        self.init_box.sample(rng)
    }

    pub fn linear_parts(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        match &self.dynamics {
            Dynamics::Linear { a, b } => Some((a, b)),
            _ => None,
        }
    }
}

/// Seeded convenience wrapper around [`EnvModel::sample_initial`].
pub fn sample_initial(env: &EnvModel, seed: u64) -> State {
    env.sample_initial(&mut crate::seed::rng(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<Vec<f64>>,
    /// Undiscounted sum of performance rewards.
    pub perf_return: f64,
}

impl Trajectory {
    pub fn new(start: State) -> Self {
        Self {
            states: vec![start],
            actions: Vec::new(),
            perf_return: 0.0,
        }
    }

    pub fn push(&mut self, action: Vec<f64>, next: State) {
        self.actions.push(action);
        self.states.push(next);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has a start state")
    }
}

/// Early-termination predicate on states.
pub type StopRule<'a> = &'a dyn Fn(&[f64]) -> bool;

/// Execute `policy` from `start` for up to `env.horizon` steps.
///
/// `stop` is checked on every state including the start; the rollout ends
/// right after the first state on which it returns true (that state is kept).
pub fn rollout(env: &EnvModel, policy: &dyn Policy, start: &[f64], stop: Option<StopRule>) -> Result<Trajectory> {
    rollout_for(env, policy, start, env.horizon, stop)
}

pub fn rollout_for(
    env: &EnvModel,
    policy: &dyn Policy,
    start: &[f64],
    steps: usize,
    stop: Option<StopRule>,
) -> Result<Trajectory> {
    if start.len() != env.state_dim {
        return Err(Error::DimensionMismatch {
            expected: env.state_dim,
            actual: start.len(),
        });
    }
    if let Some(d) = policy.state_dim().filter(|&d| d != env.state_dim) {
        return Err(Error::DimensionMismatch {
            expected: env.state_dim,
            actual: d,
        });
    }
    if start.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericOverflow { step: 0 });
    }
    let mut traj = Trajectory::new(start.to_vec());
    if stop.is_some_and(|f| f(start)) {
        return Ok(traj);
    }
    for t in 0..steps {
        let s = traj.last();
        let raw = policy.act(s);
        if raw.len() != env.action_dim {
            return Err(Error::DimensionMismatch {
                expected: env.action_dim,
                actual: raw.len(),
            });
        }
        let u = env.clip_action(&raw);
        let next = env.dynamics.step(s, &u);
        if next.len() != env.state_dim {
            return Err(Error::DimensionMismatch {
                expected: env.state_dim,
                actual: next.len(),
            });
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericOverflow { step: t + 1 });
        }
        traj.perf_return += env.perf_reward(s, &u);
        let done = stop.is_some_and(|f| f(&next));
        traj.push(u, next);
        if done {
            break;
        }
    }
    Ok(traj)
}

/// One JSON-lines record of a persisted trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub traj: usize,
    pub t: usize,
    pub state: State,
    /// Absent on the final state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Vec<f64>>,
}

pub fn write_trajectories_jsonl<W: std::io::Write>(mut w: W, trajs: &[Trajectory]) -> Result<()> {
    for (id, tr) in trajs.iter().enumerate() {
        for (t, s) in tr.states.iter().enumerate() {
            let line = TrajectoryLine {
                traj: id,
                t,
                state: s.clone(),
                action: tr.actions.get(t).cloned(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn read_trajectories_jsonl<R: std::io::BufRead>(r: R, env: &EnvModel) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    let mut pending: Option<Vec<f64>> = None;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryLine = serde_json::from_str(&line)?;
        let n = out.len();
        if rec.t == 0 && rec.traj == n {
            out.push(Trajectory::new(rec.state));
        } else if rec.traj + 1 == n && rec.t == out[n - 1].len() {
            let tr = &mut out[n - 1];
            let action = pending.take().ok_or_else(|| {
                Error::Config(format!("trajectory {}: missing action before step {}", rec.traj, rec.t))
            })?;
            tr.perf_return += env.perf_reward(tr.last(), &action);
            tr.push(action, rec.state);
        } else {
            return Err(Error::Config(format!(
                "trajectory lines out of order at traj {} step {}",
                rec.traj, rec.t
            )));
        }
        pending = rec.action;
    }
    Ok(out)
}
