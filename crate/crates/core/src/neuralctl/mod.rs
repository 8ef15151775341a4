//! Policies, small dense networks, the DDPG trainer and the LQR victim.

mod adam;
mod ddpg;
mod lqr;
mod net;

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::Adam;
pub use ddpg::{train_ddpg, EnvTask, StepOutcome, TrainEnv, TrainerConfig};
pub use lqr::{lqr_gain, make_lqr_policy};
pub use net::{Activation, DenseNet, ForwardCache};

/// A deterministic state-to-action map whose internals callers never inspect.
pub trait Policy: Send + Sync {
    fn act(&self, s: &[f64]) -> Vec<f64>;

    fn action_dim(&self) -> usize;

    fn name(&self) -> &str;

    /// Expected state dimension, when the policy knows it.
    fn state_dim(&self) -> Option<usize> {
        None
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        (**self).act(s)
    }

    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }

    fn name(&self) -> &str {
        (**self).name()
    }

    fn state_dim(&self) -> Option<usize> {
        (**self).state_dim()
    }
}

type ActFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Policy backed by a closure.
#[derive(Clone)]
pub struct FnPolicy {
    name: String,
    action_dim: usize,
    f: Arc<ActFn>,
}

impl FnPolicy {
    pub fn new(
        name: impl Into<String>,
        action_dim: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            action_dim,
            f: Arc::new(f),
        }
    }
}

impl std::fmt::Debug for FnPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnPolicy").field("name", &self.name).finish()
    }
}

impl Policy for FnPolicy {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        (self.f)(s)
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Actor network with a tanh head scaled to the actuator bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralPolicy {
    pub name: String,
    pub net: DenseNet,
    pub action_scale: Vec<f64>,
}

impl NeuralPolicy {
    pub fn new(name: impl Into<String>, net: DenseNet, action_scale: Vec<f64>) -> Result<Self> {
        if action_scale.len() != net.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.output_dim(),
                actual: action_scale.len(),
            });
        }
        if net.activations().last() != Some(&Activation::Tanh) {
            return Err(Error::InvalidArgument("actor network needs a tanh output head".into()));
        }
        Ok(Self {
            name: name.into(),
            net,
            action_scale,
        })
    }
}

impl Policy for NeuralPolicy {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        match self.net.forward(s) {
            Ok(out) => out.iter().zip(&self.action_scale).map(|(a, k)| a * k).collect(),
            Err(_) => vec![f64::NAN; self.action_scale.len()],
        }
    }

    fn action_dim(&self) -> usize {
        self.action_scale.len()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> Option<usize> {
        Some(self.net.input_dim())
    }
}

/// Linear state feedback `u = -K s`, saturated at `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub name: String,
    pub gain: DMatrix<f64>,
    pub bound: Vec<f64>,
}

impl LinearPolicy {
    pub fn new(name: impl Into<String>, gain: DMatrix<f64>, bound: Vec<f64>) -> Result<Self> {
        if bound.len() != gain.nrows() {
            return Err(Error::DimensionMismatch {
                expected: gain.nrows(),
                actual: bound.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            gain,
            bound,
        })
    }

    /// Replace the actuator clamp, e.g. to model a victim weaker than the plant allows.
    pub fn with_bound(mut self, bound: Vec<f64>) -> Result<Self> {
        if bound.len() != self.gain.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.gain.nrows(),
                actual: bound.len(),
            });
        }
        self.bound = bound;
        Ok(self)
    }

    pub fn bound(&self) -> &[f64] {
        &self.bound
    }
}

impl Policy for LinearPolicy {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        if s.len() != self.gain.ncols() {
            return vec![f64::NAN; self.gain.nrows()];
        }
        (0..self.gain.nrows())
            .map(|i| {
                let u: f64 = -(0..s.len()).map(|j| self.gain[(i, j)] * s[j]).sum::<f64>();
                u.clamp(-self.bound[i], self.bound[i])
            })
            .collect()
    }

    fn action_dim(&self) -> usize {
        self.gain.nrows()
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> Option<usize> {
        Some(self.gain.ncols())
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A policy that can be written to and read from a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredPolicy {
    Neural(NeuralPolicy),
    Linear(LinearPolicy),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum CheckpointBody {
    Neural {
        name: String,
        sizes: Vec<usize>,
        activations: Vec<Activation>,
        action_scale: Vec<f64>,
        params: Vec<f64>,
    },
    Linear {
        name: String,
        gain: Vec<Vec<f64>>,
        bound: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    policy: CheckpointBody,
}

impl StoredPolicy {
    pub fn to_json(&self) -> Result<String> {
        let policy = match self {
            StoredPolicy::Neural(p) => CheckpointBody::Neural {
                name: p.name.clone(),
                sizes: p.net.sizes().to_vec(),
                activations: p.net.activations().to_vec(),
                action_scale: p.action_scale.clone(),
                params: p.net.params().to_vec(),
            },
            StoredPolicy::Linear(p) => CheckpointBody::Linear {
                name: p.name.clone(),
                gain: (0..p.gain.nrows())
                    .map(|i| p.gain.row(i).iter().copied().collect())
                    .collect(),
                bound: p.bound.clone(),
            },
        };
        Ok(serde_json::to_string_pretty(&Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            policy,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format version {}",
                ck.format_version
            )));
        }
        match ck.policy {
            CheckpointBody::Neural {
                name,
                sizes,
                activations,
                action_scale,
                params,
            } => {
                let net = DenseNet::from_params(&sizes, &activations, params)?;
                Ok(StoredPolicy::Neural(NeuralPolicy::new(name, net, action_scale)?))
            }
            CheckpointBody::Linear { name, gain, bound } => {
                let rows = gain.len();
                let cols = gain.first().map_or(0, Vec::len);
                if rows == 0 || cols == 0 || gain.iter().any(|r| r.len() != cols) {
                    return Err(Error::Config("malformed gain matrix in checkpoint".into()));
                }
                let k = DMatrix::from_fn(rows, cols, |i, j| gain[i][j]);
                Ok(StoredPolicy::Linear(LinearPolicy::new(name, k, bound)?))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn inner(&self) -> &dyn Policy {
        match self {
            StoredPolicy::Neural(p) => p,
            StoredPolicy::Linear(p) => p,
        }
    }
}

impl Policy for StoredPolicy {
    fn act(&self, s: &[f64]) -> Vec<f64> {
        self.inner().act(s)
    }

    fn action_dim(&self) -> usize {
        self.inner().action_dim()
    }

    fn name(&self) -> &str {
        self.inner().name()
    }

    fn state_dim(&self) -> Option<usize> {
        self.inner().state_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = seed::rng(3);
        let net = DenseNet::random(&[2, 8, 1], &[Activation::Relu, Activation::Tanh], 0.1, &mut rng).unwrap();
        let p = StoredPolicy::Neural(NeuralPolicy::new("actor", net, vec![2.0]).unwrap());
        let back = StoredPolicy::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.act(&[0.3, -0.1]), p.act(&[0.3, -0.1]));

        let k = DMatrix::from_row_slice(1, 2, &[1.5, 0.25]);
        let lin = StoredPolicy::Linear(LinearPolicy::new("lqr", k, vec![3.0]).unwrap());
        assert_eq!(StoredPolicy::from_json(&lin.to_json().unwrap()).unwrap(), lin);
    }

    #[test]
    fn checkpoint_version_checked() {
        let k = DMatrix::from_row_slice(1, 1, &[1.0]);
        let text = StoredPolicy::Linear(LinearPolicy::new("k", k, vec![1.0]).unwrap())
            .to_json()
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(StoredPolicy::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn linear_policy_saturates() {
        let k = DMatrix::from_row_slice(1, 2, &[10.0, 0.0]);
        let p = LinearPolicy::new("k", k, vec![2.0]).unwrap();
        assert_eq!(p.act(&[1.0, 0.0]), vec![-2.0]);
        assert_eq!(p.act(&[-0.1, 5.0]), vec![1.0]);
    }

    #[test]
    fn neural_policy_is_bounded_and_deterministic() {
        let mut rng = seed::rng(4);
        let net = DenseNet::random(&[2, 16, 1], &[Activation::Relu, Activation::Tanh], 3.0, &mut rng).unwrap();
        let p = NeuralPolicy::new("a", net, vec![5.0]).unwrap();
        for s in [[10.0, -10.0], [0.0, 0.0], [-3.0, 1.0]] {
            let a = p.act(&s);
            assert!(a[0].abs() <= 5.0);
            assert_eq!(a, p.act(&s));
        }
    }
}
