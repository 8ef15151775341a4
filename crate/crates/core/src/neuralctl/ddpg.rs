use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Activation, Adam, DenseNet, NeuralPolicy};
use crate::envsim::EnvModel;
use crate::error::{Error, Result};
use crate::seed;
use crate::specdsl::SafetySpec;

/// Result of one environment transition during training.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: Vec<f64>,
    pub reward: f64,
    /// The episode ended in an absorbing state (no bootstrapping).
    pub terminal: bool,
    /// The episode was cut off by a step limit (bootstrapping still applies).
    pub truncated: bool,
}

/// Episodic environment interface used by the trainer.
pub trait TrainEnv {
    fn state_dim(&self) -> usize;

    /// Symmetric actuator limits; the actor's tanh head is scaled by these.
    fn action_bound(&self) -> &[f64];

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
}

/// Plain episodic wrapper around an [`EnvModel`]: episodes start in the
/// initial box, reward is the performance reward, and (if a spec is given) a
/// violation ends the episode with an extra penalty.
#[derive(Debug, Clone)]
pub struct EnvTask {
    env: EnvModel,
    spec: Option<SafetySpec>,
    violation_penalty: f64,
    max_steps: usize,
    action_scale: Vec<f64>,
    state: Vec<f64>,
    t: usize,
}

impl EnvTask {
    pub fn new(env: EnvModel) -> Self {
        let max_steps = env.horizon;
        let state = vec![0.0; env.state_dim];
        let action_scale = env.action_bound.clone();
        Self {
            env,
            spec: None,
            violation_penalty: 0.0,
            max_steps,
            action_scale,
            state,
            t: 0,
        }
    }

    pub fn with_safety(mut self, spec: SafetySpec, penalty: f64) -> Self {
        self.spec = Some(spec);
        self.violation_penalty = penalty;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Output range of the trained actor, when it should be narrower than
    /// the actuator limits.
    pub fn with_action_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.env.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.env.action_dim,
                actual: scale.len(),
            });
        }
        if scale.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::Config("action scale must be positive and finite".into()));
        }
        self.action_scale = scale;
        Ok(self)
    }
}

impl TrainEnv for EnvTask {
    fn state_dim(&self) -> usize {
        self.env.state_dim
    }

    fn action_bound(&self) -> &[f64] {
        &self.action_scale
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state = self.env.init_box.sample(rng);
        self.t = 0;
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let u = self.env.clip_action(action);
        let next = self.env.step(&self.state, &u);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericOverflow { step: self.t + 1 });
        }
        let mut reward = self.env.perf_reward(&self.state, &u);
        let mut terminal = false;
        if let Some(spec) = &self.spec {
            if !spec.holds(&next)? {
                reward -= self.violation_penalty;
                terminal = true;
            }
        }
        self.t += 1;
        self.state = next.clone();
        Ok(StepOutcome {
            next,
            reward,
            terminal,
            truncated: self.t >= self.max_steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Gaussian noise on the normalized action in `[-1, 1]`.
    pub exploration_noise_std: f64,
    /// Initial steps with uniformly random actions and no updates.
    pub warmup_steps: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 1e-3,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            replay_capacity: 50_000,
            batch_size: 64,
            total_steps: 50_000,
            exploration_noise_std: 0.2,
            warmup_steps: 1_000,
            hidden: vec![64, 64],
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trainer: {m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.exploration_noise_std >= 0.0 && self.exploration_noise_std.is_finite()) {
            return bad("exploration noise must be non-negative");
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.total_steps == 0 {
            return bad("replay capacity, batch size and total steps must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

struct Transition {
    s: Vec<f64>,
    a: Vec<f64>,
    r: f64,
    s2: Vec<f64>,
    terminal: bool,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Train a deterministic actor with DDPG (actor-critic, target networks,
/// uniform replay, Gaussian exploration).
pub fn train_ddpg(env: &mut dyn TrainEnv, cfg: &TrainerConfig, seed: u64, name: &str) -> Result<NeuralPolicy> {
    cfg.validate()?;
    let scale = env.action_bound().to_vec();
    if scale.iter().any(|b| !b.is_finite()) {
        return Err(Error::Config("DDPG needs finite action bounds".into()));
    }
    let sd = env.state_dim();
    let ad = scale.len();
    let mut rng = seed::child_rng(seed, "ddpg", 0);

    let mut actor_sizes = vec![sd];
    actor_sizes.extend(&cfg.hidden);
    actor_sizes.push(ad);
    let mut critic_sizes = vec![sd + ad];
    critic_sizes.extend(&cfg.hidden);
    critic_sizes.push(1);
    let mut hidden_acts = vec![Activation::Relu; cfg.hidden.len()];
    let actor_acts = {
        let mut v = hidden_acts.clone();
        v.push(Activation::Tanh);
        v
    };
    hidden_acts.push(Activation::Identity);
    let critic_acts = hidden_acts;

    let mut actor = DenseNet::random(&actor_sizes, &actor_acts, 3e-3, &mut rng)?;
    let mut critic = DenseNet::random(&critic_sizes, &critic_acts, 3e-3, &mut rng)?;
    let mut actor_t = actor.clone();
    let mut critic_t = critic.clone();
    let mut actor_opt = Adam::new(actor.num_params(), cfg.actor_lr);
    let mut critic_opt = Adam::new(critic.num_params(), cfg.critic_lr);
    let noise = Normal::new(0.0, cfg.exploration_noise_std.max(1e-300)).expect("valid std");

    let mut replay: Vec<Transition> = Vec::with_capacity(cfg.replay_capacity.min(1 << 20));
    let mut cursor = 0;
    let mut s = env.reset(&mut rng);
    let mut actor_grad = vec![0.0; actor.num_params()];
    let mut critic_grad = vec![0.0; critic.num_params()];
    let mut scratch = vec![0.0; critic.num_params()];
    let mut episode_return = 0.0;
    let mut episodes = 0usize;

    for step in 0..cfg.total_steps {
        let a_norm: Vec<f64> = if step < cfg.warmup_steps {
            (0..ad).map(|_| rng.gen_range(-1.0..=1.0)).collect()
        } else {
            actor
                .forward(&s)?
                .into_iter()
                .map(|a| {
                    let n = if cfg.exploration_noise_std > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    (a + n).clamp(-1.0, 1.0)
                })
                .collect()
        };
        let u: Vec<f64> = a_norm.iter().zip(&scale).map(|(a, k)| a * k).collect();
        let out = env.step(&u)?;
        episode_return += out.reward;
        let tr = Transition {
            s: std::mem::take(&mut s),
            a: a_norm,
            r: out.reward,
            s2: out.next.clone(),
            terminal: out.terminal,
        };
        if replay.len() < cfg.replay_capacity {
            replay.push(tr);
        } else {
            replay[cursor] = tr;
        }
        cursor = (cursor + 1) % cfg.replay_capacity;
        if out.terminal || out.truncated {
            episodes += 1;
            log::debug!("{name}: episode {episodes} return {episode_return:.3} at step {step}");
            episode_return = 0.0;
            s = env.reset(&mut rng);
        } else {
            s = out.next;
        }

        if step < cfg.warmup_steps || replay.len() < cfg.batch_size {
            continue;
        }
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..replay.len())).collect();
        let inv_b = 1.0 / cfg.batch_size as f64;

        critic_grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for &i in &batch {
            let t = &replay[i];
            let y = if t.terminal {
                t.r
            } else {
                let a2 = actor_t.forward(&t.s2)?;
                t.r + cfg.gamma * critic_t.forward(&concat(&t.s2, &a2))?[0]
            };
            let cache = critic.forward_cached(&concat(&t.s, &t.a))?;
            let err = cache.output()[0] - y;
            loss += err * err * inv_b;
            critic.backward_into(&cache, &[2.0 * err * inv_b], &mut critic_grad)?;
        }
        if !loss.is_finite() || critic_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: format!("critic loss {loss} after {episodes} episodes"),
            });
        }
        critic_opt.step(critic.params_mut(), &critic_grad);

        actor_grad.iter_mut().for_each(|g| *g = 0.0);
        for &i in &batch {
            let t = &replay[i];
            let a_cache = actor.forward_cached(&t.s)?;
            let q_cache = critic.forward_cached(&concat(&t.s, a_cache.output()))?;
            let dq = critic.backward_into(&q_cache, &[1.0], &mut scratch)?;
            // ascend Q: descend -dQ/da
            let up: Vec<f64> = dq[sd..].iter().map(|g| -g * inv_b).collect();
            actor.backward_into(&a_cache, &up, &mut actor_grad)?;
        }
        if actor_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite actor gradient".into(),
            });
        }
        actor_opt.step(actor.params_mut(), &actor_grad);
        actor_t.soft_update(&actor, cfg.tau);
        critic_t.soft_update(&critic, cfg.tau);
    }
    log::info!("{name}: trained for {} steps, {episodes} episodes", cfg.total_steps);
    NeuralPolicy::new(name, actor, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            gamma: 1.0,
            ..TrainerConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainerConfig {
            tau: 0.0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            batch_size: 0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
