use aegis::neuralctl::{train_ddpg, Policy, StepOutcome, TrainEnv, TrainerConfig};
use aegis::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.1;
const STEPS: usize = 50;

/// `s' = s + 0.1 u`, `|u| <= 1`, reward `-s^2`, 50-step episodes from `U(-1, 1)`.
struct Integrator {
    s: f64,
    t: usize,
    bound: [f64; 1],
}

impl TrainEnv for Integrator {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> &[f64] {
        &self.bound
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.s = rng.gen_range(-1.0..1.0);
        self.t = 0;
        vec![self.s]
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.s += DT * action[0].clamp(-1.0, 1.0);
        self.t += 1;
        Ok(StepOutcome {
            next: vec![self.s],
            reward: -self.s * self.s,
            terminal: false,
            truncated: self.t >= STEPS,
        })
    }
}

#[test]
fn ddpg_drives_an_integrator_to_the_origin() {
    let mut env = Integrator {
        s: 0.0,
        t: 0,
        bound: [1.0],
    };
    let cfg = TrainerConfig {
        total_steps: 50_000,
        ..TrainerConfig::default()
    };
    let policy = train_ddpg(&mut env, &cfg, 11, "integrator").unwrap();
    let mut rng = aegis::seed::rng(12);
    let mut total = 0.0;
    for _ in 0..100 {
        let mut s: f64 = rng.gen_range(-1.0..1.0);
        for _ in 0..STEPS {
            s += DT * policy.act(&[s])[0].clamp(-1.0, 1.0);
        }
        total += s.abs();
    }
    let mean = total / 100.0;
    assert!(mean < 0.1, "mean |s_T| = {mean}");
    assert_eq!(policy.act(&[0.3]), policy.act(&[0.3]));
}
