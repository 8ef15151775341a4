//! Gaussian-process regression with a Matérn-5/2 kernel and Expected
//! Improvement minimization over a box.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seed;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn ν = 5/2 covariance at distance `r`.
pub fn matern52(r: f64, lengthscale: f64, signal_var: f64) -> f64 {
    let a = SQRT5 * r / lengthscale;
    signal_var * (1.0 + a + a * a / 3.0) * (-a).exp()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl GpHyper {
    /// Median pairwise distance as lengthscale, sample variance of `y` as
    /// signal variance (1.0 when the targets are constant), noise 1e-6.
    pub fn heuristic(x: &[Vec<f64>], y: &[f64]) -> Self {
        let mut d: Vec<f64> = Vec::new();
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                d.push(dist(&x[i], &x[j]));
            }
        }
        d.retain(|v| *v > 0.0);
        d.sort_by(f64::total_cmp);
        let lengthscale = if d.is_empty() {
            1.0
        } else if d.len() % 2 == 1 {
            d[d.len() / 2]
        } else {
            0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2])
        };
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let signal_var = if var > 1e-12 && var.is_finite() { var } else { 1.0 };
        Self {
            lengthscale,
            signal_var,
            noise_var: 1e-6,
        }
    }
}

/// Fitted GP posterior with constant prior mean `mean(y)`.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    hyper: GpHyper,
    prior_mean: f64,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Fit a GP; jitter is added to the diagonal until the Cholesky factorization succeeds.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<GaussianProcess> {
    if x.is_empty() {
        return Err(Error::EmptyInput("GP training set"));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("GP targets must be finite".into()));
    }
    if !(hyper.lengthscale > 0.0 && hyper.signal_var > 0.0 && hyper.noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad GP hyperparameters {hyper:?}")));
    }
    let n = x.len();
    let prior_mean = y.iter().sum::<f64>() / n as f64;
    let k = DMatrix::from_fn(n, n, |i, j| {
        matern52(dist(&x[i], &x[j]), hyper.lengthscale, hyper.signal_var)
    });
    let mut jitter = 0.0;
    loop {
        let mut kk = k.clone();
        for i in 0..n {
            kk[(i, i)] += hyper.noise_var + jitter;
        }
        if let Some(ch) = kk.cholesky() {
            let resid = DVector::from_iterator(n, y.iter().map(|v| v - prior_mean));
            let alpha = ch.solve(&resid);
            return Ok(GaussianProcess {
                x: x.to_vec(),
                hyper,
                prior_mean,
                chol: ch.l(),
                alpha,
                jitter,
            });
        }
        jitter = if jitter == 0.0 {
            1e-10 * hyper.signal_var
        } else {
            jitter * 10.0
        };
        if jitter > hyper.signal_var {
            return Err(Error::Numeric(
                "kernel matrix not positive definite after maximal jitter".into(),
            ));
        }
    }
}

impl GaussianProcess {
    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Diagonal jitter that was needed beyond the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Posterior mean and standard deviation of the latent function at `q`.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let ks: Vec<f64> = self
            .x
            .iter()
            .map(|xi| matern52(dist(xi, q), self.hyper.lengthscale, self.hyper.signal_var))
            .collect();
        let mean = self.prior_mean + ks.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum::<f64>();
        // v = L^-1 k*
        let mut v = vec![0.0; n];
        for i in 0..n {
            let mut acc = ks[i];
            for j in 0..i {
                acc -= self.chol[(i, j)] * v[j];
            }
            v[i] = acc / self.chol[(i, i)];
        }
        let var = self.hyper.signal_var - v.iter().map(|x| x * x).sum::<f64>();
        (mean, var.max(0.0).sqrt())
    }
}

pub fn gp_predict(gp: &GaussianProcess, x: &[f64]) -> (f64, f64) {
    gp.predict(x)
}

/// EI for minimization: expected amount by which a draw falls below `best - xi`.
pub fn expected_improvement_from(mean: f64, std: f64, best: f64, xi: f64) -> f64 {
    let imp = best - mean - xi;
    if !(std > 0.0) {
        return imp.max(0.0);
    }
    let z = imp / std;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (imp * n.cdf(z) + std * n.pdf(z)).max(0.0)
}

pub fn expected_improvement(gp: &GaussianProcess, x: &[f64], best: f64, xi: f64) -> f64 {
    let (m, s) = gp.predict(x);
    expected_improvement_from(m, s, best, xi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub xi: f64,
    pub n_init: usize,
    pub n_iter: usize,
    pub candidates_per_step: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            xi: 0.01,
            n_init: 10,
            n_iter: 30,
            candidates_per_step: 2048,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::Config("acquisition xi must be non-negative".into()));
        }
        if self.n_init == 0 || self.n_iter == 0 || self.candidates_per_step == 0 {
            return Err(Error::Config(
                "n_init, n_iter and candidates_per_step must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn budget(&self) -> usize {
        self.n_init + self.n_iter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub x: Vec<f64>,
    /// Objective value; non-finite results are stored as `+inf`.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best_x: Vec<f64>,
    pub best_y: f64,
    pub evals: Vec<Evaluation>,
}

/// Minimize `objective` over the box `[lower, upper]` with exactly
/// `n_init + n_iter` evaluations.
///
/// The GP lives in the unit cube; its lengthscale and signal variance are
/// fixed from the initial design. Each acquisition maximizes EI over fresh
/// uniform candidates.
pub fn bo_minimize(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    lower: &[f64],
    upper: &[f64],
    cfg: &AcquisitionConfig,
    seed: u64,
) -> Result<BoResult> {
    cfg.validate()?;
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(Error::InvalidArgument(
            "BO box must have matching non-empty bounds".into(),
        ));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
    {
        return Err(Error::InvalidArgument(
            "BO box bounds must be finite with lower <= upper".into(),
        ));
    }
    let d = lower.len();
    let mut rng = seed::child_rng(seed, "bo", 0);
    let to_box = |u: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| (lower[i] + u[i] * (upper[i] - lower[i])).clamp(lower[i], upper[i]))
            .collect()
    };
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(cfg.budget());
    let mut evals: Vec<Evaluation> = Vec::with_capacity(cfg.budget());
    let mut eval = |u: Vec<f64>, units: &mut Vec<Vec<f64>>, evals: &mut Vec<Evaluation>| {
        let x = to_box(&u);
        let y = objective(&x);
        let y = if y.is_finite() { y } else { f64::INFINITY };
        units.push(u);
        evals.push(Evaluation { x, y });
    };

    for _ in 0..cfg.n_init {
        let u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        eval(u, &mut units, &mut evals);
    }
    let finite = |units: &[Vec<f64>], evals: &[Evaluation]| -> (Vec<Vec<f64>>, Vec<f64>) {
        units
            .iter()
            .zip(evals)
            .filter(|(_, e)| e.y.is_finite())
            .map(|(u, e)| (u.clone(), e.y))
            .unzip()
    };
    let (ux, uy) = finite(&units, &evals);
    let hyper = GpHyper::heuristic(&ux, &uy);

    for _ in 0..cfg.n_iter {
        let (fx, fy) = finite(&units, &evals);
        let candidates: Vec<Vec<f64>> = (0..cfg.candidates_per_step)
            .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let pick = if fx.is_empty() {
            0
        } else {
            let gp = gp_fit(&fx, &fy, hyper)?;
            let best = fy.iter().copied().fold(f64::INFINITY, f64::min);
            let mut arg = 0;
            let mut top = f64::NEG_INFINITY;
            for (i, c) in candidates.iter().enumerate() {
                let ei = expected_improvement(&gp, c, best, cfg.xi);
                if ei > top {
                    top = ei;
                    arg = i;
                }
            }
            arg
        };
        let u = candidates.into_iter().nth(pick).expect("candidate exists");
        eval(u, &mut units, &mut evals);
    }

    let (best_x, best_y) = evals.iter().fold((evals[0].x.clone(), f64::INFINITY), |(bx, by), e| {
        if e.y < by {
            (e.x.clone(), e.y)
        } else {
            (bx, by)
        }
    });
    Ok(BoResult { best_x, best_y, evals })
}
