use nalgebra::DMatrix;

use super::LinearPolicy;
use crate::envsim::EnvModel;
use crate::error::{Error, Result};

const MAX_ITERS: usize = 10_000;
const TOL: f64 = 1e-9;

/// Infinite-horizon discrete LQR gain by fixed-point Riccati iteration.
///
/// Iterates `P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA` from `P = Q` until the
/// largest entry change is below `1e-9` relative to `max(1, |P|_max)`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::InvalidArgument("inconsistent LQR matrix shapes".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for _ in 0..MAX_ITERS {
        let btp = &bt * &p;
        let s = r + &btp * b;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numeric("R + B'PB is singular".into()))?;
        let atp = &at * &p;
        let next = q + &atp * a - &atp * b * &s_inv * &btp * a;
        let next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiNonConvergence(MAX_ITERS));
        }
        let scale = next.amax().max(1.0);
        let diff = (&next - &p).amax();
        p = next;
        if diff <= TOL * scale {
            let k = s_inv * btp * a;
            return Ok(k);
        }
    }
    Err(Error::RiccatiNonConvergence(MAX_ITERS))
}

/// LQR victim for a linear benchmark with diagonal state and input weights.
pub fn make_lqr_policy(env: &EnvModel, q_diag: &[f64], r_diag: &[f64]) -> Result<LinearPolicy> {
    let (a, b) = env
        .linear_parts()
        .ok_or_else(|| Error::Config(format!("{}: LQR needs linear dynamics", env.name)))?;
    if q_diag.len() != env.state_dim {
        return Err(Error::DimensionMismatch {
            expected: env.state_dim,
            actual: q_diag.len(),
        });
    }
    if r_diag.len() != env.action_dim {
        return Err(Error::DimensionMismatch {
            expected: env.action_dim,
            actual: r_diag.len(),
        });
    }
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(q_diag));
    let r = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(r_diag));
    let k = lqr_gain(a, b, &q, &r)?;
    LinearPolicy::new(format!("{}-lqr", env.name), k, env.action_bound.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_system_is_stabilized() {
        let k = lqr_gain(&scalar(0.5), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((0.5 - k[(0, 0)]).abs() < 1.0);
        // closed form: p = 1 + 0.25 p / (1 + p)  =>  p^2 - 0.25 p - 1 = 0
        let p = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
        assert!((k[(0, 0)] - 0.5 * p / (1.0 + p)).abs() < 1e-8);
    }

    #[test]
    fn unstabilizable_pair_errors() {
        let err = lqr_gain(&scalar(2.0), &scalar(0.0), &scalar(1.0), &scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::RiccatiNonConvergence(_)));
    }

    #[test]
    fn nonlinear_env_rejected() {
        let env = crate::envsim::make_benchmark(crate::envsim::Benchmark::Pendulum);
        assert!(matches!(
            make_lqr_policy(&env, &[1.0, 1.0], &[1.0]),
            Err(Error::Config(_))
        ));
    }
}
