use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BoxBounds, Dynamics, EnvModel};
use crate::error::{Error, Result};
use crate::specdsl::{parse_spec, SafetySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Pendulum,
    CarPlatoon4,
    CarPlatoon8,
    Helicopter,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Pendulum,
        Benchmark::CarPlatoon4,
        Benchmark::CarPlatoon8,
        Benchmark::Helicopter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Pendulum => "pendulum",
            Benchmark::CarPlatoon4 => "carplatoon4",
            Benchmark::CarPlatoon8 => "carplatoon8",
            Benchmark::Helicopter => "helicopter",
        }
    }

    fn sources(self) -> (&'static str, &'static str) {
        match self {
            Benchmark::Pendulum => (
                include_str!("../../../../benchmarks/pendulum.toml"),
                include_str!("../../../../benchmarks/pendulum.spec"),
            ),
            Benchmark::CarPlatoon4 => (
                include_str!("../../../../benchmarks/carplatoon4.toml"),
                include_str!("../../../../benchmarks/carplatoon4.spec"),
            ),
            Benchmark::CarPlatoon8 => (
                include_str!("../../../../benchmarks/carplatoon8.toml"),
                include_str!("../../../../benchmarks/carplatoon8.spec"),
            ),
            Benchmark::Helicopter => (
                include_str!("../../../../benchmarks/helicopter.toml"),
                include_str!("../../../../benchmarks/helicopter.spec"),
            ),
        }
    }

    /// The bundled definition of this benchmark.
    pub fn file(self) -> BenchmarkFile {
        toml::from_str(self.sources().0).expect("bundled benchmark file is valid")
    }

    /// The bundled safety specification of this benchmark.
    pub fn spec(self) -> SafetySpec {
        parse_spec(self.sources().1).expect("bundled spec is valid")
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown benchmark `{s}` (expected one of pendulum, carplatoon4, carplatoon8, helicopter)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DynamicsSpec {
    Pendulum {
        gravity: f64,
        length: f64,
        mass: f64,
        dt: f64,
    },
    /// Row-major `A` (state_dim rows) and `B` (state_dim rows, action_dim columns).
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

/// Diagonal LQR weights for the default linear-feedback victim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
}

/// On-disk benchmark description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub action_bound: Vec<f64>,
    pub dynamics: DynamicsSpec,
    pub init_box: BoxBounds,
    #[serde(default)]
    pub safety_box: Option<BoxBounds>,
    #[serde(default)]
    pub lqr_victim: Option<LqrWeights>,
    /// Actuator limit of the victim controller. Defaults to `action_bound`;
    /// a smaller value leaves the shield's recovery policy more authority.
    #[serde(default)]
    pub victim_action_bound: Option<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("matrix `{what}` must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl BenchmarkFile {
    pub fn victim_bound(&self) -> &[f64] {
        self.victim_action_bound.as_deref().unwrap_or(&self.action_bound)
    }

    pub fn to_env(&self) -> Result<EnvModel> {
        let dynamics = match &self.dynamics {
            DynamicsSpec::Pendulum {
                gravity,
                length,
                mass,
                dt,
            } => Dynamics::Pendulum {
                gravity: *gravity,
                length: *length,
                mass: *mass,
                dt: *dt,
            },
            DynamicsSpec::Linear { a, b } => Dynamics::Linear {
                a: matrix(a, self.state_dim, self.state_dim, "a")?,
                b: matrix(b, self.state_dim, self.action_dim, "b")?,
            },
        };
        let init = BoxBounds::new(self.init_box.lower.clone(), self.init_box.upper.clone())?;
        let mut env = EnvModel::new(
            self.name.clone(),
            self.state_dim,
            self.action_dim,
            self.horizon,
            dynamics,
            init,
        )?
        .with_action_bound(self.action_bound.clone())?;
        if let Some(s) = &self.safety_box {
            env = env.with_safety_box(BoxBounds::new(s.lower.clone(), s.upper.clone())?)?;
        }
        if let Some(v) = &self.victim_action_bound {
            if v.len() != self.action_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.action_dim,
                    actual: v.len(),
                });
            }
            if v.iter().zip(&self.action_bound).any(|(v, a)| !(*v > 0.0 && v <= a)) {
                return Err(Error::Config(
                    "victim_action_bound must be positive and within action_bound".into(),
                ));
            }
        }
        Ok(env)
    }
}

/// Build one of the bundled classic-control benchmarks.
pub fn make_benchmark(bench: Benchmark) -> EnvModel {
    bench.file().to_env().expect("bundled benchmark is well-formed")
}

/// Load a benchmark definition (and its `.spec` sibling, if present) from disk.
pub fn load_benchmark(path: &Path) -> Result<(BenchmarkFile, Option<SafetySpec>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file: BenchmarkFile = toml::from_str(&std::fs::read_to_string(path)?)?;
    file.to_env()?;
    let spec_path = path.with_extension("spec");
    let spec = if spec_path.exists() {
        let spec = parse_spec(&std::fs::read_to_string(&spec_path)?)?;
        spec.bind(file.state_dim)?;
        Some(spec)
    } else {
        None
    };
    Ok((file, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_horizons() {
        let expect = [
            (Benchmark::Pendulum, 2, 200),
            (Benchmark::CarPlatoon4, 7, 1000),
            (Benchmark::CarPlatoon8, 15, 2000),
            (Benchmark::Helicopter, 28, 2000),
        ];
        for (b, dim, horizon) in expect {
            let env = make_benchmark(b);
            assert_eq!(env.state_dim, dim, "{b}");
            assert_eq!(env.horizon, horizon, "{b}");
            b.spec().bind(dim).unwrap();
        }
    }

    #[test]
    fn init_boxes() {
        let p = make_benchmark(Benchmark::Pendulum);
        assert_eq!(p.init_box, BoxBounds::symmetric(&[0.3, 0.3]));
        let c4 = make_benchmark(Benchmark::CarPlatoon4);
        assert_eq!(c4.init_box, BoxBounds::symmetric(&[0.1; 7]));
        let c8 = make_benchmark(Benchmark::CarPlatoon8);
        assert_eq!(c8.init_box, BoxBounds::symmetric(&[0.1; 15]));
        let h = make_benchmark(Benchmark::Helicopter);
        let mut hw = vec![0.002; 8];
        hw.extend([0.0023; 20]);
        assert_eq!(h.init_box, BoxBounds::symmetric(&hw));
    }

    #[test]
    fn specs_match_safety_boxes() {
        for b in Benchmark::ALL {
            let env = make_benchmark(b);
            let sb = env.safety_box.clone().unwrap();
            let from_box = crate::specdsl::box_spec(&sb.lower, &sb.upper).unwrap();
            assert_eq!(b.spec(), from_box, "{b}");
        }
        let pend = Benchmark::Pendulum.spec();
        assert!(pend.holds(&[0.49, -0.49]).unwrap());
        let c4 = Benchmark::CarPlatoon4.spec();
        assert!(c4.holds(&[1.9, 0.4, 0.3, -0.4, 0.9, 0.4, -0.9]).unwrap());
        assert!(!c4.holds(&[0.0, 0.0, 0.36, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let h = Benchmark::Helicopter.spec();
        let mut s = vec![0.0; 28];
        s[13] = 9.5;
        assert!(h.holds(&s).unwrap());
        s[14] = 9.5;
        assert!(!h.holds(&s).unwrap());
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!("cartpole".parse::<Benchmark>(), Err(Error::Config(_))));
        assert_eq!("carplatoon8".parse::<Benchmark>().unwrap(), Benchmark::CarPlatoon8);
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (toml_src, spec_src) = Benchmark::Pendulum.sources();
        let path = dir.path().join("pend.toml");
        std::fs::write(&path, toml_src).unwrap();
        std::fs::write(dir.path().join("pend.spec"), spec_src).unwrap();
        let (file, spec) = load_benchmark(&path).unwrap();
        assert_eq!(file, Benchmark::Pendulum.file());
        assert_eq!(spec.unwrap(), Benchmark::Pendulum.spec());
        assert!(matches!(
            load_benchmark(&dir.path().join("nope.toml")),
            Err(Error::MissingFile(_))
        ));
    }
}
