//! Safety specifications over state vectors.
//!
//! A specification is a boolean combination (`&`, `|`) of comparisons between
//! terms built from state variables `x0..x{n-1}`, constants, `+ - *` and
//! `abs(..)`. Besides the usual boolean reading, every specification has a
//! quantitative *safety reward* whose sign agrees with satisfaction: the
//! specification holds on a state iff its reward there is strictly positive.

mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::envsim::Trajectory;
use crate::error::{Error, Result};

pub use parse::parse_spec;

/// Reward assigned to a satisfied equality when no other value is configured.
pub const DEFAULT_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Var(usize),
    Const(f64),
    Neg(Box<Term>),
    Abs(Box<Term>),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Le,
    Lt,
    Ge,
    Gt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    Pred { op: CmpOp, lhs: Term, rhs: Term },
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    root: Formula,
    delta: f64,
    /// One past the largest variable index referenced.
    arity: usize,
}

impl Term {
    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            Term::Var(i) => s[*i],
            Term::Const(c) => *c,
            Term::Neg(t) => -t.eval(s),
            Term::Abs(t) => t.eval(s).abs(),
            Term::Add(a, b) => a.eval(s) + b.eval(s),
            Term::Sub(a, b) => a.eval(s) - b.eval(s),
            Term::Mul(a, b) => a.eval(s) * b.eval(s),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Term::Var(i) => Some(*i),
            Term::Const(_) => None,
            Term::Neg(t) | Term::Abs(t) => t.max_var(),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Term::Add(..) | Term::Sub(..) => 1,
            Term::Mul(..) => 2,
            Term::Neg(_) => 3,
            Term::Var(_) | Term::Const(_) | Term::Abs(_) => 4,
        }
    }
}

impl Formula {
    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn pred(op: CmpOp, lhs: Term, rhs: Term) -> Formula {
        Formula::Pred { op, lhs, rhs }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Formula::Pred { lhs, rhs, .. } => lhs.max_var().max(rhs.max_var()),
            Formula::And(a, b) | Formula::Or(a, b) => a.max_var().max(b.max_var()),
        }
    }

    fn holds(&self, s: &[f64]) -> bool {
        match self {
            Formula::Pred { op, lhs, rhs } => {
                let (l, r) = (lhs.eval(s), rhs.eval(s));
                match op {
                    CmpOp::Eq => l == r,
                    CmpOp::Ne => l != r,
                    CmpOp::Le => l <= r,
                    CmpOp::Lt => l < r,
                    CmpOp::Ge => l >= r,
                    CmpOp::Gt => l > r,
                }
            }
            Formula::And(a, b) => a.holds(s) && b.holds(s),
            Formula::Or(a, b) => a.holds(s) || b.holds(s),
        }
    }

    fn reward(&self, s: &[f64], delta: f64) -> f64 {
        match self {
            Formula::Pred { op, lhs, rhs } => {
                let (l, r) = (lhs.eval(s), rhs.eval(s));
                let eq = if l == r { delta } else { 0.0 };
                match op {
                    CmpOp::Lt => r - l,
                    CmpOp::Gt => l - r,
                    CmpOp::Eq => eq,
                    // t != t'  ==  t < t' | t > t'
                    CmpOp::Ne => (r - l).max(l - r),
                    // t <= t'  ==  t < t' | t = t'
                    CmpOp::Le => (r - l).max(eq),
                    CmpOp::Ge => (l - r).max(eq),
                }
            }
            Formula::And(a, b) => a.reward(s, delta).min(b.reward(s, delta)),
            Formula::Or(a, b) => a.reward(s, delta).max(b.reward(s, delta)),
        }
    }
}

impl SafetySpec {
    pub fn new(root: Formula) -> Self {
        Self::with_delta(root, DEFAULT_DELTA).expect("default delta is positive")
    }

    pub fn with_delta(root: Formula, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "equality reward delta must be positive, got {delta}"
            )));
        }
        let arity = root.max_var().map_or(0, |m| m + 1);
        Ok(Self { root, delta, arity })
    }

    pub fn root(&self) -> &Formula {
        &self.root
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn set_delta(self, delta: f64) -> Result<Self> {
        Self::with_delta(self.root, delta)
    }

    /// Smallest state dimension this specification can be evaluated on.
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Check that every referenced variable exists in a `state_dim` state.
    pub fn bind(&self, state_dim: usize) -> Result<()> {
        if self.arity > state_dim {
            return Err(Error::UnknownVariable(format!("x{}", self.arity - 1)));
        }
        Ok(())
    }

    fn check_dim(&self, s: &[f64]) -> Result<()> {
        if s.len() < self.arity {
            return Err(Error::DimensionMismatch {
                expected: self.arity,
                actual: s.len(),
            });
        }
        Ok(())
    }

    pub fn holds(&self, s: &[f64]) -> Result<bool> {
        self.check_dim(s)?;
        Ok(self.root.holds(s))
    }

    /// Quantitative safety reward of a single state.
    pub fn reward(&self, s: &[f64]) -> Result<f64> {
        self.check_dim(s)?;
        Ok(self.root.reward(s, self.delta))
    }

    /// Safety reward of a trajectory: the minimum reward over its states.
    pub fn trajectory_reward(&self, traj: &Trajectory) -> Result<f64> {
        self.states_reward(&traj.states)
    }

    pub fn states_reward(&self, states: &[Vec<f64>]) -> Result<f64> {
        if states.is_empty() {
            return Err(Error::EmptyInput("trajectory has no states"));
        }
        states
            .iter()
            .try_fold(f64::INFINITY, |acc, s| Ok(acc.min(self.reward(s)?)))
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        })
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, t: &Term, min_prec: u8) -> fmt::Result {
    if t.precedence() < min_prec {
        write!(f, "({t})")
    } else {
        write!(f, "{t}")
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(i) => write!(f, "x{i}"),
            Term::Const(c) => write!(f, "{c:?}"),
            // `-<literal>` reparses as a negative constant, so keep the negation explicit
            Term::Neg(t) if matches!(**t, Term::Const(_)) => write!(f, "-({t})"),
            Term::Neg(t) => {
                f.write_str("-")?;
                write_child(f, t, 4)
            }
            Term::Abs(t) => write!(f, "abs({t})"),
            Term::Add(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(" + ")?;
                write_child(f, b, 2)
            }
            Term::Sub(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(" - ")?;
                write_child(f, b, 2)
            }
            Term::Mul(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(" * ")?;
                write_child(f, b, 3)
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Pred { op, lhs, rhs } => write!(f, "{lhs} {op} {rhs}"),
            Formula::And(a, b) => {
                let wrap = |f: &mut fmt::Formatter<'_>, x: &Formula| match x {
                    Formula::Or(..) => write!(f, "({x})"),
                    _ => write!(f, "{x}"),
                };
                wrap(f, a)?;
                f.write_str(" & ")?;
                // & associates to the left, so a right-nested conjunction needs parentheses
                match **b {
                    Formula::Pred { .. } => write!(f, "{b}"),
                    _ => write!(f, "({b})"),
                }
            }
            Formula::Or(a, b) => {
                write!(f, "{a} | ")?;
                match **b {
                    Formula::Or(..) => write!(f, "({b})"),
                    _ => write!(f, "{b}"),
                }
            }
        }
    }
}

impl fmt::Display for SafetySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

/// Conjunction of strict interval constraints `lo_i < x_i < hi_i`.
///
/// Infinite bounds are skipped; a box with no finite bound is rejected.
pub fn box_spec(lower: &[f64], upper: &[f64]) -> Result<SafetySpec> {
    if lower.len() != upper.len() {
        return Err(Error::DimensionMismatch {
            expected: lower.len(),
            actual: upper.len(),
        });
    }
    let mut root: Option<Formula> = None;
    let mut push = |p: Formula| {
        root = Some(match root.take() {
            None => p,
            Some(r) => Formula::and(r, p),
        });
    };
    for (i, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        if lo.is_finite() {
            push(Formula::pred(CmpOp::Lt, Term::Const(lo), Term::Var(i)));
        }
        if hi.is_finite() {
            push(Formula::pred(CmpOp::Lt, Term::Var(i), Term::Const(hi)));
        }
    }
    root.map(SafetySpec::new)
        .ok_or(Error::EmptyInput("box has no finite bound"))
}
