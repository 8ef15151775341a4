use aegis::envsim::Trajectory;
use aegis::specdsl::{parse_spec, CmpOp, Formula, SafetySpec, Term};
use proptest::prelude::*;

const DIM: usize = 3;

fn grid() -> impl Strategy<Value = f64> {
    (-4i32..=4).prop_map(|k| k as f64 * 0.5)
}

fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![(0..DIM).prop_map(Term::Var), grid().prop_map(Term::Const)];
    leaf.prop_recursive(2, 8, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|t| Term::Neg(Box::new(t))),
            inner.clone().prop_map(|t| Term::Abs(Box::new(t))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| Term::Mul(Box::new(a), Box::new(b))),
        ]
    })
}

fn op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![
        Just(CmpOp::Eq),
        Just(CmpOp::Ne),
        Just(CmpOp::Le),
        Just(CmpOp::Lt),
        Just(CmpOp::Ge),
        Just(CmpOp::Gt)
    ]
}

fn formula() -> impl Strategy<Value = Formula> {
    let pred = (op(), term(), term()).prop_map(|(o, l, r)| Formula::pred(o, l, r));
    pred.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::or(a, b)),
        ]
    })
}

fn state() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(grid(), DIM),
        prop::collection::vec(-3.0..3.0f64, DIM),
    ]
}

proptest! {
    #[test]
    fn holds_iff_reward_positive(f in formula(), s in state()) {
        let spec = SafetySpec::new(f);
        prop_assert_eq!(spec.holds(&s).unwrap(), spec.reward(&s).unwrap() > 0.0);
    }

    #[test]
    fn printed_spec_reparses_to_the_same_tree(f in formula()) {
        let spec = SafetySpec::new(f);
        let back = parse_spec(&spec.to_string()).unwrap();
        prop_assert_eq!(back.root(), spec.root());
    }

    #[test]
    fn trajectory_reward_is_min_and_lower_bound(f in formula(), states in prop::collection::vec(state(), 1..30)) {
        let spec = SafetySpec::new(f);
        let mut traj = Trajectory::new(states[0].clone());
        for s in &states[1..] {
            traj.push(vec![], s.clone());
        }
        let r = spec.trajectory_reward(&traj).unwrap();
        let per_state: Vec<f64> = states.iter().map(|s| spec.reward(s).unwrap()).collect();
        prop_assert!(per_state.iter().all(|v| r <= *v));
        prop_assert!(per_state.contains(&r));
        prop_assert_eq!(r > 0.0, states.iter().all(|s| spec.holds(s).unwrap()));
    }

    #[test]
    fn conjunction_and_disjunction_bounds(a in formula(), b in formula(), s in state()) {
        let (ra, rb) = (SafetySpec::new(a.clone()).reward(&s).unwrap(), SafetySpec::new(b.clone()).reward(&s).unwrap());
        prop_assert_eq!(SafetySpec::new(Formula::and(a.clone(), b.clone())).reward(&s).unwrap(), ra.min(rb));
        prop_assert_eq!(SafetySpec::new(Formula::or(a, b)).reward(&s).unwrap(), ra.max(rb));
    }
}

#[test]
fn undeclared_variable_is_rejected_at_bind() {
    let spec = parse_spec("x0 < 1 & x4 > -1").unwrap();
    assert_eq!(spec.arity(), 5);
    assert!(spec.bind(4).is_err());
    assert!(spec.bind(5).is_ok());
}
