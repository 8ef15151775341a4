//! Acceptance gates. Runs sequentially and prints one PASS/FAIL line per
//! criterion; exits non-zero if any criterion fails.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use aegis::attack::{bo_attack, random_attack, BoAttackConfig, PerturbationBox, Retention};
use aegis::detector::{random_states, Detector};
use aegis::envsim::{Benchmark, Trajectory};
use aegis::forest::{rf_train, select_top_features, top_k_count, ForestConfig, Label, LabeledDataset};
use aegis::gpopt::{bo_minimize, expected_improvement_from, gp_fit, AcquisitionConfig, GpHyper};
use aegis::harness::{
    run_pipeline, transferability, AttackStages, Experiment, ExperimentConfig, NominalSet, METRIC_FILES,
};
use aegis::neuralctl::{Activation, DenseNet, Policy, StoredPolicy};
use aegis::seed;
use aegis::shield::{eval_defense, train_aux, ShieldedPolicy};
use aegis::specdsl::{CmpOp, Formula, SafetySpec, Term};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<(bool, String), String>;

#[derive(Default)]
struct Gates {
    results: Vec<(u8, bool)>,
}

impl Gates {
    fn record(&mut self, id: u8, name: &str, outcome: Outcome) {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} C{id:<2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, pass));
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Independent semantics oracle

const GRID: [f64; 9] = [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0];
const ORACLE_DIM: usize = 3;

fn grid_value(rng: &mut impl Rng) -> f64 {
    GRID[rng.gen_range(0..GRID.len())]
}

fn random_term(rng: &mut impl Rng, depth: usize) -> Term {
    if depth == 0 || rng.gen_bool(0.4) {
        return if rng.gen_bool(0.6) {
            Term::Var(rng.gen_range(0..ORACLE_DIM))
        } else {
            Term::Const(grid_value(rng))
        };
    }
    let a = Box::new(random_term(rng, depth - 1));
    match rng.gen_range(0..5) {
        0 => Term::Neg(a),
        1 => Term::Abs(a),
        2 => Term::Add(a, Box::new(random_term(rng, depth - 1))),
        3 => Term::Sub(a, Box::new(random_term(rng, depth - 1))),
        _ => Term::Mul(a, Box::new(random_term(rng, depth - 1))),
    }
}

fn random_formula(rng: &mut impl Rng, depth: usize) -> Formula {
    if depth == 0 || rng.gen_bool(0.3) {
        let ops = [CmpOp::Eq, CmpOp::Ne, CmpOp::Le, CmpOp::Lt, CmpOp::Ge, CmpOp::Gt];
        return Formula::pred(ops[rng.gen_range(0..6)], random_term(rng, 2), random_term(rng, 2));
    }
    let a = random_formula(rng, depth - 1);
    let b = random_formula(rng, depth - 1);
    if rng.gen_bool(0.5) {
        Formula::and(a, b)
    } else {
        Formula::or(a, b)
    }
}

fn value(t: &Term, s: &[f64]) -> f64 {
    match t {
        Term::Var(i) => s[*i],
        Term::Const(c) => *c,
        Term::Neg(a) => -value(a, s),
        Term::Abs(a) => value(a, s).abs(),
        Term::Add(a, b) => value(a, s) + value(b, s),
        Term::Sub(a, b) => value(a, s) - value(b, s),
        Term::Mul(a, b) => value(a, s) * value(b, s),
    }
}

fn truth(f: &Formula, s: &[f64]) -> bool {
    match f {
        Formula::Pred { op, lhs, rhs } => {
            let (l, r) = (value(lhs, s), value(rhs, s));
            match op {
                CmpOp::Eq => l == r,
                CmpOp::Ne => l != r,
                CmpOp::Le => l <= r,
                CmpOp::Lt => l < r,
                CmpOp::Ge => l >= r,
                CmpOp::Gt => l > r,
            }
        }
        Formula::And(a, b) => truth(a, s) && truth(b, s),
        Formula::Or(a, b) => truth(a, s) || truth(b, s),
    }
}

fn grid_state(rng: &mut impl Rng) -> Vec<f64> {
    (0..ORACLE_DIM).map(|_| grid_value(rng)).collect()
}

fn c1_semantics() -> Outcome {
    let t = Instant::now();
    let mut rng = seed::rng(101);
    let (mut agree, mut checked, mut boundary) = (0, 0, 0);
    for _ in 0..1000 {
        let f = random_formula(&mut rng, 3);
        let spec = SafetySpec::new(f.clone());
        let s = grid_state(&mut rng);
        let l = spec.reward(&s).map_err(err)?;
        if l == 0.0 {
            boundary += 1;
            continue;
        }
        checked += 1;
        if truth(&f, &s) == (l > 0.0) {
            agree += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        agree == checked && secs < 1.0,
        format!("{agree}/{checked} agree ({boundary} boundary pairs excluded), {secs:.3} s"),
    ))
}

fn c2_trajectory_min() -> Outcome {
    let mut rng = seed::rng(102);
    let mut exact = 0;
    for _ in 0..100 {
        let spec = SafetySpec::new(random_formula(&mut rng, 3));
        let len = rng.gen_range(1..60);
        let mut traj = Trajectory::new(random_state(&mut rng));
        for _ in 1..len {
            traj.push(vec![0.0], random_state(&mut rng));
        }
        let mut brute = f64::INFINITY;
        for s in &traj.states {
            brute = brute.min(spec.reward(s).map_err(err)?);
        }
        if spec.trajectory_reward(&traj).map_err(err)? == brute {
            exact += 1;
        }
    }
    Ok((exact == 100, format!("{exact}/100 exact matches")))
}

fn random_state(rng: &mut impl Rng) -> Vec<f64> {
    if rng.gen_bool(0.3) {
        grid_state(rng)
    } else {
        (0..ORACLE_DIM).map(|_| rng.gen_range(-2.5..2.5)).collect()
    }
}

// ---------------------------------------------------------------------------
// Networks, GP, BO, forest

fn c3_gradient_check() -> Outcome {
    let mut rng = seed::rng(103);
    let hidden_acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n_hidden = rng.gen_range(1..=2);
        let mut sizes = vec![rng.gen_range(1..=6)];
        let mut acts = Vec::new();
        for _ in 0..n_hidden {
            sizes.push(rng.gen_range(2..=16));
            acts.push(hidden_acts[rng.gen_range(0..3)]);
        }
        sizes.push(rng.gen_range(1..=4));
        acts.push(if rng.gen_bool(0.5) {
            Activation::Tanh
        } else {
            Activation::Identity
        });
        let mut net = DenseNet::random(&sizes, &acts, 0.5, &mut rng).map_err(err)?;
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective =
            |net: &DenseNet, x: &[f64]| -> f64 { net.forward(x).unwrap().iter().zip(&w).map(|(o, wi)| o * wi).sum() };
        let cache = net.forward_cached(&x).map_err(err)?;
        let (grad_params, grad_input) = net.backward(&cache, &w).map_err(err)?;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
        for (i, analytic) in grad_params.iter().enumerate() {
            let p = net.params()[i];
            net.params_mut()[i] = p + h;
            let up = objective(&net, &x);
            net.params_mut()[i] = p - h;
            let down = objective(&net, &x);
            net.params_mut()[i] = p;
            worst = worst.max(rel(*analytic, (up - down) / (2.0 * h)));
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            worst = worst.max(rel(
                grad_input[i],
                (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h),
            ));
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e} over 20 nets")))
}

fn c4_gp_ei() -> Outcome {
    let mut rng = seed::rng(104);
    let draws: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
    let (best, xi) = (0.0, 0.01);
    let mut worst_mc: f64 = 0.0;
    for mu in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        for sigma in [0.1, 0.3, 0.5, 0.8, 1.0] {
            let mc = draws
                .iter()
                .map(|z| (best - xi - (mu + sigma * z)).max(0.0))
                .sum::<f64>()
                / draws.len() as f64;
            worst_mc = worst_mc.max((expected_improvement_from(mu, sigma, best, xi) - mc).abs());
        }
    }
    let x: Vec<Vec<f64>> = (0..12)
        .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
    let gp = gp_fit(&x, &y, GpHyper::heuristic(&x, &y)).map_err(err)?;
    let worst_interp = x
        .iter()
        .zip(&y)
        .map(|(p, t)| (gp.predict(p).0 - t).abs())
        .fold(0.0, f64::max);
    let mut negative = 0;
    for _ in 0..10_000 {
        let mu = rng.gen_range(-10.0..10.0);
        let sigma = if rng.gen_bool(0.05) {
            0.0
        } else {
            rng.gen_range(0.0..10.0)
        };
        let b = rng.gen_range(-10.0..10.0);
        let x = rng.gen_range(0.0..1.0);
        if expected_improvement_from(mu, sigma, b, x) < 0.0 {
            negative += 1;
        }
    }
    Ok((
        worst_mc <= 3e-3 && worst_interp <= 1e-4 && negative == 0,
        format!(
            "EI vs Monte Carlo max |diff| {worst_mc:.2e}; GP interpolation max error {worst_interp:.2e}; {negative} negative EI values"
        ),
    ))
}

fn c5_bo_sanity() -> Outcome {
    let cfg = AcquisitionConfig::default();
    let (mut good, mut exact_budget) = (0, 0);
    let mut bests = Vec::new();
    for s in 0..5 {
        let mut calls = 0;
        let mut f = |x: &[f64]| {
            calls += 1;
            (x[0] - 0.3).powi(2)
        };
        let r = bo_minimize(&mut f, &[0.0], &[1.0], &cfg, s).map_err(err)?;
        if r.best_y <= 1e-2 {
            good += 1;
        }
        if calls == 40 && r.evals.len() == 40 {
            exact_budget += 1;
        }
        bests.push(format!("{:.1e}", r.best_y));
    }
    Ok((
        good >= 4 && exact_budget == 5,
        format!(
            "{good}/5 seeds reach best_y <= 1e-2 (best_y {}), {exact_budget}/5 runs used exactly 40 evaluations",
            bests.join(" ")
        ),
    ))
}

/// Noise features in `[-1, 1]` with the label given by the sign of `key`.
fn sign_dataset(d: usize, key: usize, n: usize, seed: u64) -> aegis::Result<LabeledDataset> {
    let mut rng = aegis::seed::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels = rows
        .iter()
        .map(|r| if r[key] > 0.0 { Label::Unsafe } else { Label::Safe })
        .collect();
    LabeledDataset::from_rows(rows, labels)
}

fn c7_feature_selection() -> Outcome {
    let small = sign_dataset(8, 3, 2000, 107).map_err(err)?;
    let rf = rf_train(&small, &ForestConfig::default(), 7).map_err(err)?;
    let imp = rf.importances()[3];
    let sel_small = select_top_features(rf.importances(), 0.2).map_err(err)?;

    let wide = sign_dataset(44, 13, 2000, 108).map_err(err)?;
    let rf_wide = rf_train(&wide, &ForestConfig::default(), 7).map_err(err)?;
    let sel_wide = select_top_features(rf_wide.importances(), 0.2).map_err(err)?;
    let k = top_k_count(44, 0.2);
    Ok((
        imp >= 0.9 && sel_small.first() == Some(&3) && sel_wide.first() == Some(&13) && sel_wide.len() == 9 && k == 9,
        format!(
            "8 features: key importance {imp:.4}, selected {sel_small:?}; 44 features: key importance {:.4}, ranked first: {}, {} selected, ceil(0.2*44) = {k}",
            rf_wide.importances()[13],
            sel_wide.first() == Some(&13),
            sel_wide.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// Benchmark runs

struct Prepared {
    ex: Experiment,
    victim: Arc<dyn Policy>,
    nominal: NominalSet,
    pbox: PerturbationBox,
    attacks: AttackStages,
    det: Detector,
    holdout: f64,
}

fn config(bench: Benchmark, dir: &Path, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_benchmark(bench, dir);
    cfg.seeds = seeds;
    cfg
}

fn prepare_victim(cfg: ExperimentConfig) -> aegis::Result<(Experiment, StoredPolicy, NominalSet, PerturbationBox)> {
    let mut ex = Experiment::open(cfg)?;
    let victim = ex.victim()?;
    let nominal = ex.nominal(&victim)?;
    let pbox = ex.perturbation_box(&victim)?;
    Ok((ex, victim, nominal, pbox))
}

fn prepare_rest(
    mut ex: Experiment,
    victim: StoredPolicy,
    nominal: NominalSet,
    pbox: PerturbationBox,
) -> aegis::Result<Prepared> {
    let mut attacks = ex.attack(&victim, &nominal, &pbox)?;
    let (det, report) = ex.detector(&attacks, &nominal)?;
    attacks.strip_rollouts();
    Ok(Prepared {
        ex,
        victim: Arc::new(victim),
        nominal,
        pbox,
        attacks,
        det,
        holdout: report.holdout_accuracy,
    })
}

fn c6_attack_dominance(
    ex: &Experiment,
    victim: &dyn Policy,
    nominal: &NominalSet,
    pbox: &PerturbationBox,
    started: Instant,
) -> Outcome {
    let cfg = BoAttackConfig {
        retention: Retention::None,
        ..BoAttackConfig::default()
    };
    let (mut bo_rates, mut rnd_rates) = (Vec::new(), Vec::new());
    for i in 0..5 {
        let s = seed::derive(ex.cfg.root_seed(), "dominance", i);
        let bo = bo_attack(ex.env(), victim, ex.spec(), pbox, &nominal.base, &cfg, s).map_err(err)?;
        let rnd = random_attack(
            ex.env(),
            victim,
            ex.spec(),
            pbox,
            &nominal.base,
            bo.records.len(),
            Retention::None,
            seed::derive(s, "random", 0),
        )
        .map_err(err)?;
        bo_rates.push(bo.success_rate());
        rnd_rates.push(rnd.success_rate());
    }
    let bo = bo_rates.iter().sum::<f64>() / 5.0;
    let rnd = rnd_rates.iter().sum::<f64>() / 5.0;
    let secs = started.elapsed().as_secs_f64();
    Ok((
        bo >= 2.0 * rnd && bo > 0.0 && secs < 600.0,
        format!("mean BO rate {bo:.4} vs random {rnd:.4} over 5 seeds, {secs:.0} s including victim training"),
    ))
}

fn c8_detector(p: &Prepared) -> Outcome {
    let env = p.ex.env();
    let bounds = env.safety_box.clone().unwrap_or_else(|| env.init_box.clone());
    let states = random_states(&bounds.lower, &bounds.upper, 10_000, 108);
    let cs: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
    let (mut bad_scores, mut non_monotone) = (0, 0);
    for s in &states {
        let (a, b) = p.det.scores(s);
        if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && (a + b - 1.0).abs() <= 1e-9) {
            bad_scores += 1;
        }
        let flags: Vec<bool> = cs.iter().map(|&c| p.det.with_c(c).classify(s)).collect();
        if flags.windows(2).any(|w| w[0] && !w[1]) {
            non_monotone += 1;
        }
    }
    Ok((
        p.holdout >= 0.9 && bad_scores == 0 && non_monotone == 0,
        format!(
            "held-out accuracy {:.4}; {bad_scores} states with unnormalized scores, {non_monotone} with non-monotone decisions in C (10000 states)",
            p.holdout
        ),
    ))
}

/// Defense rates of shields built from five auxiliary-policy seeds; the
/// first one is the pipeline's own `aux` stage.
fn defense_rates(p: &mut Prepared) -> aegis::Result<(Vec<f64>, Arc<dyn Policy>)> {
    let adversarial = p.attacks.adversarial_set();
    if adversarial.is_empty() {
        return Err(aegis::Error::Undefined("no adversarial states".into()));
    }
    let det = Arc::new(p.det.clone());
    let mut rates = Vec::new();
    let mut first: Option<Arc<dyn Policy>> = None;
    for k in 0..5 {
        let aux = if k == 0 {
            p.ex.aux(p.victim.as_ref(), &p.det, &adversarial, &p.pbox)?
        } else {
            train_aux(
                p.ex.env(),
                p.ex.spec(),
                &p.det,
                &adversarial,
                Some(&p.pbox),
                p.victim.as_ref(),
                &p.ex.cfg.aux,
                seed::derive(p.ex.cfg.root_seed(), "aux", k),
            )?
        };
        let aux: Arc<dyn Policy> = Arc::new(aux);
        let sp = ShieldedPolicy::new(det.clone(), p.victim.clone(), aux.clone())?;
        rates.push(eval_defense(p.ex.env(), p.ex.spec(), &sp, &adversarial)?.rate);
        first.get_or_insert(aux);
    }
    Ok((rates, first.expect("five seeds ran")))
}

fn summarize(name: &str, rates: &[f64]) -> (f64, String) {
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, format!("{name} mean {mean:.4} min {min:.4}"))
}

fn c12_transfer(root: &Path) -> Outcome {
    let run = |tag: &str| -> aegis::Result<String> {
        let mut names = Vec::new();
        let mut sets = Vec::new();
        let mut victims = Vec::new();
        let mut env_spec = None;
        for s in [1u64, 2] {
            let mut cfg = config(Benchmark::Pendulum, &root.join(format!("{tag}-{s}")), vec![s]);
            cfg.attack.two_stage = false;
            cfg.attack.stride = Some(5);
            cfg.attack.nominal_rollouts = 200;
            let (mut ex, victim, nominal, pbox) = prepare_victim(cfg)?;
            sets.push(ex.attack(&victim, &nominal, &pbox)?.adversarial_set());
            names.push(format!("victim-seed{s}"));
            victims.push(victim);
            env_spec = Some((ex.env().clone(), ex.spec().clone()));
        }
        let (env, spec) = env_spec.expect("two victims");
        let refs: Vec<&dyn Policy> = victims.iter().map(|v| v as &dyn Policy).collect();
        Ok(transferability(&env, &spec, &names, &sets, &refs)?.csv())
    };
    let first = run("transfer-a").map_err(err)?;
    let replay = run("transfer-b").map_err(err)?;
    let mut diagonal_ok = true;
    let mut in_range = true;
    let rows: Vec<Vec<&str>> = first.lines().skip(1).map(|l| l.split(',').skip(1).collect()).collect();
    for (i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) => {
                    in_range &= (0.0..=1.0).contains(&v);
                    if i == j {
                        diagonal_ok &= v == 1.0;
                    }
                }
                Err(_) => {
                    diagonal_ok = false;
                    in_range = false;
                }
            }
        }
    }
    let identical = first == replay;
    Ok((
        diagonal_ok && in_range && identical,
        format!(
            "matrix {:?}; diagonal 1: {diagonal_ok}, entries in [0,1]: {in_range}, byte-identical replay: {identical}",
            rows
        ),
    ))
}

fn c13_sweep(p: &mut Prepared, sp: &ShieldedPolicy) -> Outcome {
    let rows = p.ex.sweep(sp, &p.nominal, &p.attacks, &p.pbox).map_err(err)?;
    let reference = p.attacks.adversarial_set().len() + p.nominal.safe.iter().map(|t| t.states.len()).sum::<usize>();
    let counts: Vec<usize> = rows.iter().map(|r| r.intervention_count).collect();
    let monotone = counts.windows(2).all(|w| w[0] <= w[1]);
    let all_unsafe = counts.last() == Some(&reference);
    Ok((
        rows.len() == 10 && monotone && all_unsafe,
        format!(
            "{} rows, intervention counts {counts:?} of {reference} reference states; non-decreasing: {monotone}; largest C flags every state: {all_unsafe}",
            rows.len()
        ),
    ))
}

fn c14_determinism(root: &Path) -> Outcome {
    let run = |dir: &str| -> aegis::Result<()> {
        let mut cfg = config(Benchmark::CarPlatoon4, &root.join(dir), vec![1]);
        cfg.attack.stride = Some(100);
        cfg.attack.nominal_rollouts = 200;
        cfg.aux.trainer.total_steps = 3000;
        cfg.evaluation.perf_runs = 20;
        run_pipeline(cfg).map(|_| ())
    };
    run("determinism-a").map_err(err)?;
    run("determinism-b").map_err(err)?;
    let mut differing = Vec::new();
    for f in METRIC_FILES {
        let a = std::fs::read(root.join("determinism-a").join(f)).map_err(err)?;
        let b = std::fs::read(root.join("determinism-b").join(f)).map_err(err)?;
        if a != b {
            differing.push(f);
        }
    }
    Ok((
        differing.is_empty(),
        format!("{} metric CSVs compared, differing: {differing:?}", METRIC_FILES.len()),
    ))
}

fn main() {
    let mut g = Gates::default();
    g.record(1, "semantics oracle", c1_semantics());
    g.record(2, "trajectory reward is the per-state minimum", c2_trajectory_min());
    g.record(3, "gradient check", c3_gradient_check());
    g.record(4, "GP and EI", c4_gp_ei());
    g.record(5, "BO sanity", c5_bo_sanity());
    g.record(7, "feature selection", c7_feature_selection());

    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();

    let started = Instant::now();
    let pendulum = prepare_victim(config(Benchmark::Pendulum, &root.join("pendulum"), vec![0, 1, 2, 3, 4]));
    let mut pendulum = match pendulum {
        Ok((ex, victim, nominal, pbox)) => {
            g.record(
                6,
                "attack dominance",
                c6_attack_dominance(&ex, &victim, &nominal, &pbox, started),
            );
            prepare_rest(ex, victim, nominal, pbox).map_err(err)
        }
        Err(e) => Err(err(e)),
    };
    if let Err(e) = &pendulum {
        for (id, name) in [
            (6, "attack dominance"),
            (8, "detector"),
            (9, "defense"),
            (10, "attack improvement"),
            (11, "performance retention"),
            (13, "intervention sweep"),
        ] {
            if !(id == 6 && g.results.iter().any(|r| r.0 == 6)) {
                g.record(id, name, Err(format!("pendulum setup failed: {e}")));
            }
        }
    }

    if let Ok(p) = pendulum.as_mut() {
        g.record(8, "detector", c8_detector(p));

        let defense_start = Instant::now();
        let pend_defense = defense_rates(p);
        let platoon = (|| -> aegis::Result<(Vec<f64>, Prepared)> {
            let mut cfg = config(Benchmark::CarPlatoon4, &root.join("carplatoon4"), vec![0]);
            cfg.attack.stride = Some(20);
            cfg.aux.trainer.total_steps = 30_000;
            let (ex, victim, nominal, pbox) = prepare_victim(cfg)?;
            let mut q = prepare_rest(ex, victim, nominal, pbox)?;
            let (rates, _) = defense_rates(&mut q)?;
            Ok((rates, q))
        })();
        let secs = defense_start.elapsed().as_secs_f64();
        let c9 = match (&pend_defense, &platoon) {
            (Ok((pr, _)), Ok((cr, _))) => {
                let (pm, pd) = summarize("pendulum", pr);
                let (cm, cd) = summarize("carplatoon4", cr);
                Ok((
                    pm >= 0.9 && cm >= 0.9 && secs < 1800.0,
                    format!("{pd}; {cd} (5 auxiliary seeds each); {secs:.0} s including aux training"),
                ))
            }
            (Err(e), _) | (_, Err(e)) => Err(err(e)),
        };
        g.record(9, "defense", c9);

        match pend_defense {
            Ok((_, aux)) => {
                let det = Arc::new(p.det.clone());
                let sp = ShieldedPolicy::new(det, p.victim.clone(), aux.clone()).expect("shield");
                let eval =
                    p.ex.defend_eval(&sp, p.victim.as_ref(), aux.as_ref(), &p.nominal, &p.attacks, &p.pbox);
                g.record(
                    10,
                    "attack improvement",
                    eval.map_err(err).map(|(row, metrics)| {
                        let imp = row.attack_improvement;
                        (
                            imp.is_some_and(|v| v >= 0.5),
                            format!(
                                "improvement {} over 5 seeds (unsafe original {}, shielded {}); summary row {}",
                                imp.map_or("undefined".into(), |v| format!("{v:.4}")),
                                metrics.get("improvement_unsafe_original").unwrap_or("N/A"),
                                metrics.get("improvement_unsafe_shielded").unwrap_or("N/A"),
                                row.csv_line()
                            ),
                        )
                    }),
                );
                let perf = p.ex.perf(&sp, p.victim.as_ref(), &p.nominal, &p.pbox);
                g.record(
                    11,
                    "performance retention",
                    perf.map_err(err).map(|r| {
                        (
                            r.relative_gap <= 0.15 && r.n_runs == 200,
                            format!(
                                "normalized return original {:.4}, shielded {:.4}, gap {:.4} over {} runs",
                                r.mean_return_orig, r.mean_return_shielded, r.relative_gap, r.n_runs
                            ),
                        )
                    }),
                );
                g.record(13, "intervention sweep", c13_sweep(p, &sp));
            }
            Err(e) => {
                for (id, name) in [
                    (10, "attack improvement"),
                    (11, "performance retention"),
                    (13, "intervention sweep"),
                ] {
                    g.record(id, name, Err(format!("pendulum aux failed: {e}")));
                }
            }
        }
    }

    g.record(12, "transferability", c12_transfer(root));
    g.record(14, "end-to-end determinism", c14_determinism(root));

    g.results.sort();
    let failed: Vec<u8> = g.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        g.results.len() - failed.len(),
        g.results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
