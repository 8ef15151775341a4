use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use aegis::detector::Detector;
use aegis::envsim::Benchmark;
use aegis::harness::{
    run_pipeline, summary_csv, transferability, Experiment, ExperimentConfig, Manifest, SUMMARY_HEADER,
};
use aegis::neuralctl::{Policy, StoredPolicy};
use aegis::shield::ShieldedPolicy;
use aegis::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aegisctl",
    version,
    about = "Attack black-box control policies and synthesize shields"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Bundled benchmark to use with default settings when no config is given.
    #[arg(short, long)]
    benchmark: Option<String>,
    /// Replace the configured seeds (repeatable; the first is the root seed).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Replace the configured output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the victim, its nominal rollouts and the perturbation box.
    TrainVictim(Common),
    /// Run the BO attack (stage 1, stage 2, or both as configured).
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
    },
    /// Rank state dimensions by forest importance on the stage-1 records.
    SelectFeatures(Common),
    /// Train the detector on the attack records.
    TrainDetector(Common),
    /// Train the auxiliary recovery policy.
    TrainAux(Common),
    /// Random baseline, defense rate and attack improvement (summary row).
    DefendEval(Common),
    /// Transferability of adversarial sets across runs of the same benchmark.
    Transfer {
        #[command(flatten)]
        common: Common,
        /// Output directories of at least two completed attack runs.
        #[arg(long = "run", required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
    /// Intervention sweep over ten values of C.
    SweepC(Common),
    /// Shielded against original performance.
    Perf {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Every stage end to end.
    Pipeline(Common),
    /// Check every artifact of a run directory against its manifest.
    Verify {
        /// Run output directory.
        dir: PathBuf,
    },
}

fn config(common: &Common) -> aegis::Result<ExperimentConfig> {
    let mut cfg = match (&common.config, &common.benchmark) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => {
            let b: Benchmark = name.parse()?;
            ExperimentConfig::for_benchmark(b, PathBuf::from(format!("runs/{b}")))
        }
        (None, None) => return Err(Error::Config("pass --config or --benchmark".into())),
    };
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if let Some(o) = &common.output {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(common: &Common) -> aegis::Result<Experiment> {
    Experiment::open(config(common)?)
}

type Shielded = (ShieldedPolicy, Arc<dyn Policy>, Arc<dyn Policy>);

fn shielded(ex: &Experiment) -> aegis::Result<Shielded> {
    let victim: Arc<dyn Policy> = Arc::new(ex.load_victim()?);
    let aux: Arc<dyn Policy> = Arc::new(ex.load_aux()?);
    let det: Arc<Detector> = Arc::new(ex.load_detector()?);
    let sp = ShieldedPolicy::new(det, victim.clone(), aux.clone())?;
    Ok((sp, victim, aux))
}

fn run(cli: Cli) -> aegis::Result<()> {
    match cli.command {
        Command::TrainVictim(c) => {
            let mut ex = open(&c)?;
            let victim = ex.victim()?;
            let nominal = ex.nominal(&victim)?;
            let pbox = ex.perturbation_box(&victim)?;
            println!(
                "victim `{}`: nominal safe rate {:.4}, perturbation radii {:?}",
                victim.name(),
                nominal.safe_rate,
                pbox.radii()
            );
        }
        Command::Attack { common, stage } => {
            let mut ex = open(&common)?;
            let victim = ex.load_victim()?;
            let nominal = ex.load_nominal()?;
            let pbox = ex.load_perturbation_box()?;
            let outcome = match stage {
                Some(1) => ex.attack_stage1(&victim, &nominal, &pbox)?,
                Some(_) => {
                    let attacks = ex.load_attack(&victim, false)?;
                    let selected = attacks
                        .selected
                        .ok_or_else(|| Error::Config("stage 2 needs `select-features` to run first".into()))?;
                    ex.attack_stage2(&victim, &nominal, &pbox, &selected)?
                }
                None => ex.attack(&victim, &nominal, &pbox)?.combined(),
            };
            println!(
                "attack: {}/{} unsafe rollouts ({:.4}), {} adversarial states",
                outcome.unsafe_count(),
                outcome.records.len(),
                outcome.success_rate(),
                outcome.adversarial_set().len()
            );
        }
        Command::SelectFeatures(c) => {
            let mut ex = open(&c)?;
            let victim = ex.load_victim()?;
            let pbox = ex.load_perturbation_box()?;
            let attacks = ex.load_attack(&victim, false)?;
            let (importances, selected) = ex.select_features(&pbox, &attacks.stage1)?;
            println!("importances {importances:?}");
            println!("selected dimensions {selected:?}");
        }
        Command::TrainDetector(c) => {
            let mut ex = open(&c)?;
            let victim = ex.load_victim()?;
            let nominal = ex.load_nominal()?;
            let attacks = ex.load_attack(&victim, true)?;
            let (_, report) = ex.detector(&attacks, &nominal)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::TrainAux(c) => {
            let mut ex = open(&c)?;
            let victim = ex.load_victim()?;
            let det = ex.load_detector()?;
            let pbox = ex.load_perturbation_box()?;
            let adversarial = ex.load_attack(&victim, false)?.adversarial_set();
            ex.aux(&victim, &det, &adversarial, &pbox)?;
            println!("auxiliary policy trained from {} adversarial states", adversarial.len());
        }
        Command::DefendEval(c) => {
            let mut ex = open(&c)?;
            let (sp, victim, aux) = shielded(&ex)?;
            let nominal = ex.load_nominal()?;
            let pbox = ex.load_perturbation_box()?;
            let attacks = ex.load_attack(victim.as_ref(), false)?;
            let (row, _) = ex.defend_eval(&sp, victim.as_ref(), aux.as_ref(), &nominal, &attacks, &pbox)?;
            print!("{}", summary_csv(&[row]));
        }
        Command::Transfer { common, runs } => {
            let cfg = config(&common)?;
            let bench = cfg.resolve()?;
            let mut names = Vec::new();
            let mut sets = Vec::new();
            let mut policies: Vec<StoredPolicy> = Vec::new();
            for dir in &runs {
                let mut run_cfg = cfg.clone();
                run_cfg.output_dir = dir.clone();
                let ex = Experiment::open(run_cfg)?;
                let victim = ex.load_victim()?;
                sets.push(ex.load_attack(&victim, false)?.adversarial_set());
                names.push(
                    dir.file_name()
                        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
                );
                policies.push(victim);
            }
            let refs: Vec<&dyn Policy> = policies.iter().map(|p| p as &dyn Policy).collect();
            let m = transferability(&bench.env, &bench.spec, &names, &sets, &refs)?;
            let csv = m.csv();
            std::fs::create_dir_all(&cfg.output_dir)?;
            let out = cfg.output_dir.join("transfer.csv");
            std::fs::write(&out, &csv)?;
            print!("{csv}");
            log::info!("wrote {}", out.display());
        }
        Command::SweepC(c) => {
            let mut ex = open(&c)?;
            let (sp, victim, _) = shielded(&ex)?;
            let nominal = ex.load_nominal()?;
            let pbox = ex.load_perturbation_box()?;
            let attacks = ex.load_attack(victim.as_ref(), false)?;
            let rows = ex.sweep(&sp, &nominal, &attacks, &pbox)?;
            print!("{}", aegis::harness::sweep_csv(&rows));
        }
        Command::Perf { common, runs } => {
            let mut cfg = config(&common)?;
            if let Some(n) = runs {
                cfg.evaluation.perf_runs = n;
            }
            let mut ex = Experiment::open(cfg)?;
            let (sp, victim, _) = shielded(&ex)?;
            let nominal = ex.load_nominal()?;
            let pbox = ex.load_perturbation_box()?;
            let rep = ex.perf(&sp, victim.as_ref(), &nominal, &pbox)?;
            print!("{}", rep.csv());
        }
        Command::Pipeline(c) => {
            let rep = run_pipeline(config(&c)?)?;
            println!("{SUMMARY_HEADER}");
            println!("{}", rep.eval.summary.csv_line());
            println!("artifacts in {}", rep.output_dir.display());
        }
        Command::Verify { dir } => {
            let m = Manifest::load(&dir)?.ok_or_else(|| Error::MissingFile(dir.join(aegis::harness::MANIFEST_FILE)))?;
            let stale = m.verify(&dir)?;
            if stale.is_empty() {
                println!("{} artifacts match the manifest", m.artifacts.len());
            } else {
                return Err(Error::Config(format!(
                    "artifacts differ from the manifest: {}",
                    stale.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
