use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use robust_impulse::config::InstanceConfig;
use robust_impulse::dpp::{
    dpp_residual, read_field_csv, solve_adaptive, solve_truncated, write_field_csv, ValueField,
};
use robust_impulse::expectation::{random_obstacle, stopping_check, tower_sweep, StoppingCheck, TowerReport};
use robust_impulse::extraction::{
    evaluate_pair, extract_optimal_control, extract_worst_case_strategy, verify_saddle, write_control_csv,
    write_strategy_csv, FixedKernel, SaddleReport, StrategyRule,
};
use robust_impulse::instances::{random_instance, InstanceShape};
use robust_impulse::lattice::{validate_with_cap, ImpulseProblem, InterventionHistory, ValidationReport};
use robust_impulse::oracle::{check_game_value, uniqueness_probe, EnumerationCaps, GameValueReport, UniquenessReport};
use robust_impulse::sdg::{mc_evaluate, FixedClassical, LatticeReplay, McEstimate};
use robust_impulse::Error;

use crate::{Cli, Command};

const VALIDATION_SCAN_CAP: u128 = 20_000_000;
const UNIQUENESS_TRIALS: usize = 100;
const TOWER_FUNCTIONALS: usize = 20;

#[derive(Debug)]
pub enum Failure {
    Verification(String),
    Invalid(String),
    TooLarge(String),
    Discretization(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Self::Verification(_) => 1,
            Self::Invalid(_) => 2,
            Self::TooLarge(_) => 3,
            Self::Discretization(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Verification(m) | Self::Invalid(m) | Self::TooLarge(m) | Self::Discretization(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InstanceTooLarge { .. } => Self::TooLarge(e.to_string()),
            Error::InvalidDiscretization { .. } => Self::Discretization(e.to_string()),
            other => Self::Invalid(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Invalid(e.to_string())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    if !(cli.tol > 0.0) {
        return Err(Failure::Invalid(format!("--tol must be positive, got {}", cli.tol)));
    }
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Solve => solve(cli),
        Command::Verify => verify(cli),
        Command::Extract => extract(cli),
        Command::Sdg => sdg(cli),
        Command::StoppingCheck => stopping(cli),
        Command::TowerCheck => tower(cli),
    }
}

fn load_config(cli: &Cli) -> Outcome<InstanceConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Invalid("--config is required".into()))?;
    Ok(InstanceConfig::load(path)?)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Outcome<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Runs the instance checks; exit code 2 with the first violation on failure.
fn validate(problem: &ImpulseProblem, k: usize) -> Outcome<ValidationReport> {
    let report = validate_with_cap(problem, k, VALIDATION_SCAN_CAP)?;
    if let Some(v) = report.first() {
        let place = match (&v.node, &v.history) {
            (Some(node), Some(h)) => format!(" at {node}, history [{h}]"),
            (Some(node), None) => format!(" at {node}"),
            _ => String::new(),
        };
        return Err(Failure::Invalid(format!("invalid instance: {}{place} ({})", v.message, v.detail)));
    }
    Ok(report)
}

#[derive(Serialize)]
struct SolveSummary {
    root_value: f64,
    k_used: usize,
    certified_gap: f64,
    dpp_residual: f64,
    adaptive: bool,
    root_values: Vec<f64>,
    entries: usize,
    seed: u64,
}

/// Solves with `--k` if given, otherwise adaptively to `--tol`. The instance
/// is checked on histories of length one before solving and on every history
/// the solve could reach afterwards.
fn solve_problem(problem: &ImpulseProblem, cli: &Cli) -> Outcome<(ValueField, SolveSummary)> {
    validate(problem, cli.k.unwrap_or(1).min(1))?;
    let (field, root_values, adaptive) = match cli.k {
        Some(k) => {
            let field = solve_truncated(problem, k)?;
            let root = field.root_value()?;
            (field, vec![root], false)
        }
        None => {
            let sol = solve_adaptive(problem, cli.tol)?;
            (sol.field, sol.root_values, true)
        }
    };
    validate(problem, field.budget())?;
    let summary = SolveSummary {
        root_value: field.root_value()?,
        k_used: field.budget(),
        certified_gap: problem.truncation_gap(field.budget()),
        dpp_residual: dpp_residual(&field)?,
        adaptive,
        root_values,
        entries: field.len(),
        seed: cli.seed,
    };
    Ok((field, summary))
}

fn solve(cli: &Cli) -> Outcome {
    let problem = load_config(cli)?.problem()?;
    let (field, summary) = solve_problem(&problem, cli)?;
    write_field_csv(&field, create(&cli.out, "field.csv")?)?;
    write_json(&cli.out, "summary.json", &summary)?;
    println!(
        "root_value={} k_used={} certified_gap={} dpp_residual={:e}",
        summary.root_value, summary.k_used, summary.certified_gap, summary.dpp_residual
    );
    Ok(())
}

#[derive(Serialize)]
struct Certification {
    root_value: f64,
    pair_value: f64,
    difference: f64,
    pass: bool,
    seed: u64,
}

fn extract(cli: &Cli) -> Outcome {
    let problem = load_config(cli)?.problem()?;
    let (field, _) = solve_problem(&problem, cli)?;
    write_control_csv(&field, create(&cli.out, "control.csv")?)?;
    write_strategy_csv(&field, create(&cli.out, "strategy.csv")?)?;
    let root_value = field.root_value()?;
    let pair_value = evaluate_pair(
        &problem,
        &extract_optimal_control(&field),
        &extract_worst_case_strategy(&field),
        field.budget(),
    )?;
    let difference = (pair_value - root_value).abs();
    let cert = Certification {
        root_value,
        pair_value,
        difference,
        pass: difference <= 1e-9,
        seed: cli.seed,
    };
    write_json(&cli.out, "certification.json", &cert)?;
    println!("evaluate_pair(u*, P*) = {pair_value}, root value = {root_value}, |diff| = {difference:e}");
    if !cert.pass {
        return Err(Failure::Verification("extracted pair does not attain the root value".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyCase {
    label: String,
    k: usize,
    dpp_residual: f64,
    game_value: GameValueReport,
    saddle: SaddleReport,
    uniqueness: UniquenessSummary,
    tower: TowerReport,
    pass: bool,
}

/// Uniqueness report without the per-trial rows.
#[derive(Serialize)]
struct UniquenessSummary {
    base_residual: f64,
    trials: usize,
    detected: usize,
    smallest_margin: f64,
    pass: bool,
}

impl From<&UniquenessReport> for UniquenessSummary {
    fn from(r: &UniquenessReport) -> Self {
        Self {
            base_residual: r.base_residual,
            trials: r.trials.len(),
            detected: r.trials.iter().filter(|t| t.detected).count(),
            smallest_margin: r
                .trials
                .iter()
                .map(|t| t.residual - t.epsilon)
                .fold(f64::INFINITY, f64::min),
            pass: r.pass,
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    cases: Vec<VerifyCase>,
    sampled: bool,
    pass: bool,
    seed: u64,
}

fn default_shape() -> InstanceShape {
    let mut shape = InstanceShape::new(2, 2, 2, 1);
    shape.bound = 1.0;
    shape
}

/// Problems to check: the config instance, or `--random N` seeded instances
/// drawn with the config's `random` shape.
fn instances(cli: &Cli, shape_default: InstanceShape) -> Outcome<Vec<(String, ImpulseProblem)>> {
    match cli.random {
        Some(count) => {
            let shape = match &cli.config {
                Some(_) => load_config(cli)?.random.unwrap_or(shape_default),
                None => shape_default,
            };
            (0..count as u64)
                .map(|i| {
                    let seed = cli.seed.wrapping_add(i);
                    Ok((format!("random seed {seed}"), random_instance(seed, &shape)?))
                })
                .collect()
        }
        None => {
            let cfg = load_config(cli)?;
            let label = cli.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            Ok(vec![(label, cfg.problem()?)])
        }
    }
}

fn verify(cli: &Cli) -> Outcome {
    let caps = EnumerationCaps::default();
    let mut cases = Vec::new();
    for (label, problem) in instances(cli, default_shape())? {
        let field = match &cli.field {
            Some(path) => read_field_csv(&problem, File::open(path)?)?,
            None => {
                let k = cli.k.unwrap_or_else(|| problem.k_hard().min(2));
                validate(&problem, k)?;
                solve_truncated(&problem, k)?
            }
        };
        let k = field.budget();
        let game_value = check_game_value(&problem, k, &caps, Some(cli.seed))?;
        let saddle = verify_saddle(&field, &caps, cli.seed)?;
        let uniqueness = uniqueness_probe(&field, UNIQUENESS_TRIALS, cli.seed)?;
        let tower = tower_sweep(&problem.lattice, problem.kernels.as_ref(), TOWER_FUNCTIONALS, cli.seed)?;
        let dpp = dpp_residual(&field)?;
        let pass = dpp <= 1e-12 && game_value.pass && saddle.pass && uniqueness.pass && tower.pass;
        println!(
            "{label}: k={k} game_value={} saddle={} uniqueness={} tower={} dpp_residual={dpp:e}",
            verdict(game_value.pass),
            verdict(saddle.pass),
            verdict(uniqueness.pass),
            verdict(tower.pass)
        );
        cases.push(VerifyCase {
            label,
            k,
            dpp_residual: dpp,
            game_value,
            saddle,
            uniqueness: (&uniqueness).into(),
            tower,
            pass,
        });
    }
    let report = VerifyReport {
        sampled: cases.iter().any(|c| c.saddle.sampled),
        pass: cases.iter().all(|c| c.pass),
        cases,
        seed: cli.seed,
    };
    write_json(&cli.out, "verify.json", &report)?;
    if !report.pass {
        return Err(Failure::Verification("verification failed, see verify.json".into()));
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

#[derive(Serialize)]
struct ControlRow {
    /// Index of the fixed classical control, absent for the worst case.
    control: Option<usize>,
    value: Option<f64>,
    lattice_value: f64,
    mc: McEstimate,
    within_3se: bool,
}

#[derive(Serialize)]
struct SdgReport {
    steps: usize,
    lambda: f64,
    c0: f64,
    root_value: f64,
    k_used: usize,
    certified_gap: f64,
    dpp_residual: f64,
    /// How often `P*` picks each control value at interior nodes before any
    /// intervention.
    worst_case_choices: Vec<usize>,
    fixed_controls: Vec<ControlRow>,
    worst_case: ControlRow,
    paths: usize,
    seed: u64,
}

fn sdg(cli: &Cli) -> Outcome {
    let cfg = load_config(cli)?;
    let sdg = cfg
        .sdg
        .as_ref()
        .ok_or_else(|| Failure::Invalid("config has no sdg section".into()))?;
    let problem = sdg.compile()?;
    let (field, summary) = solve_problem(&problem, cli)?;
    write_field_csv(&field, create(&cli.out, "field.csv")?)?;

    let k = field.budget();
    let h = problem.lattice.increment(0, 0)[0];
    let replay = LatticeReplay { field: &field, h };
    let u_star = extract_optimal_control(&field);
    let mut fixed_controls = Vec::new();
    for (j, &a) in sdg.model.controls.iter().enumerate() {
        let lattice_value = evaluate_pair(&problem, &u_star, &FixedKernel(j), k)?;
        let mc = mc_evaluate(&sdg.model, &replay, &FixedClassical(j), sdg.steps, cli.paths, cli.seed)?;
        fixed_controls.push(ControlRow {
            control: Some(j),
            value: Some(a),
            within_3se: (mc.mean - lattice_value).abs() <= 3.0 * mc.se + 1e-12,
            lattice_value,
            mc,
        });
    }
    let mc = mc_evaluate(&sdg.model, &replay, &replay, sdg.steps, cli.paths, cli.seed)?;
    let worst_case = ControlRow {
        control: None,
        value: None,
        within_3se: (mc.mean - summary.root_value).abs() <= 3.0 * mc.se + 1e-12,
        lattice_value: summary.root_value,
        mc,
    };

    let mut worst_case_choices = vec![0; sdg.model.controls.len()];
    let p_star = extract_worst_case_strategy(&field);
    let empty = InterventionHistory::empty();
    for depth in 0..problem.lattice.steps() {
        for node in problem.lattice.level(depth) {
            let path = problem.lattice.path(node);
            worst_case_choices[p_star.choose(node, path.view(), &empty)?] += 1;
        }
    }

    let report = SdgReport {
        steps: sdg.steps,
        lambda: sdg.lambda,
        c0: problem.c0,
        root_value: summary.root_value,
        k_used: k,
        certified_gap: summary.certified_gap,
        dpp_residual: summary.dpp_residual,
        worst_case_choices,
        fixed_controls,
        worst_case,
        paths: cli.paths,
        seed: cli.seed,
    };
    write_json(&cli.out, "sdg.json", &report)?;
    println!("lattice root value {} (k = {k})", report.root_value);
    for row in &report.fixed_controls {
        println!(
            "control {} (a = {}): lattice {} vs MC {} +- {}",
            row.control.unwrap_or_default(),
            row.value.unwrap_or_default(), row.lattice_value, row.mc.mean, row.mc.se
        );
    }
    println!(
        "worst case: lattice {} vs MC {} +- {}",
        report.worst_case.lattice_value, report.worst_case.mc.mean, report.worst_case.mc.se
    );
    Ok(())
}

#[derive(Serialize)]
struct StoppingReport {
    cases: Vec<(String, StoppingCheck)>,
    pass: bool,
    seed: u64,
}

fn stopping_shape() -> InstanceShape {
    InstanceShape::new(3, 2, 2, 1)
}

fn stopping(cli: &Cli) -> Outcome {
    let caps = EnumerationCaps::default();
    let mut cases = Vec::new();
    for (i, (label, problem)) in instances(cli, stopping_shape())?.into_iter().enumerate() {
        let obstacle = random_obstacle(&problem.lattice, cli.seed.wrapping_add(i as u64), problem.c0);
        let check = stopping_check(&problem.lattice, problem.kernels.as_ref(), &obstacle, &caps)?;
        println!(
            "{label}: recursion={} upper={} lower={} supermartingale_violation={:e} {}",
            check.recursion,
            check.upper,
            check.lower,
            check.supermartingale_violation,
            verdict(check.pass)
        );
        cases.push((label, check));
    }
    let report = StoppingReport {
        pass: cases.iter().all(|(_, c)| c.pass),
        cases,
        seed: cli.seed,
    };
    write_json(&cli.out, "stopping.json", &report)?;
    if !report.pass {
        return Err(Failure::Verification("stopping check failed, see stopping.json".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct TowerSweepReport {
    cases: Vec<(String, TowerReport)>,
    pass: bool,
    seed: u64,
}

fn tower(cli: &Cli) -> Outcome {
    let mut cases = Vec::new();
    for (label, problem) in instances(cli, InstanceShape::new(4, 3, 4, 1))? {
        let r = tower_sweep(&problem.lattice, problem.kernels.as_ref(), TOWER_FUNCTIONALS, cli.seed)?;
        println!("{label}: max discrepancy {:e} {}", r.max_discrepancy, verdict(r.pass));
        cases.push((label, r));
    }
    let report = TowerSweepReport {
        pass: cases.iter().all(|(_, c)| c.pass),
        cases,
        seed: cli.seed,
    };
    write_json(&cli.out, "tower.json", &report)?;
    if !report.pass {
        return Err(Failure::Verification("tower check failed, see tower.json".into()));
    }
    Ok(())
}
