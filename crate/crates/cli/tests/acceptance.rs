//! Acceptance suite. Each test writes one `criterion N: PASS|FAIL` line
//! straight to stderr so the verdicts show up without `--nocapture`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use robust_impulse::dpp::{
    dpp_residual, solve_root_value, solve_truncated, stopping_form_residual, truncation_monotonicity_report,
    SolveOptions,
};
use robust_impulse::expectation::{random_obstacle, stopping_check, tower_sweep};
use robust_impulse::extraction::verify_saddle;
use robust_impulse::instances::{random_instance, t1, InstanceShape};
use robust_impulse::lattice::{ImpulseProblem, InterventionHistory};
use robust_impulse::oracle::{check_game_value, classical_impulse_value, uniqueness_probe, EnumerationCaps};
use robust_impulse::sdg::{
    build_lattice_problem, build_lattice_problem_with, impulse_operator, kernel_moments, DiscretePath, mc_evaluate, stability_probe, CompileOptions,
    CostModel, FixedClassical, JumpModel, LatticeReplay, ScalarFn, SdeInstance, SigmaModel, StabilityProbe,
};

const SEED: u64 = 20_240_601;

fn report(n: u32, title: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: &str) -> bool {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let ok = pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
    let line = format!(
        "\ncriterion {n:>2} [{title}]: {} in {:.2}s{budget}; {detail}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn seeds(base: u64, count: u64) -> impl Iterator<Item = u64> {
    (0..count).map(move |i| base.wrapping_mul(31).wrapping_add(i))
}

#[test]
fn criterion_01_tower_property() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut trees = 0;
    for (i, seed) in seeds(SEED, 50).enumerate() {
        let shape = InstanceShape::new(1 + i % 6, 2 + i % 2, 1 + i % 4, 1);
        let p = random_instance(seed, &shape).unwrap();
        let r = tower_sweep(&p.lattice, p.kernels.as_ref(), 20, seed).unwrap();
        worst = worst.max(r.max_discrepancy);
        trees += 1;
    }
    let ok = report(
        1,
        "tower property",
        worst <= 1e-12,
        start.elapsed(),
        Some(Duration::from_secs(10)),
        &format!("{trees} trees x 20 functionals, max discrepancy {worst:e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_02_optimal_stopping() {
    let start = Instant::now();
    let caps = EnumerationCaps::default();
    let mut gap: f64 = 0.0;
    let mut violation: f64 = 0.0;
    let mut all = true;
    for (i, seed) in seeds(SEED + 2, 20).enumerate() {
        let shape = InstanceShape::new(1 + i % 3, 2 + i % 2, 1 + i % 2, 1);
        let p = random_instance(seed, &shape).unwrap();
        let x = random_obstacle(&p.lattice, seed, 1.0);
        let r = stopping_check(&p.lattice, p.kernels.as_ref(), &x, &caps).unwrap();
        gap = gap.max((r.recursion - r.upper).abs()).max((r.recursion - r.lower).abs());
        violation = violation.max(r.supermartingale_violation);
        all &= r.pass;
    }
    let ok = report(
        2,
        "optimal stopping",
        all && gap <= 1e-9 && violation <= 1e-12,
        start.elapsed(),
        Some(Duration::from_secs(30)),
        &format!("20 instances, max |Y - upper/lower| {gap:e}, max supermartingale violation {violation:e}"),
    );
    assert!(ok);
}

fn truncation_shape(i: usize) -> InstanceShape {
    let mut shape = InstanceShape::new(1 + i % 3, 2, 1 + i % 2, 1 + i % 2);
    shape.delta = 0.5;
    shape
}

#[test]
fn criterion_03_truncation_bound() {
    let start = Instant::now();
    let mut all = true;
    let mut worst_slack = f64::INFINITY;
    for (i, seed) in seeds(SEED + 3, 20).enumerate() {
        let p = random_instance(seed, &truncation_shape(i)).unwrap();
        let k_hard = p.k_hard();
        let ks: Vec<usize> = (0..=k_hard).collect();
        let r = truncation_monotonicity_report(&p, &ks, k_hard).unwrap();
        all &= r.monotone && r.within_bound;
        for row in &r.rows {
            worst_slack = worst_slack.min(row.bound - row.gap_to_reference);
        }
    }
    let ok = report(
        3,
        "truncation bound",
        all,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        &format!("20 instances, k = 0..=k_hard, smallest bound - gap {worst_slack:.3e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_dpp_and_uniqueness() {
    let start = Instant::now();
    let mut fields = vec![solve_truncated(&t1(), 3).unwrap()];
    for (i, seed) in seeds(SEED + 4, 10).enumerate() {
        let p = random_instance(seed, &truncation_shape(i)).unwrap();
        fields.push(solve_truncated(&p, 2).unwrap());
    }
    let mut residual: f64 = 0.0;
    let mut stopping_form: f64 = 0.0;
    for f in &fields {
        residual = residual.max(dpp_residual(f).unwrap());
        stopping_form = stopping_form.max(stopping_form_residual(f).unwrap());
    }
    let probe = uniqueness_probe(&fields[3], 100, SEED).unwrap();
    let detected = probe.trials.iter().filter(|t| t.detected).count();
    let ok = report(
        4,
        "dynamic programming",
        residual <= 1e-12 && stopping_form <= 1e-12 && probe.pass,
        start.elapsed(),
        Some(Duration::from_secs(30)),
        &format!(
            "{} fields, max residual {residual:e}, stopping form {stopping_form:e}; perturbations detected {detected}/100",
            fields.len()
        ),
    );
    assert!(ok);
}

/// Instances for the game-value and saddle criteria: T1 and 20 random ones,
/// cycling through the largest shapes whose strategy sets fit the caps.
fn game_instances() -> Vec<(String, ImpulseProblem, usize)> {
    // (steps, branches, kernels, impulses, k)
    const SHAPES: [(usize, usize, usize, usize, usize); 5] =
        [(2, 2, 2, 1, 2), (2, 2, 2, 2, 1), (1, 2, 2, 2, 2), (2, 2, 1, 2, 2), (2, 1, 2, 1, 2)];
    let mut out = vec![("T1".to_string(), t1(), 3)];
    for (i, seed) in seeds(SEED + 5, 19).enumerate() {
        let (n, b, kern, u, k) = SHAPES[i % SHAPES.len()];
        let p = random_instance(seed, &InstanceShape::new(n, b, kern, u)).unwrap();
        out.push((format!("seed {seed}"), p, k));
    }
    let p = random_instance(SEED + 55, &InstanceShape::new(2, 1, 2, 2)).unwrap();
    out.push(("seed large".to_string(), p, 2));
    out
}

fn game_caps() -> EnumerationCaps {
    EnumerationCaps {
        max_strategies: 20_000_000,
        ..EnumerationCaps::default()
    }
}

#[test]
fn criterion_05_game_value() {
    let start = Instant::now();
    let caps = game_caps();
    let mut worst: f64 = 0.0;
    let mut strategies = 0u64;
    let mut all = true;
    let instances = game_instances();
    for (label, p, k) in &instances {
        let r = check_game_value(p, *k, &caps, None).unwrap();
        if label == "T1" {
            all &= (r.dp_value + 0.2).abs() <= 1e-9;
        }
        worst = worst.max((r.upper - r.lower).abs()).max((r.upper - r.dp_value).abs());
        strategies = strategies.max(r.counts.strategies);
        all &= r.pass;
    }
    let ok = report(
        5,
        "game value",
        all && worst <= 1e-9,
        start.elapsed(),
        Some(Duration::from_secs(300)),
        &format!(
            "{} instances, max |upper - lower|, |upper - Y| {worst:e}, largest strategy set {strategies}",
            instances.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_06_saddle_point() {
    let start = Instant::now();
    let caps = game_caps();
    let mut all = true;
    let mut sampled = false;
    let mut most = 0;
    let instances = game_instances();
    for (_, p, k) in &instances {
        let field = solve_truncated(p, *k).unwrap();
        let r = verify_saddle(&field, &caps, SEED).unwrap();
        all &= r.pass;
        sampled |= r.sampled;
        most = most.max(r.max_interventions);
    }
    let ok = report(
        6,
        "saddle point",
        all && !sampled,
        start.elapsed(),
        Some(Duration::from_secs(300)),
        &format!(
            "{} instances, all deviations enumerated, most interventions on a path {most}",
            instances.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_classical_degeneration() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (i, seed) in seeds(SEED + 7, 20).enumerate() {
        let shape = InstanceShape::new(1 + i % 3, 2 + i % 2, 1, 1 + i % 2);
        let p = random_instance(seed, &shape).unwrap();
        let k = 3;
        let robust = solve_truncated(&p, k).unwrap().root_value().unwrap();
        let classical = classical_impulse_value(&p, k).unwrap();
        worst = worst.max((robust - classical).abs());
    }
    let ok = report(
        7,
        "classical degeneration",
        worst <= 1e-12,
        start.elapsed(),
        Some(Duration::from_secs(10)),
        &format!("20 single-kernel instances, max |Y - classical| {worst:e}"),
    );
    assert!(ok);
}

fn sdg_instance() -> SdeInstance {
    SdeInstance {
        horizon: 1.0,
        dimension: 1,
        sigma: SigmaModel::Constant { value: 0.25 },
        jump: JumpModel::Shift,
        running: ScalarFn::Square { scale: 1.0, center: 0.0 },
        terminal: ScalarFn::Affine {
            slope: 1.0,
            intercept: 0.0,
        },
        cost: CostModel::Constant { value: 1.0 },
        controls: vec![0.25],
        impulses: vec![vec![-2.0]],
        delta: 1.0,
        c0: Some(4.0),
    }
}

fn path_dependent_instance() -> SdeInstance {
    SdeInstance {
        sigma: SigmaModel::Affine {
            base: 0.2,
            control: 1.0,
            state: 0.15,
            path_mean: -0.1,
            min: 0.05,
            max: 0.6,
        },
        jump: JumpModel::Affine {
            impulse: 1.0,
            state: -0.5,
        },
        controls: vec![0.0, 0.1, 0.2],
        impulses: vec![vec![-0.5], vec![0.5]],
        ..sdg_instance()
    }
}

/// Largest deviation of the compiled kernel moments from `0` and
/// `sigma(t, I^v(path), a)^2 dt`, with sigma evaluated directly on the jumped
/// path.
fn max_moment_error(sde: &SdeInstance, n: usize, lambda: f64) -> f64 {
    let p = build_lattice_problem(sde, n, lambda).unwrap();
    let h = p.lattice.increment(0, 0)[0];
    let dt = sde.dt(n);
    let mut worst: f64 = 0.0;
    let histories: Vec<InterventionHistory> = [vec![], vec![(0, 0)], vec![(1, 0)], vec![(0, 1), (1, 0)]]
        .iter()
        .filter(|v| v.iter().all(|&(_, b)| b < sde.impulses.len()))
        .map(|v| InterventionHistory::from_pairs(v).unwrap())
        .collect();
    for depth in 0..n {
        for node in p.lattice.level(depth) {
            let path = p.lattice.path(node);
            let omega = DiscretePath::from_continuous(path.view().as_slice().to_vec(), 1).unwrap();
            for v in histories.iter().filter(|v| v.entries().iter().all(|e| e.time <= depth)) {
                let x = impulse_operator(sde, &omega, v).unwrap();
                let set = p.kernels.kernel_set(node, path.view(), v);
                for (kernel, &a) in set.iter().zip(&sde.controls) {
                    let sigma = sde.sigma.eval(x.value(depth, 0), x.mean_to(depth, 0), a);
                    let (mean, var) = kernel_moments(kernel, h);
                    worst = worst.max(mean.abs()).max((var - sigma * sigma * dt).abs());
                }
            }
        }
    }
    worst
}

#[test]
fn criterion_08_sdg_consistency() {
    let start = Instant::now();
    let moments = max_moment_error(&sdg_instance(), 6, 1.0)
        .max(max_moment_error(&path_dependent_instance(), 5, 1.2))
        .max(max_moment_error(&path_dependent_instance(), 4, 2f64.sqrt()));

    // lattice value against Monte Carlo replay of (u*, P*)
    let sde = sdg_instance();
    let n = 8;
    let p = build_lattice_problem(&sde, n, 1.0).unwrap();
    let field = solve_truncated(&p, 1).unwrap();
    let lattice_value = field.root_value().unwrap();
    let replay = LatticeReplay {
        field: &field,
        h: p.lattice.increment(0, 0)[0],
    };
    let mc = mc_evaluate(&sde, &replay, &FixedClassical(0), n, 100_000, SEED).unwrap();
    let within = (mc.mean - lattice_value).abs() <= 3.0 * mc.se;

    // refinement of the worst-case value under volatility ambiguity
    let ambiguous = SdeInstance {
        sigma: SigmaModel::Control,
        controls: vec![0.1, 0.3],
        running: ScalarFn::Constant { value: 0.0 },
        terminal: ScalarFn::Abs {
            scale: 1.0,
            center: 0.0,
        },
        c0: Some(2.0),
        ..sdg_instance()
    };
    let options = CompileOptions {
        node_cap: 100_000_000,
        ..CompileOptions::default()
    };
    let values: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&n| {
            let p = build_lattice_problem_with(&ambiguous, n, 1.0, &options).unwrap();
            solve_root_value(&p, 0, &SolveOptions::default()).unwrap()
        })
        .collect();
    let gaps = [(values[0] - values[1]).abs(), (values[1] - values[2]).abs()];
    let refining = gaps[1] <= 1.25 * gaps[0];

    let ok = report(
        8,
        "sdg consistency",
        moments <= 1e-12 && within && refining,
        start.elapsed(),
        Some(Duration::from_secs(300)),
        &format!(
            "kernel moment error {moments:e}; lattice {lattice_value:.6} vs MC {:.6} +- {:.6} (1e5 paths); \
             Y(4), Y(8), Y(16) = {:.6}, {:.6}, {:.6}, gaps {:.3e}, {:.3e}",
            mc.mean, mc.se, values[0], values[1], values[2], gaps[0], gaps[1]
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_09_stability_probe() {
    let start = Instant::now();
    let mut all = true;
    let mut tables = Vec::new();
    for (i, seed) in seeds(SEED + 9, 5).enumerate() {
        let mut sde = path_dependent_instance();
        sde.sigma = SigmaModel::Affine {
            base: 0.2 + 0.05 * i as f64,
            control: 1.0,
            state: 0.2,
            path_mean: 0.1,
            min: 0.05,
            max: 1.0,
        };
        let start_index = 2;
        let probe = StabilityProbe {
            steps: 12,
            start: start_index,
            omega: vec![0.0, 0.05, -0.02],
            perturbation: vec![0.0, 0.1 + 0.02 * i as f64, -0.08],
            v: InterventionHistory::from_pairs(&[(3, 0), (5, 1)]).unwrap(),
            v_prime: InterventionHistory::from_pairs(&[(7, 0), (9, 1)]).unwrap(),
            control: i % 3,
        };
        let rows = stability_probe(&sde, &probe, &[1.0, 0.5, 0.25], 10_000, seed).unwrap();
        all &= rows.windows(2).all(|w| w[1].mean < w[0].mean);
        tables.push(
            rows.iter()
                .map(|r| format!("{:.4}", r.mean))
                .collect::<Vec<_>>()
                .join(" > "),
        );
    }
    let ok = report(
        9,
        "stability probe",
        all,
        start.elapsed(),
        Some(Duration::from_secs(120)),
        &format!("E[sup|dX|] at s = 1, 1/2, 1/4: {}", tables.join("; ")),
    );
    assert!(ok);
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Runs every subcommand into `out` and returns the produced files.
fn run_suite(out: &Path, threads: usize) -> Vec<(String, Vec<u8>)> {
    let configs = workspace_root().join("configs");
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("solve", vec!["--config".into(), configs.join("t1.json").display().to_string()]),
        (
            "extract",
            vec!["--config".into(), configs.join("single-kernel.json").display().to_string(), "--k".into(), "3".into()],
        ),
        ("verify", vec!["--random".into(), "4".into()]),
        (
            "sdg",
            vec!["--config".into(), configs.join("sdg-two-vol.json").display().to_string(), "--paths".into(), "4000".into()],
        ),
        ("stopping-check", vec!["--random".into(), "3".into()]),
        ("tower-check", vec!["--random".into(), "3".into()]),
    ];
    let mut files = Vec::new();
    for (command, args) in runs {
        let dir = out.join(command);
        let output = Command::new(env!("CARGO_BIN_EXE_robust-impulse"))
            .arg(command)
            .args(&args)
            .args(["--seed", "11", "--threads", &threads.to_string(), "--out"])
            .arg(&dir)
            .output()
            .expect("binary runs");
        assert!(output.status.success(), "{command} failed: {}", String::from_utf8_lossy(&output.stderr));
        let mut names: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for path in names {
            let name = format!("{command}/{}", path.file_name().unwrap().to_string_lossy());
            files.push((name, std::fs::read(&path).unwrap()));
        }
    }
    files
}

#[test]
fn criterion_10_reproducibility() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let first = run_suite(&tmp.path().join("a"), 1);
    let again = run_suite(&tmp.path().join("b"), 1);
    let wide = run_suite(&tmp.path().join("c"), 8);
    let same_seed = first == again;
    let same_threads = first == wide;
    let bytes: usize = first.iter().map(|(_, b)| b.len()).sum();
    let ok = report(
        10,
        "reproducibility",
        same_seed && same_threads && !first.is_empty(),
        start.elapsed(),
        None,
        &format!(
            "{} artifacts ({bytes} bytes): rerun identical {same_seed}, --threads 1 vs 8 identical {same_threads}",
            first.len()
        ),
    );
    assert!(ok);
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let configs = workspace_root().join("configs");
    let tmp = tempfile::tempdir().unwrap();
    let run = |command: &str, config: &str| {
        Command::new(env!("CARGO_BIN_EXE_robust-impulse"))
            .args([command, "--config"])
            .arg(configs.join(config))
            .arg("--out")
            .arg(tmp.path())
            .output()
            .unwrap()
    };
    let run_k2 = |command: &str, config: &str| {
        Command::new(env!("CARGO_BIN_EXE_robust-impulse"))
            .args([command, "--k", "2", "--config"])
            .arg(configs.join(config))
            .arg("--out")
            .arg(tmp.path())
            .output()
            .unwrap()
    };
    let zero_cost = run("solve", "t1-zero-cost.json");
    assert_eq!(zero_cost.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&zero_cost.stderr).contains("cost below delta"));
    assert_eq!(run("sdg", "sdg-cfl.json").status.code(), Some(4));
    assert_eq!(run_k2("solve", "t1.json").status.code(), Some(0));

    // a field that violates the recursion at one leaf is rejected
    let field = tmp.path().join("field.csv");
    let text = std::fs::read_to_string(&field).unwrap();
    assert!(text.contains("\n1,0,,2,1.0\n"));
    let corrupted = tmp.path().join("corrupted.csv");
    std::fs::write(&corrupted, text.replace("\n1,0,,2,1.0\n", "\n1,0,,2,1.5\n")).unwrap();
    let verify = |path: &Path| {
        Command::new(env!("CARGO_BIN_EXE_robust-impulse"))
            .args(["verify", "--k", "2", "--config"])
            .arg(configs.join("t1.json"))
            .arg("--field")
            .arg(path)
            .arg("--out")
            .arg(tmp.path().join("verify"))
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(verify(&corrupted), Some(1));
    assert_eq!(verify(&field), Some(0));
}
