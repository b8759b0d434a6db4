use super::*;
use crate::dpp::{solve_truncated, ValueField};
use crate::extraction::{evaluate_pair, FixedKernel, WaitEverywhere};
use crate::lattice::{InterventionCost, InterventionHistory, PathBuffer, TerminalReward};

fn basic(sigma: f64) -> SdeInstance {
    SdeInstance {
        horizon: 1.0,
        dimension: 1,
        sigma: SigmaModel::Constant { value: sigma },
        jump: JumpModel::Shift,
        running: ScalarFn::Constant { value: 0.0 },
        terminal: ScalarFn::Affine {
            slope: 1.0,
            intercept: 0.0,
        },
        cost: CostModel::Constant { value: 1.0 },
        controls: vec![sigma],
        impulses: vec![vec![-2.0]],
        delta: 1.0,
        c0: Some(3.0),
    }
}

fn hist(pairs: &[(usize, usize)]) -> InterventionHistory {
    InterventionHistory::from_pairs(pairs).unwrap()
}

#[test]
fn empty_history_is_identity() {
    let sde = basic(0.2);
    let omega = DiscretePath::from_continuous(vec![0.0, 0.3, -0.1], 1).unwrap();
    assert_eq!(impulse_operator(&sde, &omega, &InterventionHistory::empty()).unwrap(), omega);
}

#[test]
fn constant_jump_shifts_from_its_time() {
    let sde = basic(0.2);
    let omega = DiscretePath::from_continuous(vec![0.0, 0.3, -0.1], 1).unwrap();
    let x = impulse_operator(&sde, &omega, &hist(&[(0, 0)])).unwrap();
    assert_eq!(x.scalar_values(), vec![-2.0, -1.7, -2.1]);
    assert_eq!(x.without_jumps(), omega);
}

#[test]
fn same_time_jumps_are_sequential() {
    let mut sde = basic(0.2);
    sde.jump = JumpModel::Affine {
        impulse: 0.0,
        state: -1.0,
    };
    sde.impulses = vec![vec![0.0]];
    let omega = DiscretePath::from_continuous(vec![0.0, 0.7, 1.5], 1).unwrap();
    let x = impulse_operator(&sde, &omega, &hist(&[(1, 0), (1, 0)])).unwrap();
    // the second reset sees an already-zero state and adds nothing
    assert_eq!(x.jumps[0].size, vec![-0.7]);
    assert_eq!(x.jumps[1].size, vec![0.0]);
    assert_eq!(x.value(1, 0), 0.0);
}

#[test]
fn applying_in_two_parts_matches_concatenation() {
    let mut sde = basic(0.2);
    sde.jump = JumpModel::Affine {
        impulse: 1.0,
        state: -0.5,
    };
    sde.impulses = vec![vec![1.0], vec![-0.5]];
    let omega = DiscretePath::from_continuous(vec![0.0, 0.4, -0.2, 0.9], 1).unwrap();
    let v = hist(&[(0, 1), (1, 0)]);
    let w = hist(&[(2, 1), (2, 0)]);
    let stepwise = impulse_operator(&sde, &impulse_operator(&sde, &omega, &v).unwrap(), &w).unwrap();
    let joined = impulse_operator(&sde, &omega, &v.concat(&w, 10)).unwrap();
    assert_eq!(stepwise, joined);
}

#[test]
fn intervention_past_the_path_is_an_error() {
    let sde = basic(0.2);
    let omega = DiscretePath::from_continuous(vec![0.0, 0.1], 1).unwrap();
    assert!(impulse_operator(&sde, &omega, &hist(&[(2, 0)])).is_err());
}

#[test]
fn reward_and_cost_examples() {
    let sde = basic(0.2);
    let (phi, c) = make_costs(&sde, 2);
    let path = PathBuffer::from_flat(vec![0.0, 0.5, 1.25], 1);
    assert_eq!(phi.reward(path.view(), &InterventionHistory::empty()), 1.25);
    assert_eq!(phi.reward(path.view(), &hist(&[(0, 0)])), 1.25 - 2.0);

    let mut flat = sde.clone();
    flat.running = ScalarFn::Constant { value: 1.0 };
    flat.terminal = ScalarFn::Constant { value: 0.0 };
    flat.horizon = 0.75;
    let (phi, _) = make_costs(&flat, 3);
    let path = PathBuffer::from_flat(vec![0.0, 0.5, 1.0, 0.5], 1);
    assert!((phi.reward(path.view(), &hist(&[(1, 0)])) - 0.75).abs() < 1e-15);

    // the cost reads the state before the current jump
    let mut scaled = sde.clone();
    scaled.cost = CostModel::Affine {
        base: 1.0,
        abs_state: 1.0,
        max: 10.0,
    };
    let (_, c2) = make_costs(&scaled, 2);
    assert_eq!(c.cost(path.view(), &hist(&[(1, 0)])), 1.0);
    let path = PathBuffer::from_flat(vec![0.0, 0.5, 1.25], 1);
    assert_eq!(c2.cost(path.view(), &hist(&[(1, 0)])), 1.5);
    assert_eq!(c2.cost(path.view(), &hist(&[(1, 0), (1, 0)])), 1.0 + 1.5);
}

#[test]
fn trinomial_kernel_examples() {
    // T = 1, n = 4: dt = 0.25
    let sde = basic(0.2);
    let p = build_lattice_problem(&sde, 4, 1.0).unwrap();
    let path = p.lattice.path(p.lattice.root());
    let set = p.kernels.kernel_set(p.lattice.root(), path.view(), &InterventionHistory::empty());
    let k = set.get(0).unwrap();
    assert!((k[0] - 0.5).abs() < 1e-15 && k[1].abs() < 1e-15 && (k[2] - 0.5).abs() < 1e-15);
    assert!((p.lattice.increment(0, 0)[0] - 0.1).abs() < 1e-15);

    let p = build_lattice_problem(&sde, 4, 2f64.sqrt()).unwrap();
    let set = p.kernels.kernel_set(p.lattice.root(), path.view(), &InterventionHistory::empty());
    let k = set.get(0).unwrap();
    assert!((k[0] - 0.25).abs() < 1e-12 && (k[1] - 0.5).abs() < 1e-12 && (k[2] - 0.25).abs() < 1e-12);
}

#[test]
fn kernels_match_moments_everywhere() {
    let mut sde = basic(0.3);
    sde.sigma = SigmaModel::Affine {
        base: 0.2,
        control: 1.0,
        state: 0.1,
        path_mean: 0.05,
        min: 0.1,
        max: 0.6,
    };
    sde.controls = vec![0.0, 0.1, 0.2];
    let n = 4;
    let p = build_lattice_problem(&sde, n, 1.3).unwrap();
    let dt = sde.dt(n);
    let h = p.lattice.increment(0, 0)[0];
    for depth in 0..n {
        for node in p.lattice.level(depth) {
            let path = p.lattice.path(node);
            for v in [InterventionHistory::empty(), hist(&[(0, 0)])] {
                let values = impulse_operator(
                    &sde,
                    &DiscretePath::from_continuous(path.view().as_slice().to_vec(), 1).unwrap(),
                    &v,
                )
                .unwrap()
                .scalar_values();
                let x = values[depth];
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let set = p.kernels.kernel_set(node, path.view(), &v);
                for (a_idx, &a) in sde.controls.iter().enumerate() {
                    let s = sde.sigma.eval(x, mean, a);
                    let (m, var) = kernel_moments(set.get(a_idx).unwrap(), h);
                    assert!(m.abs() <= 1e-12);
                    assert!((var - s * s * dt).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn cfl_violation_names_node_and_control() {
    let mut sde = basic(0.2);
    sde.sigma = SigmaModel::Control;
    sde.controls = vec![0.1, 0.2];
    let err = build_lattice_problem(&sde, 4, 0.8).unwrap_err();
    match err {
        crate::Error::InvalidDiscretization { node, control, probability } => {
            assert_eq!(node, crate::lattice::NodeId::ROOT);
            assert_eq!(control, 1);
            assert!(probability > 0.5);
        }
        other => panic!("unexpected {other}"),
    }
    // the smaller volatility alone stays within the bound
    sde.controls = vec![0.1];
    sde.sigma = SigmaModel::Constant { value: 0.1 };
    assert!(build_lattice_problem(&sde, 4, 1.0).is_ok());
}

#[test]
fn compiled_costs_pass_validation() {
    let mut sde = basic(0.2);
    sde.c0 = None;
    sde.terminal = ScalarFn::Clamp {
        inner: Box::new(ScalarFn::Abs {
            scale: 1.0,
            center: 0.0,
        }),
        low: 0.0,
        high: 2.0,
    };
    let p = build_lattice_problem(&sde, 3, 1.0).unwrap();
    assert!(p.c0 >= 1.0);
    let report = crate::lattice::validate_instance(&p, 2).unwrap();
    assert!(report.passed, "{:?}", report.violations);
}

#[test]
fn constant_running_reward_gives_horizon_exactly() {
    let mut sde = basic(0.4);
    sde.horizon = 2.0;
    sde.running = ScalarFn::Constant { value: 1.0 };
    sde.terminal = ScalarFn::Constant { value: 0.0 };
    let est = mc_evaluate(&sde, &WaitEverywhere, &FixedClassical(0), 8, 50, 3).unwrap();
    assert_eq!(est.mean, 2.0);
    assert_eq!(est.se, 0.0);
    assert_eq!(est.n_paths, 50);
}

#[test]
fn driftless_terminal_has_zero_mean() {
    let sde = basic(0.5);
    let est = mc_evaluate(&sde, &WaitEverywhere, &FixedClassical(0), 10, 4000, 9).unwrap();
    assert!(est.mean.abs() < 3.0 * est.se, "{est:?}");
    let single = euler_simulate(&sde, &WaitEverywhere, &FixedClassical(0), 10, 9, 17).unwrap();
    assert_eq!(single.cost, single.path.value(10, 0));
    assert!(mc_evaluate(&sde, &WaitEverywhere, &FixedClassical(0), 10, 1, 9).is_err());
}

#[test]
fn simulation_is_reproducible_across_pools() {
    let sde = basic(0.5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_evaluate(&sde, &WaitEverywhere, &FixedClassical(0), 6, 300, 21).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.se.to_bits(), b.se.to_bits());
}

#[test]
fn replayed_lattice_control_matches_tree_value() {
    // two-step, single-control instance where the lattice optimum intervenes
    // at the root: intervening gives E[X_T] - 2 + 1 = -1 against 0 for waiting
    let sde = basic(0.2);
    let n = 2;
    let p = build_lattice_problem(&sde, n, 1.0).unwrap();
    let field: ValueField = solve_truncated(&p, 1).unwrap();
    assert!((field.root_value().unwrap() + 1.0).abs() < 1e-12);
    let h = p.lattice.increment(0, 0)[0];
    let replay = LatticeReplay { field: &field, h };
    let tree = evaluate_pair(&p, &crate::extraction::extract_optimal_control(&field), &FixedKernel(0), 1).unwrap();
    let est = mc_evaluate(&sde, &replay, &FixedClassical(0), n, 20_000, 5).unwrap();
    assert!((est.mean - tree).abs() <= 3.0 * est.se + 1e-12, "{est:?} vs {tree}");
}

#[test]
fn stability_probe_identical_inputs_give_zero() {
    let mut sde = basic(0.3);
    sde.sigma = SigmaModel::Affine {
        base: 0.3,
        control: 0.0,
        state: 0.2,
        path_mean: 0.0,
        min: 0.1,
        max: 0.8,
    };
    let probe = StabilityProbe {
        steps: 8,
        start: 2,
        omega: vec![0.0, 0.1, 0.2],
        perturbation: vec![0.0; 3],
        v: hist(&[(3, 0)]),
        v_prime: hist(&[(3, 0)]),
        control: 0,
    };
    let rows = stability_probe(&sde, &probe, &[1.0, 0.5], 200, 4).unwrap();
    assert!(rows.iter().all(|r| r.mean == 0.0 && r.se == 0.0));
}

#[test]
fn stability_probe_propagates_initial_perturbation_linearly() {
    let sde = basic(0.3);
    let probe = StabilityProbe {
        steps: 6,
        start: 2,
        omega: vec![0.0, 0.1, 0.2],
        perturbation: vec![0.0, 0.4, -0.3],
        v: InterventionHistory::empty(),
        v_prime: InterventionHistory::empty(),
        control: 0,
    };
    let rows = stability_probe(&sde, &probe, &[1.0, 0.5, 0.25], 100, 4).unwrap();
    for r in &rows {
        assert!((r.mean - 0.4 * r.scale).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn stability_probe_rejects_mismatched_histories() {
    let sde = basic(0.3);
    let probe = StabilityProbe {
        steps: 6,
        start: 0,
        omega: vec![0.0],
        perturbation: vec![0.0],
        v: hist(&[(1, 0)]),
        v_prime: InterventionHistory::empty(),
        control: 0,
    };
    assert!(stability_probe(&sde, &probe, &[1.0], 10, 4).is_err());
}

#[test]
fn vector_states_simulate_componentwise() {
    let mut sde = basic(0.2);
    sde.dimension = 2;
    sde.impulses = vec![vec![-1.0, 1.0]];
    let est = mc_evaluate(&sde, &WaitEverywhere, &FixedClassical(0), 4, 100, 1).unwrap();
    assert!(est.mean.is_finite());
    assert!(build_lattice_problem(&sde, 4, 1.0).is_err());
}
