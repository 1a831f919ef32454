//! Integrator-versus-algebra cross checks.

use mtdc_core::analysis::{hurwitz_verdict, voltage_difference_bound};
use mtdc_core::controllers::{assemble_closed_loop, optimal_dispatch, ControllerSpec, StateBlock};
use mtdc_core::grid::{CommGraph, GridTopology, Line};
use mtdc_core::random::{random_connected_grid, random_injections};
use mtdc_core::sim::{simulate, solve_equilibrium, SimScenario};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn four_bus_ring() -> GridTopology {
    let lines = vec![
        Line::new(0, 1, 3.7),
        Line::new(0, 2, 3.7),
        Line::new(1, 3, 3.7),
        Line::new(2, 3, 3.7),
    ];
    GridTopology::new(4, lines, vec![57e-6; 4], vec![100e3; 4])
}

fn leader_integral(n: usize, gain: f64) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[0] = gain;
    v
}

fn table_spec(variant: &str, grid: &GridTopology) -> ControllerSpec {
    let comm = CommGraph::mirror_grid(grid).unwrap();
    match variant {
        "droop" => ControllerSpec::Droop {
            proportional: DVector::from_element(4, 10.0),
        },
        "avg1" => ControllerSpec::AvgI {
            proportional: DVector::from_element(4, 10.0),
            integral: leader_integral(4, 10.0),
            consensus_gain: 20.0,
            comm,
        },
        "avg2" => ControllerSpec::AvgII {
            proportional: DVector::from_element(4, 10.0),
            integral: 5.0,
            consensus_gain: 15.0,
            comm: comm.assume_all_to_all(),
        },
        "avg3" => ControllerSpec::AvgIII {
            proportional: DVector::from_element(4, 0.5),
            integral: DVector::from_element(4, 2.5),
            consensus_gain: 3.0,
            reference_consensus_gain: 2.0,
            comm,
        },
        other => panic!("unknown variant {other}"),
    }
}

const PRE_STEP: [f64; 4] = [300.0, 200.0, -100.0, -400.0];
const POST_STEP: [f64; 4] = [300.0, 200.0, -300.0, -400.0];

#[test]
fn rk4_order_matches_fourth_order_convergence() {
    // Smooth delay-free case with O(1) rates; the reference run at dt/64 is
    // effectively exact relative to the coarse errors.
    let grid = GridTopology::new(
        2,
        vec![Line::new(0, 1, 1.0)],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
    );
    let spec = ControllerSpec::Droop {
        proportional: DVector::from_element(2, 1.0),
    };
    let i_inj = DVector::from_vec(vec![1.0, -1.0]);
    let sys = assemble_closed_loop(&grid, &spec, &i_inj).unwrap();
    let v0 = DVector::from_vec(vec![3.0, -1.0]);
    let endpoint = |dt: f64| {
        let scenario = SimScenario::new(i_inj.clone(), 1.0, dt, 0.0)
            .with_initial_voltage(v0.clone());
        simulate(&sys, &scenario).unwrap().final_state()
    };
    let reference = endpoint(0.05 / 64.0);
    let coarse = (endpoint(0.05) - &reference).amax();
    let fine = (endpoint(0.025) - &reference).amax();
    let ratio = coarse / fine;
    assert!(
        (12.0..=20.0).contains(&ratio),
        "error ratio {ratio} outside [12, 20] (coarse {coarse:.3e}, fine {fine:.3e})"
    );
}

#[test]
fn delay_path_with_empty_remote_is_bitwise_identical() {
    let grid = four_bus_ring();
    let spec = table_spec("droop", &grid);
    let i_inj = DVector::from_column_slice(&PRE_STEP);
    let sys = assemble_closed_loop(&grid, &spec, &i_inj).unwrap();
    assert_eq!(sys.a_remote.amax(), 0.0);
    let v0 = DVector::from_element(4, 99_000.0);
    let free = SimScenario::new(i_inj.clone(), 0.02, 1e-5, 0.0)
        .with_initial_voltage(v0.clone());
    let delayed = SimScenario::new(i_inj, 0.02, 1e-5, 5e-3).with_initial_voltage(v0);
    let a = simulate(&sys, &free).unwrap();
    let b = simulate(&sys, &delayed).unwrap();
    assert_eq!(a.states.as_slice(), b.states.as_slice());
    assert_eq!(a.u.as_slice(), b.u.as_slice());
}

#[test]
fn equilibria_are_fixed_points_over_ten_thousand_steps() {
    let grid = four_bus_ring();
    let i_inj = DVector::from_column_slice(&POST_STEP);
    for variant in ["droop", "avg1", "avg2", "avg3"] {
        let spec = table_spec(variant, &grid);
        let sys = assemble_closed_loop(&grid, &spec, &i_inj).unwrap();
        let equilibrium = solve_equilibrium(&sys, None).unwrap();
        // Default initial state is exactly this equilibrium.
        let scenario = SimScenario::new(i_inj.clone(), 0.1, 1e-5, 0.0);
        let traj = simulate(&sys, &scenario).unwrap();
        let drift = (traj.final_state() - &equilibrium).amax() / equilibrium.amax();
        assert!(drift < 1e-6, "{variant}: drift {drift:.3e} after 10k steps");
    }
}

#[test]
fn converged_endpoint_matches_equilibrium_avg2() {
    let grid = four_bus_ring();
    let spec = table_spec("avg2", &grid);
    let pre = DVector::from_column_slice(&PRE_STEP);
    let post = DVector::from_column_slice(&POST_STEP);
    let sys = assemble_closed_loop(&grid, &spec, &post).unwrap();
    let report = hurwitz_verdict(&sys).unwrap();
    assert_eq!(report.verdict, mtdc_core::SpectrumVerdict::Hurwitz);
    let scenario = SimScenario::new(pre, 24.0, 1e-5, 0.0)
        .with_event(0.0, post.clone())
        .with_record_stride(100);
    let traj = simulate(&sys, &scenario).unwrap();
    let equilibrium = solve_equilibrium(&sys, None).unwrap();
    let relative = (traj.final_state() - &equilibrium).amax() / equilibrium.amax();
    assert!(relative < 1e-6, "relative gap {relative:.3e}");
}

#[test]
fn converged_endpoint_matches_anchored_equilibrium_avg3() {
    let grid = four_bus_ring();
    let spec = table_spec("avg3", &grid);
    let pre = DVector::from_column_slice(&PRE_STEP);
    let post = DVector::from_column_slice(&POST_STEP);
    let sys = assemble_closed_loop(&grid, &spec, &post).unwrap();

    // Start from the pre-step equilibrium, as the experiment protocol does.
    let pre_sys = assemble_closed_loop(&grid, &spec, &pre).unwrap();
    let x0 = solve_equilibrium(&pre_sys, None).unwrap();
    let layout = &sys.layout;
    let v0 = layout.voltage(&x0);

    let scenario = SimScenario::new(pre.clone(), 32.0, 1e-5, 0.0)
        .with_event(0.0, post.clone())
        .with_record_stride(100);
    let traj = simulate(&pre_sys, &scenario).unwrap();
    let endpoint = traj.final_state();

    // The Σ V̂ conserved quantity picks the family member the run converges to.
    let anchored = solve_equilibrium(&sys, Some(&x0)).unwrap();
    let relative = (&endpoint - &anchored).amax() / anchored.amax();
    assert!(relative < 1e-6, "relative gap {relative:.3e}");

    // The free mode does not touch voltages: both solutions give the same V.
    let unanchored = solve_equilibrium(&sys, None).unwrap();
    let dv = (layout.voltage(&anchored) - layout.voltage(&unanchored)).amax();
    assert!(dv < 1e-9 * v0.amax());
}

#[test]
fn avg1_equilibrium_pins_leader_bus_to_nominal() {
    let grid = four_bus_ring();
    let spec = table_spec("avg1", &grid);
    let post = DVector::from_column_slice(&POST_STEP);
    let sys = assemble_closed_loop(&grid, &spec, &post).unwrap();
    let eq = solve_equilibrium(&sys, None).unwrap();
    let v = sys.layout.voltage(&eq);
    assert!((v[0] - 100e3).abs() < 1e-6, "V1 = {}", v[0]);
    let u = sys.output(&eq);
    for i in 0..4 {
        assert!((u[i] - 50.0).abs() < 1e-7, "u[{i}] = {}", u[i]);
    }
}

#[test]
fn avg3_equilibrium_balances_voltage_offsets() {
    let grid = four_bus_ring();
    let spec = table_spec("avg3", &grid);
    let post = DVector::from_column_slice(&POST_STEP);
    let sys = assemble_closed_loop(&grid, &spec, &post).unwrap();
    let eq = solve_equilibrium(&sys, None).unwrap();
    let v = sys.layout.voltage(&eq);
    let offset_sum: f64 = (0..4).map(|i| 100e3 - v[i]).sum();
    assert!(offset_sum.abs() < 1e-6, "offset sum {offset_sum:.3e}");
    let u = sys.output(&eq);
    for i in 0..4 {
        assert!((u[i] - 50.0).abs() < 1e-7, "u[{i}] = {}", u[i]);
    }
}

#[test]
fn superposition_of_linear_runs() {
    // With zero nominal voltage the droop loop is linear in (x0, injections):
    // the response to summed inputs is the sum of the responses.
    let grid = GridTopology::new(
        3,
        vec![Line::new(0, 1, 2.0), Line::new(1, 2, 4.0)],
        vec![1.0; 3],
        vec![0.0; 3],
    );
    let spec = ControllerSpec::Droop {
        proportional: DVector::from_element(3, 1.0),
    };
    let i1 = DVector::from_vec(vec![1.0, -0.5, 0.25]);
    let i2 = DVector::from_vec(vec![-2.0, 1.0, 3.0]);
    let x1 = DVector::from_vec(vec![0.5, -0.25, 1.0]);
    let x2 = DVector::from_vec(vec![-1.0, 2.0, 0.0]);
    let sys = assemble_closed_loop(&grid, &spec, &i1).unwrap();
    let run = |i_inj: &DVector<f64>, v0: &DVector<f64>| {
        let scenario = SimScenario::new(i_inj.clone(), 0.5, 1e-3, 0.0)
            .with_initial_voltage(v0.clone());
        simulate(&sys, &scenario).unwrap()
    };
    let a = run(&i1, &x1);
    let b = run(&i2, &x2);
    let sum = run(&(&i1 + &i2), &(&x1 + &x2));
    let mut worst: f64 = 0.0;
    for r in 0..sum.states.nrows() {
        for c in 0..sum.states.ncols() {
            let combined = a.states[(r, c)] + b.states[(r, c)];
            worst = worst.max((sum.states[(r, c)] - combined).abs());
        }
    }
    let scale = sum.states.amax().max(1.0);
    assert!(worst < 1e-9 * scale, "superposition defect {worst:.3e}");
}

#[test]
fn lemma_bound_holds_on_random_equilibria() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let n = rng.random_range(3..=8);
        let grid = random_connected_grid(&mut rng, n);
        let i_inj = random_injections(&mut rng, n);
        let spec = ControllerSpec::Droop {
            proportional: DVector::from_fn(n, |_, _| rng.random_range(0.5..20.0)),
        };
        let sys = assemble_closed_loop(&grid, &spec, &i_inj).unwrap();
        let eq = solve_equilibrium(&sys, None).unwrap();
        let v = sys.layout.voltage(&eq);
        let u = sys.output(&eq);
        let i_tot = &u + &i_inj;
        let bound = voltage_difference_bound(&grid, &i_tot).unwrap();
        let mut spread: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                spread = spread.max((v[i] - v[j]).abs());
            }
        }
        assert!(
            spread <= bound * (1.0 + 1e-9),
            "spread {spread} exceeds bound {bound}"
        );
    }
}

#[test]
fn steady_state_metrics_on_constant_run() {
    let grid = four_bus_ring();
    let spec = table_spec("avg1", &grid);
    let i_inj = DVector::from_column_slice(&PRE_STEP);
    let sys = assemble_closed_loop(&grid, &spec, &i_inj).unwrap();
    let scenario = SimScenario::new(i_inj.clone(), 0.05, 1e-5, 0.0);
    let traj = simulate(&sys, &scenario).unwrap();
    let metrics = mtdc_core::sim::steady_state_metrics(
        &traj,
        &grid,
        &i_inj,
        &DVector::from_element(4, 0.1),
        &DVector::from_element(4, 1.0),
    )
    .unwrap();
    // Balanced injections from the equilibrium: everything stays at zero.
    assert!(metrics.u_distance_inf < 1e-9);
    assert!(metrics.injection_balance.abs() < 1e-9);
    assert!(metrics.u_star.iter().all(|&u| u == 0.0));
    assert!(metrics.max_pairwise_voltage_spread < 1295.1);
}

#[test]
fn dispatch_tracking_from_lemma_formula_matches_sim_asymptote() {
    // Sanity anchor for the step experiment at coarse accuracy: a short
    // delay-free run already lands near the dispatch target.
    let grid = four_bus_ring();
    let spec = table_spec("avg2", &grid);
    let pre = DVector::from_column_slice(&PRE_STEP);
    let post = DVector::from_column_slice(&POST_STEP);
    let sys = assemble_closed_loop(&grid, &spec, &post).unwrap();
    let scenario = SimScenario::new(pre, 16.0, 1e-5, 0.0)
        .with_event(0.0, post.clone())
        .with_record_stride(100);
    let traj = simulate(&sys, &scenario).unwrap();
    let dispatch = optimal_dispatch(&post, &DVector::from_element(4, 0.1)).unwrap();
    let u_final = sys.output(&traj.final_state());
    for i in 0..4 {
        assert!(
            (u_final[i] - dispatch.u_star[i]).abs() < 0.5,
            "u[{i}] = {} vs {}",
            u_final[i],
            dispatch.u_star[i]
        );
    }
    assert!(traj
        .layout
        .offset(StateBlock::VHat)
        .is_some());
}
