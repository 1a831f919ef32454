//! Structural invariants checked over randomized inputs.

use mtdc_core::analysis::{certify_avg_i_ii, hurwitz_verdict};
use mtdc_core::controllers::{assemble_closed_loop, optimal_dispatch, ControllerSpec};
use mtdc_core::grid::{laplacian_spectrum, CommEdge, CommGraph, GridTopology, Line};
use mtdc_core::random::{random_connected_grid, random_injections};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_from_seed(seed: u64) -> GridTopology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=8);
    random_connected_grid(&mut rng, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_rows_sum_to_zero_and_psd(seed in 0u64..10_000) {
        let grid = grid_from_seed(seed);
        let lap = grid.conductance_laplacian().unwrap();
        let scale = lap.amax();
        for i in 0..grid.bus_count() {
            prop_assert!(lap.row(i).sum().abs() < 1e-12 * scale);
        }
        let summary = laplacian_spectrum(&lap).unwrap();
        let radius = summary.eigenvalues.last().copied().unwrap();
        prop_assert!(summary.eigenvalues[0] > -1e-9 * radius);
        // connected grid: exactly one zero eigenvalue
        let zeros = summary
            .eigenvalues
            .iter()
            .filter(|l| l.abs() <= 1e-9 * radius)
            .count();
        prop_assert_eq!(zeros, 1);
    }

    #[test]
    fn harmonic_sum_invariant_under_relabeling(seed in 0u64..10_000) {
        let grid = grid_from_seed(seed);
        let n = grid.bus_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let relabeled = GridTopology::new(
            n,
            grid.lines()
                .iter()
                .map(|l| Line::new(perm[l.from], perm[l.to], l.resistance))
                .collect(),
            permute(grid.capacitance(), &perm),
            permute(grid.nominal_voltage(), &perm),
        );
        let s1 = laplacian_spectrum(&grid.conductance_laplacian().unwrap()).unwrap();
        let s2 = laplacian_spectrum(&relabeled.conductance_laplacian().unwrap()).unwrap();
        let scale = s1.harmonic_sum.abs().max(1.0);
        prop_assert!((s1.harmonic_sum - s2.harmonic_sum).abs() < 1e-9 * scale);
    }

    #[test]
    fn dispatch_matches_independent_kkt_solve(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=8usize);
        let i_inj = random_injections(&mut rng, n);
        let weights = DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0));
        let target = optimal_dispatch(&i_inj, &weights).unwrap();

        // Independent route: assemble and solve the stationarity system
        //   [F  1] [u]   [0       ]
        //   [1ᵀ 0] [λ] = [−Σ i_inj]
        // of min ½ uᵀFu s.t. 1ᵀ(u + i_inj) = 0.
        let mut kkt = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            kkt[(i, i)] = weights[i];
            kkt[(i, n)] = 1.0;
            kkt[(n, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = -i_inj.sum();
        let solution = kkt.lu().solve(&rhs).unwrap();
        for i in 0..n {
            let diff = (target.u_star[i] - solution[i]).abs();
            prop_assert!(diff <= 1e-9 * solution[i].abs().max(1.0));
        }
        // Balance identity
        let balance: f64 = target
            .u_star
            .iter()
            .zip(i_inj.iter())
            .map(|(u, i)| u + i)
            .sum();
        prop_assert!(balance.abs() <= 1e-9 * i_inj.amax().max(1.0));
    }

    #[test]
    fn hurwitz_verdict_invariant_under_state_permutation(seed in 0u64..5_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=5);
        let grid = random_connected_grid(&mut rng, n);
        let spec = ControllerSpec::AvgI {
            proportional: DVector::from_element(n, rng.random_range(1.0..20.0)),
            integral: {
                let mut v = DVector::zeros(n);
                v[0] = 5.0;
                v
            },
            consensus_gain: rng.random_range(0.1..5.0),
            comm: CommGraph::mirror_grid(&grid).unwrap(),
        };
        let sys = assemble_closed_loop(&grid, &spec, &DVector::zeros(n)).unwrap();
        let base = hurwitz_verdict(&sys).unwrap();

        let dim = sys.dim();
        let mut perm: Vec<usize> = (0..dim).collect();
        for i in (1..dim).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let p = DMatrix::from_fn(dim, dim, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        let mut permuted = sys.clone();
        permuted.a = &p * &sys.a * p.transpose();
        let transformed = hurwitz_verdict(&permuted).unwrap();
        prop_assert_eq!(base.verdict, transformed.verdict);
        // Eigensolver noise is proportional to the spectral radius.
        let radius = base
            .eigenvalues
            .iter()
            .map(|e| (e.re * e.re + e.im * e.im).sqrt())
            .fold(0.0f64, f64::max);
        prop_assert!((base.margin - transformed.margin).abs() < 1e-8 * radius);
    }

    #[test]
    fn cross_laplacian_condition_scale_consistent(seed in 0u64..5_000) {
        // Scaling every conductance and communication weight by α > 0 with
        // mirrored graphs scales the condition value by α² and cannot flip
        // its sign.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=6);
        let grid = random_connected_grid(&mut rng, n);
        let alpha = rng.random_range(0.2..5.0f64);
        let scaled = GridTopology::new(
            n,
            grid.lines()
                .iter()
                .map(|l| Line::new(l.from, l.to, l.resistance / alpha))
                .collect(),
            grid.capacitance().to_vec(),
            grid.nominal_voltage().to_vec(),
        );
        let spec_for = |g: &GridTopology| ControllerSpec::AvgI {
            proportional: DVector::from_element(n, 2.0),
            integral: {
                let mut v = DVector::zeros(n);
                v[0] = 1.0;
                v
            },
            consensus_gain: 1.0,
            comm: CommGraph::mirror_grid(g).unwrap(),
        };
        let base = certify_avg_i_ii(&grid, &spec_for(&grid)).unwrap();
        let scaled_report = certify_avg_i_ii(&scaled, &spec_for(&scaled)).unwrap();
        let cross = |r: &mtdc_core::CertificateReport| {
            r.conditions
                .iter()
                .find(|c| c.id == "cross-laplacian")
                .unwrap()
                .value
        };
        let v1 = cross(&base);
        let v2 = cross(&scaled_report);
        prop_assert!((v2 - alpha * alpha * v1).abs() <= 1e-7 * v2.abs().max(1.0));
    }

    #[test]
    fn avg_iii_input_never_parallel_to_zero_mode(seed in 0u64..5_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=6);
        let grid = random_connected_grid(&mut rng, n);
        let spec = ControllerSpec::AvgIII {
            proportional: DVector::from_element(n, rng.random_range(0.1..10.0)),
            integral: DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0)),
            consensus_gain: rng.random_range(0.1..10.0),
            reference_consensus_gain: rng.random_range(0.1..10.0),
            comm: CommGraph::mirror_grid(&grid).unwrap(),
        };
        let i_inj = random_injections(&mut rng, n);
        let sys = assemble_closed_loop(&grid, &spec, &i_inj).unwrap();
        let zero_mode = sys.structural_zero.as_ref().unwrap();
        let cosine = sys.b.dot(zero_mode) / sys.b.norm();
        prop_assert!(cosine.abs() < 1.0 - 1e-12);
    }
}

#[test]
fn three_bus_mismatch_example_is_stable_despite_inconclusive_certificate() {
    // The frozen adversarial instance from the unit suite: certificate
    // inconclusive, spectrum still Hurwitz.
    let grid = GridTopology::new(
        3,
        vec![Line::new(0, 1, 1.0), Line::new(1, 2, 1.0 / 8.0)],
        vec![1.0; 3],
        vec![1.0; 3],
    );
    let comm = CommGraph::new(
        3,
        vec![CommEdge::new(0, 1, 8.0), CommEdge::new(1, 2, 1.0)],
    )
    .unwrap();
    let spec = ControllerSpec::AvgI {
        proportional: DVector::from_element(3, 1.0),
        integral: {
            let mut v = DVector::zeros(3);
            v[0] = 1.0;
            v
        },
        consensus_gain: 1.0,
        comm,
    };
    let report = certify_avg_i_ii(&grid, &spec).unwrap();
    assert_eq!(report.verdict, mtdc_core::CertificateVerdict::Inconclusive);
    let sys = assemble_closed_loop(&grid, &spec, &DVector::zeros(3)).unwrap();
    let spectrum = hurwitz_verdict(&sys).unwrap();
    assert_eq!(spectrum.verdict, mtdc_core::SpectrumVerdict::Hurwitz);
}

fn permute(values: &[f64], perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (old, &new) in perm.iter().enumerate() {
        out[new] = values[old];
    }
    out
}
