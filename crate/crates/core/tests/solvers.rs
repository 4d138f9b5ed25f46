mod common;

use std::sync::Arc;

use tvmdp::par::Workers;
use tvmdp::ppt::build_reachable_space;
use tvmdp::solvers::{
    map_action, reconstruct, solve, solve_expected_ppt_vi, solve_full_st_vi, SolverConfig,
    SolverKind,
};
use tvmdp::{Grid, Heading, Policy, RewardScheme, StateId, TabularDynamics, TimeGrid, TvmdpModel};

fn two_state_chain() -> TvmdpModel {
    let mut d = TabularDynamics::new(2);
    d.edge(StateId(0), Heading::E, StateId(1), 1.0, 1.0);
    TvmdpModel::builder(
        Grid::new(1, 2).unwrap(),
        TimeGrid::uniform(5, 1.0).unwrap(),
        Arc::new(d),
    )
    .goal(StateId(1))
    .build()
    .unwrap()
}

#[test]
fn full_vi_two_state_chain_value() {
    let sol = solve_full_st_vi(
        &two_state_chain(),
        &SolverConfig::default(),
        &Workers::serial(),
    )
    .unwrap();
    assert!(sol.converged);
    for slot in 0..5 {
        assert!((sol.values.get(StateId(0), slot) - 0.85).abs() < 1e-12);
    }
}

#[test]
fn zero_rewards_give_zero_values() {
    let mut d = TabularDynamics::new(3);
    d.edge(StateId(0), Heading::E, StateId(1), 0.5, 1.0);
    d.edge(StateId(0), Heading::E, StateId(2), 0.5, 1.0);
    d.edge(StateId(1), Heading::E, StateId(0), 1.0, 1.0);
    d.edge(StateId(1), Heading::W, StateId(2), 1.0, 2.0);
    let zero = RewardScheme {
        step: 0.0,
        goal: 0.0,
        obstacle: 0.0,
    };
    let m = TvmdpModel::builder(
        Grid::new(1, 3).unwrap(),
        TimeGrid::uniform(6, 1.0).unwrap(),
        Arc::new(d),
    )
    .goal(StateId(2))
    .rewards(zero)
    .build()
    .unwrap();
    let sol = solve_full_st_vi(&m, &SolverConfig::default(), &Workers::serial()).unwrap();
    for s in 0..3 {
        for slot in 0..6 {
            assert_eq!(sol.values.get(StateId(s), slot), 0.0);
        }
    }
}

#[test]
fn full_vi_on_a_steady_3x3_matches_stationary_vi() {
    let scn = common::steady_3x3();
    let (v, pi) = common::classic_vi(&scn.model);
    let cfg = SolverConfig {
        tol: 1e-12,
        ..SolverConfig::default()
    };
    let sol = solve_full_st_vi(&scn.model, &cfg, &Workers::serial()).unwrap();
    assert!(sol.converged);
    for s in 0..scn.model.state_count() {
        for slot in 0..scn.model.slot_count() {
            assert!(
                (sol.values.get(StateId(s), slot) - v[s]).abs() < 1e-9,
                "value at ({s}, {slot})"
            );
            if let Some(a) = pi[s] {
                assert_eq!(
                    sol.policy.action(StateId(s), slot),
                    a,
                    "action at ({s}, {slot})"
                );
            }
        }
    }
}

/// Reference values and actions of the steady 3x3 grid, state by state.
#[test]
fn steady_3x3_golden_values() {
    let scn = common::steady_3x3();
    let sol = solve_full_st_vi(
        &scn.model,
        &SolverConfig {
            tol: 1e-12,
            ..SolverConfig::default()
        },
        &Workers::serial(),
    )
    .unwrap();
    let (v, pi) = common::classic_vi(&scn.model);
    let got: Vec<f64> = (0..9).map(|s| sol.values.get(StateId(s), 0)).collect();
    for s in 0..9 {
        assert!((got[s] - v[s]).abs() < 1e-9);
    }
    assert_eq!(got[8], 1.0);
    // Every non-goal value lies between one step to the goal and the cost
    // of circling forever.
    for (s, x) in got.iter().enumerate().take(8) {
        assert!(*x < 0.85 + 1e-12 && *x > -2.0, "state {s}: {x}");
    }
    assert!(pi[8].is_none());
}

#[test]
fn full_vi_sweeps_contract_monotonically() {
    let scn = common::spinning_4x4();
    let mut last = f64::INFINITY;
    for k in 1..=40 {
        let cfg = SolverConfig {
            tol: 1e-300,
            max_sweeps: k,
            ..SolverConfig::default()
        };
        let sol = solve_full_st_vi(&scn.model, &cfg, &Workers::serial()).unwrap();
        assert!(!sol.converged);
        let delta = sol.iterations[0].delta;
        assert!(
            delta <= last * (1.0 + 1e-12),
            "sweep {k}: {delta} after {last}"
        );
        last = delta;
    }
}

#[test]
fn sweep_cap_reports_non_convergence() {
    let scn = common::spinning_4x4();
    let cfg = SolverConfig {
        max_sweeps: 2,
        ..SolverConfig::default()
    };
    let sol = solve_full_st_vi(&scn.model, &cfg, &Workers::serial()).unwrap();
    assert!(!sol.converged);
    assert_eq!(sol.iterations[0].sweeps, 2);
}

#[test]
fn expected_time_vi_on_a_chain_moves_toward_the_goal() {
    let m = two_state_chain();
    let sol = solve_expected_ppt_vi(&m, StateId(0), &SolverConfig::default(), &Workers::serial())
        .unwrap();
    assert_eq!(sol.policy.action(StateId(0), 0), Heading::E);
    assert!((sol.mu[1] - 1.0).abs() < 1e-12);
}

#[test]
fn expected_time_vi_matches_stationary_vi_when_time_is_irrelevant() {
    for scn in [common::steady_3x3(), common::steady_5x5()] {
        let (_, pi) = common::classic_vi(&scn.model);
        let sol = solve_expected_ppt_vi(
            &scn.model,
            scn.start,
            &SolverConfig::default(),
            &Workers::serial(),
        )
        .unwrap();
        for (s, a) in pi.iter().enumerate() {
            if let Some(a) = a {
                assert_eq!(
                    sol.policy.action(StateId(s), 0),
                    *a,
                    "{} state {s}",
                    scn.config.name
                );
            }
        }
    }
}

/// Full and expected-time VI pick the stationary argmax at every pair of
/// a time-invariant model.
#[test]
fn unrestricted_solvers_coincide_on_time_invariant_models() {
    for scn in [common::steady_3x3(), common::steady_5x5()] {
        let (_, pi) = common::classic_vi(&scn.model);
        for kind in [SolverKind::FullSt, SolverKind::Alg1] {
            let sol = scn.solve(kind, &Workers::serial()).unwrap();
            for (s, a) in pi.iter().enumerate() {
                let Some(a) = a else { continue };
                for slot in 0..scn.model.slot_count() {
                    assert_eq!(
                        sol.policy.action(StateId(s), slot),
                        *a,
                        "{} {kind} at ({s}, {slot})",
                        scn.config.name
                    );
                }
            }
        }
    }
}

#[test]
fn solvers_are_deterministic_and_worker_independent() {
    let scn = common::spinning_4x4();
    for kind in SolverKind::ALL {
        let a = solve(
            &scn.model,
            kind,
            scn.start,
            &scn.config.solver,
            &Workers::serial(),
        )
        .unwrap();
        let b = solve(
            &scn.model,
            kind,
            scn.start,
            &scn.config.solver,
            &Workers::new(3),
        )
        .unwrap();
        assert_eq!(a.policy, b.policy, "{kind}");
        assert_eq!(a.values, b.values, "{kind}");
    }
}

#[test]
fn reachable_solvers_report_space_sizes() {
    let scn = common::spinning_4x4();
    let full = scn.model.state_count() * scn.model.slot_count();
    for kind in [SolverKind::Alg2, SolverKind::NonIter] {
        let sol = scn.solve(kind, &Workers::serial()).unwrap();
        assert!(!sol.iterations.is_empty());
        for it in &sol.iterations {
            let size = it.reachable_size.unwrap();
            assert!(size >= 1 && size <= full);
            assert!(it.cumulative_visited.unwrap() >= size);
        }
        let policy: &Policy = &sol.policy;
        policy.check_feasible(&scn.model).unwrap();
    }
}

/// A five-state line whose start moves to three successors one slot later.
fn fan_out() -> TvmdpModel {
    let mut d = TabularDynamics::new(5);
    d.edge(StateId(0), Heading::E, StateId(1), 0.3, 1.0);
    d.edge(StateId(0), Heading::E, StateId(2), 0.5, 1.0);
    d.edge(StateId(0), Heading::E, StateId(3), 0.2, 1.0);
    for s in 1..4 {
        d.edge(StateId(s), Heading::E, StateId(4), 1.0, 1.0);
    }
    TvmdpModel::builder(
        Grid::new(1, 5).unwrap(),
        TimeGrid::uniform(10, 1.0).unwrap(),
        Arc::new(d),
    )
    .goal(StateId(4))
    .build()
    .unwrap()
}

fn prob_at(row: &[tvmdp::Transition], s: usize, slot: usize) -> f64 {
    row.iter()
        .filter(|t| t.state.0 == s && t.slot == slot)
        .map(|t| t.prob)
        .sum()
}

#[test]
fn reconstruction_keeps_rows_that_stay_inside() {
    let m = fan_out();
    let rs = build_reachable_space(
        &[0.0, 1.0, 1.0, 1.0, 2.0],
        &[0.0, 1.0, 1.0, 1.0, 1.0],
        &[false; 5],
        2.0,
        m.time_grid(),
    )
    .unwrap();
    let law = reconstruct(&m, &rs, &Workers::serial()).unwrap();
    let row = law.row(StateId(0), 0, Heading::E).unwrap();
    assert_eq!(
        row,
        &m.transition_law(StateId(0), 0, Heading::E).unwrap()[..]
    );
}

#[test]
fn reconstruction_lumps_early_mass_onto_the_window_start() {
    let m = fan_out();
    // State 1's window is slot 3 only; everything else reaches slot 1.
    let rs = build_reachable_space(
        &[0.0, 3.0, 1.0, 1.0, 2.0],
        &[0.0, 0.0, 0.0, 0.0, 0.0],
        &[false; 5],
        2.0,
        m.time_grid(),
    )
    .unwrap();
    let law = reconstruct(&m, &rs, &Workers::serial()).unwrap();
    let row = law.row(StateId(0), 0, Heading::E).unwrap();
    assert!((prob_at(row, 1, 3) - 0.3).abs() < 1e-12);
    assert!((prob_at(row, 1, 1)).abs() < 1e-12);
}

#[test]
fn reconstruction_mixed_case() {
    let m = fan_out();
    // Successor 1 arrives before its window, 2 inside it, 3 after it.
    let rs = build_reachable_space(
        &[0.0, 4.0, 1.0, 0.0, 2.0],
        &[0.0, 1.0, 0.0, 0.0, 0.0],
        &[false; 5],
        2.0,
        m.time_grid(),
    )
    .unwrap();
    assert_eq!(rs.window(StateId(1)), Some((2, 6)));
    assert_eq!(rs.window(StateId(3)), Some((0, 0)));
    let law = reconstruct(&m, &rs, &Workers::serial()).unwrap();
    let row = law.row(StateId(0), 0, Heading::E).unwrap();
    assert!((prob_at(row, 1, 2) - 0.375).abs() < 1e-12);
    assert!((prob_at(row, 2, 1) - 0.625).abs() < 1e-12);
    assert_eq!(row.len(), 2);
}

#[test]
fn reconstruction_redirects_rows_that_keep_nothing() {
    let m = fan_out();
    // Every successor's window closes before slot 1.
    let rs = build_reachable_space(
        &[0.0, 0.0, 0.0, 0.0, 0.0],
        &[0.0; 5],
        &[false; 5],
        2.0,
        m.time_grid(),
    )
    .unwrap();
    let law = reconstruct(&m, &rs, &Workers::serial()).unwrap();
    let row = law.row(StateId(0), 0, Heading::E).unwrap();
    let total: f64 = row.iter().map(|t| t.prob).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for t in row {
        assert!(rs.contains(t.state, t.slot));
    }
    assert!(law.redirected_rows() >= 1);
}

#[test]
fn mapping_copies_the_only_member_at_the_slot() {
    let grid = Grid::new(3, 3).unwrap();
    let tg = TimeGrid::uniform(4, 1.0).unwrap();
    let mut mu = vec![50.0; 9];
    mu[4] = 2.0;
    let mut unreachable = vec![true; 9];
    unreachable[4] = false;
    let rs = build_reachable_space(&mu, &[0.0; 9], &unreachable, 2.0, &tg).unwrap();
    let mut policy = Policy::spatio_temporal(9, 4, Heading::N);
    policy.set(StateId(4), 2, Heading::SW);
    assert_eq!(
        map_action(&policy, &rs, &grid, StateId(0), 2),
        Some(Heading::SW)
    );
    // Slot 1 has no members: the nearest slot with members is used.
    assert_eq!(
        map_action(&policy, &rs, &grid, StateId(0), 1),
        Some(Heading::SW)
    );
}

#[test]
fn mapping_breaks_distance_ties_by_state_index() {
    let grid = Grid::new(1, 3).unwrap();
    let tg = TimeGrid::uniform(2, 1.0).unwrap();
    let rs = build_reachable_space(&[0.0, 9.0, 0.0], &[0.0; 3], &[false, true, false], 2.0, &tg)
        .unwrap();
    let mut policy = Policy::spatio_temporal(3, 2, Heading::N);
    policy.set(StateId(0), 0, Heading::E);
    policy.set(StateId(2), 0, Heading::W);
    assert_eq!(
        map_action(&policy, &rs, &grid, StateId(1), 0),
        Some(Heading::E)
    );
}
