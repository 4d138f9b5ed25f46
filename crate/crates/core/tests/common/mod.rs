#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use tvmdp::harness::{Scenario, ScenarioConfig};
use tvmdp::par::Workers;
use tvmdp::{Grid, Heading, Policy, StateId, TabularDynamics, TimeGrid, TvmdpModel};

/// A hand-built chain: `(from, to, prob, h)` edges under action E.
pub struct Fixture {
    pub name: &'static str,
    pub model: TvmdpModel,
    pub policy: Policy,
    pub goal: usize,
    pub edges: Vec<(usize, usize, f64, f64)>,
}

fn chain(
    name: &'static str,
    states: usize,
    goal: usize,
    edges: &[(usize, usize, f64, f64)],
) -> Fixture {
    let mut d = TabularDynamics::new(states);
    for &(a, b, p, h) in edges {
        d.edge(StateId(a), Heading::E, StateId(b), p, h);
    }
    let model = TvmdpModel::builder(
        Grid::new(1, states).unwrap(),
        TimeGrid::uniform(40, 1.0).unwrap(),
        Arc::new(d),
    )
    .goal(StateId(goal))
    .build()
    .unwrap();
    Fixture {
        name,
        model,
        policy: Policy::spatial(vec![Heading::E; states]),
        goal,
        edges: edges.to_vec(),
    }
}

/// `f` with every travel time multiplied by `c`.
pub fn scaled_fixture(f: &Fixture, c: f64) -> Fixture {
    let edges: Vec<_> = f
        .edges
        .iter()
        .map(|&(a, b, p, h)| (a, b, p, c * h))
        .collect();
    chain(f.name, f.model.state_count(), f.goal, &edges)
}

/// Small time-invariant chains, all starting in state 0.
pub fn moment_fixtures() -> Vec<Fixture> {
    vec![
        chain("two_state", 2, 1, &[(0, 1, 1.0, 1.0)]),
        chain(
            "two_routes",
            4,
            3,
            &[
                (0, 3, 0.5, 1.0),
                (0, 1, 0.5, 1.0),
                (1, 2, 1.0, 1.0),
                (2, 3, 1.0, 1.0),
            ],
        ),
        chain(
            "bounce_back",
            3,
            2,
            &[(0, 1, 1.0, 2.0), (1, 2, 0.5, 1.0), (1, 0, 0.5, 1.0)],
        ),
        chain(
            "uneven_times",
            4,
            3,
            &[
                (0, 1, 0.6, 0.5),
                (0, 2, 0.4, 2.5),
                (1, 2, 0.3, 1.5),
                (1, 3, 0.7, 3.0),
                (2, 0, 0.2, 1.0),
                (2, 1, 0.5, 0.7),
                (2, 3, 0.3, 1.2),
            ],
        ),
        chain(
            "six_state_mesh",
            6,
            5,
            &[
                (0, 1, 0.5, 1.0),
                (0, 2, 0.5, 2.0),
                (1, 0, 0.2, 1.0),
                (1, 3, 0.8, 1.5),
                (2, 3, 0.4, 0.5),
                (2, 4, 0.6, 1.0),
                (3, 1, 0.1, 1.0),
                (3, 4, 0.3, 2.0),
                (3, 5, 0.6, 1.0),
                (4, 2, 0.25, 1.0),
                (4, 5, 0.75, 0.8),
            ],
        ),
    ]
}

pub fn scenario(toml: &str) -> Scenario {
    let cfg = ScenarioConfig::from_toml(toml, Path::new("inline.toml")).unwrap();
    Scenario::build(cfg, Path::new("."), &Workers::serial()).unwrap()
}

/// Grid scenario text with the given dimensions, field table and task.
pub fn scenario_toml(
    name: &str,
    rows: usize,
    cols: usize,
    slots: usize,
    field: &str,
    task: &str,
) -> String {
    format!(
        r#"
name = "{name}"
discount = 0.95

[grid]
rows = {rows}
cols = {cols}

[time]
slots = {slots}

[field]
{field}

[vehicle]
max_speed = 4.0

[local_times]
mode = "unit"

[task]
{task}
"#
    )
}

/// 5x5 grid under a steady eastward current.
pub fn steady_5x5() -> Scenario {
    scenario(&scenario_toml(
        "steady5",
        5,
        5,
        30,
        "kind = \"uniform\"\nvx = 1.5\nvy = 0.5",
        "start = [0, 0]\ngoal = [4, 4]\nobstacles = [[2, 2]]",
    ))
}

/// 3x3 grid under a steady current.
pub fn steady_3x3() -> Scenario {
    scenario(&scenario_toml(
        "steady3",
        3,
        3,
        12,
        "kind = \"uniform\"\nvx = -1.0\nvy = 2.0",
        "start = [0, 0]\ngoal = [2, 2]",
    ))
}

/// 4x4 grid, 12 slots, under a rotating current.
pub fn spinning_4x4() -> Scenario {
    scenario(&scenario_toml(
        "spin4",
        4,
        4,
        12,
        "kind = \"self_spinning\"\nmagnitude = 3.0\nomega = 0.8",
        "start = [0, 0]\ngoal = [3, 3]\nobstacles = [[1, 2]]",
    ))
}

/// Value iteration on states only, with the law read at slot 0. Iterates
/// to `1e-13` and breaks ties toward the lowest heading index.
pub fn classic_vi(model: &TvmdpModel) -> (Vec<f64>, Vec<Option<Heading>>) {
    let n = model.state_count();
    let gamma = model.discount();
    let mut v: Vec<f64> = (0..n)
        .map(|s| model.terminal_value(StateId(s)).unwrap_or(0.0))
        .collect();
    let q = |v: &[f64], s: usize, a: Heading| -> f64 {
        let law = model.transition_law(StateId(s), 0, a).unwrap();
        model.reward(StateId(s), 0, a)
            + gamma * law.iter().map(|t| t.prob * v[t.state.0]).sum::<f64>()
    };
    loop {
        let mut next = v.clone();
        for s in 0..n {
            if model.is_terminal(StateId(s)) {
                continue;
            }
            next[s] = model
                .feasible_actions(StateId(s), 0)
                .iter()
                .map(|a| q(&v, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < 1e-13 {
            break;
        }
    }
    let policy = (0..n)
        .map(|s| {
            if model.is_terminal(StateId(s)) {
                return None;
            }
            let acts: Vec<(Heading, f64)> = model
                .feasible_actions(StateId(s), 0)
                .iter()
                .map(|a| (a, q(&v, s, a)))
                .collect();
            let best = acts.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            acts.iter().find(|x| x.1 >= best - 1e-9).map(|x| x.0)
        })
        .collect();
    (v, policy)
}

/// Sample moments of first-visit times, from rollouts that stop at the
/// goal. Returns `(count, mean, variance, fourth central moment)` per state.
pub fn first_visit_moments(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    n: usize,
    seed: u64,
) -> Vec<(usize, f64, f64, f64)> {
    let runs =
        tvmdp::sim::rollouts(model, policy, s0, seed, n, 100_000, &Workers::serial()).unwrap();
    let states = model.state_count();
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); states];
    for r in &runs {
        let mut seen = vec![false; states];
        let mut t = 0.0;
        let visits = r.steps.iter().map(|s| (s.state, s.travel_time));
        for (s, h) in visits.chain(std::iter::once((r.final_state, 0.0))) {
            if !seen[s.0] {
                seen[s.0] = true;
                samples[s.0].push(t);
            }
            t += h;
        }
    }
    samples
        .iter()
        .map(|xs| {
            let c = xs.len();
            if c < 2 {
                return (c, xs.first().copied().unwrap_or(f64::NAN), 0.0, 0.0);
            }
            let m = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c as f64 - 1.0);
            let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / c as f64;
            (c, m, var, m4)
        })
        .collect()
}
