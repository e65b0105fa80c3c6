//! Geometry facts about the scripted baselines: straight-down futility in
//! scenario II, spiral coverage of small offsets, and search replayability.

use lotj::baselines::{SearchActor, SearchKind, SearchParams};
use lotj::finetune::{evaluate_actor, Actor};
use pegsim::{DomainSpec, Scenario, SimState, Style};

fn test_spec(tolerance: f32, depth: f32) -> DomainSpec {
    DomainSpec {
        domain_id: 500,
        group_id: 0,
        socket_center: (0.0, 0.0),
        socket_tolerance: tolerance,
        insertion_depth: depth,
        peg_width: 4.0,
        style: Style {
            background_pattern: 1,
            peg_intensity: 0.8,
            socket_intensity: 0.6,
            texture_seed: 42,
        },
        robot_id: 0,
    }
}

#[test]
fn straight_down_never_succeeds_in_scenario_two() {
    // Scenario II starts are at least 10 mm off; tolerance tops out at
    // 1.5 mm, so pure descent can never align.
    for seed in 0..3u64 {
        let set = pegsim::sample_domains(8, 4, 4, seed).unwrap();
        for spec in set.all() {
            let mut actor = SearchActor::new(SearchKind::StraightDown, SearchParams::default());
            let rep = evaluate_actor(&mut actor, None, spec, Scenario::Two, 20, 99).unwrap();
            assert_eq!(rep.successes, 0, "domain {}", spec.domain_id);
        }
    }
}

#[test]
fn straight_down_over_the_socket_succeeds() {
    let spec = test_spec(1.0, 4.0);
    let mut actor = SearchActor::new(SearchKind::StraightDown, SearchParams::default());
    actor.begin_episode([0.0, 0.0, 5.0], 1);
    let mut state = SimState {
        pos: [0.0, 0.0, 5.0],
        contact: false,
        steps: 0,
        success: false,
        done: false,
    };
    while !state.done {
        let obs = pegsim::render(&state, &spec);
        let a = actor.act(&obs, state.pos, state.steps);
        pegsim::step(&mut state, &spec, a).unwrap();
    }
    assert!(state.success);
}

/// The coverage sweep behind the spiral's role: every start offset of
/// magnitude <= 2 mm is recovered within the episode budget when the
/// tolerance is at least 1 mm, even at the deepest socket.
#[test]
fn spiral_search_covers_two_millimetres() {
    let spec = test_spec(1.0, 6.0);
    let mut misses = Vec::new();
    let grid: Vec<f32> = (-8..=8).map(|k| k as f32 * 0.25).collect();
    for &ox in &grid {
        for &oy in &grid {
            if (ox * ox + oy * oy).sqrt() > 2.0 {
                continue;
            }
            // Peg starts offset by (ox, oy) from the socket at hover height.
            let mut state = SimState {
                pos: [ox, oy, 5.0],
                contact: false,
                steps: 0,
                success: false,
                done: false,
            };
            let mut actor = SearchActor::new(SearchKind::SpiralSearch, SearchParams::default());
            actor.begin_episode(state.pos, 7);
            while !state.done {
                let obs = pegsim::render(&state, &spec);
                let a = actor.act(&obs, state.pos, state.steps);
                pegsim::step(&mut state, &spec, a).unwrap();
            }
            if !state.success {
                misses.push((ox, oy));
            }
        }
    }
    assert!(
        misses.is_empty(),
        "spiral failed to recover {} offsets: {misses:?}",
        misses.len()
    );
}

#[test]
fn searches_are_replayable() {
    let spec = test_spec(1.2, 4.0);
    let run = |kind: SearchKind| -> Vec<[f32; 3]> {
        let mut actor = SearchActor::new(kind, SearchParams::default());
        let mut state = SimState {
            pos: [4.0, -3.0, 5.0],
            contact: false,
            steps: 0,
            success: false,
            done: false,
        };
        actor.begin_episode(state.pos, 33);
        let mut path = vec![state.pos];
        while !state.done {
            let obs = pegsim::render(&state, &spec);
            let a = actor.act(&obs, state.pos, state.steps);
            pegsim::step(&mut state, &spec, a).unwrap();
            path.push(state.pos);
        }
        path
    };
    for kind in [
        SearchKind::StraightDown,
        SearchKind::RandomSearch,
        SearchKind::SpiralSearch,
    ] {
        assert_eq!(run(kind), run(kind), "{kind:?} not replayable");
    }
}

#[test]
fn random_search_stays_near_its_origin() {
    let params = SearchParams::default();
    let spec = test_spec(1.0, 4.0);
    let mut actor = SearchActor::new(SearchKind::RandomSearch, params);
    let start = [5.0f32, 5.0, 5.0];
    actor.begin_episode(start, 11);
    let mut state = SimState {
        pos: start,
        contact: false,
        steps: 0,
        success: false,
        done: false,
    };
    while !state.done {
        let obs = pegsim::render(&state, &spec);
        let a = actor.act(&obs, state.pos, state.steps);
        pegsim::step(&mut state, &spec, a).unwrap();
        let d = ((state.pos[0] - start[0]).powi(2) + (state.pos[1] - start[1]).powi(2)).sqrt();
        assert!(
            d <= params.probe_radius * 1.5 + 0.5,
            "wandered {d} mm from origin"
        );
    }
}
