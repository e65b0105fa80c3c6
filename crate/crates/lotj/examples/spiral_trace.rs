use lotj::baselines::{SearchActor, SearchKind, SearchParams};
use lotj::finetune::Actor;
use pegsim::{DomainSpec, SimState, Style};

fn main() {
    let spec = DomainSpec {
        domain_id: 500, group_id: 0, socket_center: (0.0, 0.0),
        socket_tolerance: 1.0, insertion_depth: 6.0, peg_width: 4.0,
        style: Style { background_pattern: 1, peg_intensity: 0.8, socket_intensity: 0.6, texture_seed: 42 },
        robot_id: 0,
    };
    let mut state = SimState { pos: [-2.0, 0.0, 5.0], contact: false, steps: 0, success: false, done: false };
    let mut actor = SearchActor::new(SearchKind::SpiralSearch, SearchParams::default());
    actor.begin_episode(state.pos, 7);
    while !state.done {
        let obs = pegsim::render(&state, &spec);
        let a = actor.act(&obs, state.pos, state.steps);
        pegsim::step(&mut state, &spec, a).unwrap();
        println!("step {:2}: pos ({:6.2},{:6.2},{:6.2}) act ({:5.2},{:5.2},{:5.2})",
                 state.steps, state.pos[0], state.pos[1], state.pos[2], a.dx, a.dy, a.dz);
    }
    println!("success: {}", state.success);
}
