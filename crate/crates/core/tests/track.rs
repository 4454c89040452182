use dmrl_core::track::{
    features, read_trajectories, rhc_plan, run_episode, trained_scenarios, transferred_scenarios,
    write_trajectories, CarState, Features, RhcConfig, RhcDriver, Scenario, ScriptedExpert, Style,
};

fn mirrored(s: &Scenario) -> Scenario {
    let mut m = s.clone();
    for c in &mut m.cars {
        c.lane = s.lanes - 1 - c.lane;
    }
    m.ego.lane = s.lanes - 1 - s.ego.lane;
    m
}

fn mirror_state(s: &CarState, sc: &Scenario) -> CarState {
    CarState::new(s.x, sc.road_width() - s.y, -s.theta)
}

#[test]
fn scenario_sets_depend_only_on_the_seed() {
    for style in Style::ALL {
        assert_eq!(trained_scenarios(style, 4), trained_scenarios(style, 4));
        assert_ne!(trained_scenarios(style, 4), trained_scenarios(style, 5));
    }
    let safe = transferred_scenarios(Style::Safe, 0);
    let speedy = transferred_scenarios(Style::Speedy, 0);
    assert!(safe.iter().zip(&speedy).all(|(a, b)| a.cars == b.cars));
}

#[test]
fn episodes_replay_identically() {
    let sc = &trained_scenarios(Style::Tailgate, 1)[7];
    let a = run_episode(&mut ScriptedExpert::new(Style::Tailgate), sc, 15.0, 7).unwrap();
    let b = run_episode(&mut ScriptedExpert::new(Style::Tailgate), sc, 15.0, 7).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.stats, b.stats);

    let reward = |f: &Features| -f[0] * f[0] - (f[5] - 10.0).abs() + 0.05 * f[3];
    let drive = || run_episode(&mut RhcDriver::new(&reward, 10.0, RhcConfig::default()), sc, 5.0, 0).unwrap();
    assert_eq!(drive().records, drive().records);
}

#[test]
fn trajectory_files_round_trip() {
    let sc = &trained_scenarios(Style::Speedy, 0)[4];
    let ep = run_episode(&mut ScriptedExpert::new(Style::Speedy), sc, 10.0, 3).unwrap();
    let mut buf = Vec::new();
    write_trajectories(&mut buf, &ep.records).unwrap();
    let back = read_trajectories(buf.as_slice()).unwrap();
    assert_eq!(back, ep.records);
}

#[test]
fn mirroring_the_road_mirrors_the_features() {
    for sc in trained_scenarios(Style::Safe, 2).iter().chain(&transferred_scenarios(Style::Safe, 2)) {
        let m = mirrored(sc);
        for step in 0..40 {
            let t = step as f64 * 0.5;
            let s = CarState::new(7.5 * step as f64, 0.3 + 0.29 * step as f64 % sc.road_width(), 0.1);
            if !sc.on_road(s.y) {
                continue;
            }
            let f = features(&s, 10.0, sc, t).unwrap();
            let g = features(&mirror_state(&s, sc), 10.0, &m, t).unwrap();
            let expected = [-f[0], -f[1], f[4], f[3], f[2], f[5]];
            for k in 0..6 {
                assert!((g[k] - expected[k]).abs() < 1e-9, "feature {k}: {g:?} vs {expected:?}");
            }
        }
    }
}

#[test]
fn planner_mirrors_under_a_symmetric_reward() {
    let reward = |f: &Features| -(f[0] * f[0]) - 0.5 * f[1] * f[1] + 0.02 * f[3];
    for sc in trained_scenarios(Style::Safe, 3).iter().take(6) {
        let m = mirrored(sc);
        let s = CarState::new(5.0, sc.ego_start().y + 0.9, 0.05);
        let p = rhc_plan(&reward, &s, sc, 0.0, 10.0, &RhcConfig::default()).unwrap();
        let q = rhc_plan(&reward, &mirror_state(&s, sc), &m, 0.0, 10.0, &RhcConfig::default()).unwrap();
        assert_eq!(p.action.v, q.action.v);
        assert_eq!(p.action.w, -q.action.w);
        assert!((p.score - q.score).abs() <= 1e-9 * p.score.abs().max(1.0));
    }
}
