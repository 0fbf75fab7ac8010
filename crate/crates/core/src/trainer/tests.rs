use super::*;
use crate::instruction::{ActionKind, Classifier, InstructionClass, RewardKind, RuleClassifier, TopClass};
use crate::jsonl::read_file;
use crate::policy::PolicyParams;
use crate::reward::RewardWeights;
use crate::rng::RngStream;
use crate::sim::{ActionCommand, Env, FeatureVector, SegmentSpec, Terminal, Track, TrackSpec, WorldState};
use proptest::prelude::*;

/// Says fixed utterances at fixed step boundaries of every episode.
struct Script(Vec<(usize, &'static str)>);

impl CoachSource for Script {
    fn boundary(&mut self, view: &StepView) -> Boundary {
        let incoming = self
            .0
            .iter()
            .filter(|(t, _)| *t == view.step)
            .map(|(_, text)| {
                let classification = RuleClassifier.classify(text);
                Incoming {
                    text: (*text).to_owned(),
                    classification,
                    directive: crate::instruction::to_directive(classification.class, 1.0),
                    source: DirectiveSource::Scripted,
                    client_latency_ms: None,
                }
            })
            .collect();
        Boundary { incoming, stop: false }
    }
}

fn small_config() -> RunConfig {
    RunConfig {
        max_epochs: 2,
        coach_start_epoch: 1,
        horizon: Some(80),
        seed: 7,
        ..RunConfig::default()
    }
}

/// A wide circle so random early policies survive long scripted windows.
fn wide_config() -> RunConfig {
    let mut spec = TrackSpec::circle(40.0);
    spec.lane_half_width = 20.0;
    RunConfig {
        custom_track: Some(spec),
        horizon: Some(80),
        ..small_config()
    }
}

fn rollout(config: &RunConfig, coach: &mut dyn CoachSource) -> EpisodeOutcome {
    let env = config.build_env().unwrap();
    let params = PolicyParams::for_features(
        &config.policy,
        env.config().obstacle_range,
        &mut RngStream::new(1, "init"),
    );
    let spec = EpisodeSpec {
        env: &env,
        params: &params,
        config,
        epoch: 1,
        episode: 0,
        seed: 3,
        coach_active: true,
    };
    let mut beta = config.initial_beta;
    run_episode(&spec, &mut beta, coach, &mut RngStream::new(1, "policy")).unwrap()
}

#[test]
fn one_epoch_fills_buffer_with_n_trajectories() {
    let cfg = RunConfig {
        max_epochs: 1,
        ..small_config()
    };
    let mut trainer = Trainer::new(cfg, None).unwrap();
    trainer.run_epoch().unwrap().unwrap();
    assert_eq!(trainer.buffer().len(), 3);
    assert_eq!(trainer.metrics().len(), 1);
    assert_eq!(trainer.metrics()[0].episodes, 3);
    assert!(trainer.run_epoch().unwrap().is_none());
    assert_eq!(trainer.stop_reason(), Some(&StopReason::MaxEpochs));
}

#[test]
fn buffer_keeps_only_the_newest_trajectories() {
    let cfg = RunConfig {
        max_epochs: 3,
        buffer_capacity: 4,
        horizon: Some(20),
        ..small_config()
    };
    let mut trainer = Trainer::new(cfg, None).unwrap();
    while trainer.run_epoch().unwrap().is_some() {
        assert!(trainer.buffer().len() <= 4);
    }
    assert_eq!(trainer.buffer().len(), 4);
}

#[test]
fn scripted_coach_is_silent_before_start_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        coach: CoachMode::Scripted,
        max_epochs: 3,
        coach_start_epoch: 3,
        horizon: Some(150),
        ..wide_config()
    };
    Trainer::new(cfg, Some(dir.path())).unwrap().run().unwrap();
    let events: Vec<DirectiveEvent> = read_file(dir.path().join("instructions.jsonl")).unwrap();
    assert!(!events.is_empty(), "coach never spoke once active");
    assert!(events.iter().all(|e| e.arrival_epoch >= 3));
}

#[test]
fn coach_activity_by_mode() {
    let mut cfg = RunConfig {
        coach_start_epoch: 15,
        ..RunConfig::default()
    };
    cfg.coach = CoachMode::Scripted;
    assert!(!cfg.coach_active(14));
    assert!(cfg.coach_active(15));
    cfg.coach = CoachMode::None;
    assert!(!cfg.coach_active(100));
    cfg.coach = CoachMode::Live;
    assert!(cfg.coach_active(1));
}

#[test]
fn identical_scripted_runs_write_identical_logs() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            coach: CoachMode::Scripted,
            max_epochs: 3,
            horizon: Some(120),
            ..small_config()
        };
        Trainer::new(cfg, Some(dir.path())).unwrap().run().unwrap();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        (read("metrics.jsonl"), read("instructions.jsonl"), read("replay.jsonl"))
    };
    let a = run();
    let b = run();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn turn_left_overrides_the_next_ten_steps() {
    let out = rollout(&wide_config(), &mut Script(vec![(20, "turn left")]));
    let steps = &out.trajectory.steps;
    assert!(steps.len() >= 31);
    for (i, s) in steps.iter().enumerate().take(31) {
        let inside = (20..30).contains(&i);
        assert_eq!(s.was_override, inside, "step {i}");
        if inside {
            assert_eq!(s.action.steer, -0.2);
            assert_eq!(s.raw_action, s.action.as_array());
        }
    }
    assert_eq!(out.trajectory.overrides(), 10);
}

#[test]
fn newer_override_preempts_the_active_one() {
    let out = rollout(&wide_config(), &mut Script(vec![(20, "turn left"), (25, "turn right")]));
    let steps = &out.trajectory.steps;
    assert!(steps[20..25].iter().all(|s| s.action.steer == -0.2));
    assert!(steps[25..35].iter().all(|s| s.action.steer == 0.2 && s.was_override));
    assert!(!steps[35].was_override);
}

#[test]
fn stop_zeroes_throttle_and_brakes_fully() {
    let out = rollout(&wide_config(), &mut Script(vec![(5, "stop")]));
    for s in &out.trajectory.steps[5..15] {
        assert_eq!(s.action.brake, 1.0);
        assert_eq!(s.action.throttle, 0.0);
    }
}

#[test]
fn terrible_at_step_fifty_moves_beta_from_step_forty() {
    let text = "that's terrible";
    assert_eq!(
        RuleClassifier.classify(text).class,
        InstructionClass::Reward(RewardKind::Terrible)
    );
    let cfg = wide_config();
    let out = rollout(&cfg, &mut Script(vec![(50, text)]));
    assert_eq!(out.beta_updates.len(), 1);
    let u = &out.beta_updates[0];
    assert_eq!(u.arrival_step, 50);
    assert_eq!(u.attributed_step, 40);
    assert_eq!(u.relabeled, (40, 49));
    assert_eq!(u.r_h, -30.0);
    assert_eq!(u.factors, out.trajectory.steps[40].factors);
    assert_eq!(
        u.after,
        crate::reward::update_beta(&u.before, &u.factors, -30.0, cfg.beta_lr)
    );
    assert_eq!(out.events[0].attributed_step, Some(40));

    // Steps 40..=49 and everything after carry the new weights; earlier ones the old.
    let score = |i: usize, w: &RewardWeights| {
        let s = &out.trajectory.steps[i];
        crate::reward::reward(&s.factors, w, s.terminal, &cfg.reward)
    };
    for (i, s) in out.trajectory.steps.iter().enumerate() {
        let w = if i >= 40 { &u.after } else { &u.before };
        assert_eq!(s.reward.to_bits(), score(i, w).to_bits(), "step {i}");
    }

    let record = ReplayRecord {
        epoch: 1,
        episode: 0,
        seed: 3,
        success: out.success,
        beta_start: out.beta_start,
        beta_end: out.beta_end,
        trajectory: out.trajectory.clone(),
        events: out.events.clone(),
        beta_updates: out.beta_updates.clone(),
    };
    let (rewards, beta) = recompute_rewards(&record, &cfg);
    assert_eq!(beta, out.beta_end);
    for (want, s) in rewards.iter().zip(&out.trajectory.steps) {
        assert_eq!(want.to_bits(), s.reward.to_bits());
    }
}

#[test]
fn reward_at_first_boundary_is_logged_but_ignored() {
    let out = rollout(&wide_config(), &mut Script(vec![(0, "great job")]));
    assert_eq!(out.events.len(), 1);
    assert!(out.beta_updates.is_empty());
    assert_eq!(out.beta_end, out.beta_start);
}

#[test]
fn audit_of_a_coached_run_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        coach: CoachMode::Scripted,
        max_epochs: 2,
        horizon: Some(200),
        ..small_config()
    };
    let art = Trainer::new(cfg, Some(dir.path())).unwrap().run().unwrap();
    assert_eq!(art.metrics.len(), 2);
    let report = audit_replay(dir.path()).unwrap();
    assert!(report.ok(), "{:?}", report.mismatches);
    assert_eq!(report.epochs_checked, 2);
    assert_eq!(report.episodes, 6);
}

#[test]
fn checkpoint_restores_the_trained_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        max_epochs: 1,
        horizon: Some(40),
        ..small_config()
    };
    let art = Trainer::new(cfg.clone(), Some(dir.path())).unwrap().run().unwrap();
    let ckpt = load_checkpoint(dir.path().join("checkpoints").join("final.json")).unwrap();
    assert_eq!(ckpt.version, CHECKPOINT_VERSION);
    assert_eq!(ckpt.epoch, 1);
    assert_eq!(ckpt.config, cfg);
    assert_eq!(ckpt.learner.params, art.params);
}

#[test]
fn bad_checkpoint_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        max_epochs: 1,
        horizon: Some(10),
        ..small_config()
    };
    let trainer = Trainer::new(cfg, None).unwrap();
    let mut value = serde_json::to_value(trainer.checkpoint()).unwrap();
    value["version"] = serde_json::json!(CHECKPOINT_VERSION + 1);
    let path = dir.path().join("c.json");
    std::fs::write(&path, value.to_string()).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

fn brake(_: &WorldState, _: &FeatureVector) -> ActionCommand {
    ActionCommand::new(0.0, 0.0, 1.0)
}

#[test]
fn always_braking_never_succeeds() {
    let cfg = RunConfig::default();
    let env = cfg.build_env().unwrap();
    let report = evaluate(
        &mut brake,
        &env,
        Task::LaneFollow,
        20,
        1000,
        &cfg.initial_beta,
        &cfg.reward,
        5,
    );
    assert_eq!(report.successes, 0);
    assert_eq!(report.success_rate, 0.0);
    assert_eq!(report.endings.get("Stalled"), Some(&20));
}

/// Curvature feedforward plus lane feedback. Positive steer turns right.
fn geometric(env: &Env) -> impl FnMut(&WorldState, &FeatureVector) -> ActionCommand + '_ {
    move |_, f| {
        let c = env.config();
        let max_wheel = c.max_wheel_angle_deg.to_radians();
        let k = f.lookahead_curvatures.first().copied().unwrap_or(0.0);
        let feedforward = -(c.wheelbase * k).atan() / max_wheel;
        let steer = feedforward + 0.4 * f.deviation + 1.5 * f.heading_error.to_radians();
        ActionCommand::new(steer, 0.45, 0.0)
    }
}

#[test]
fn geometric_controller_drives_the_lap() {
    let cfg = RunConfig::default();
    let env = cfg.build_env().unwrap();
    let mut ctl = geometric(&env);
    let report = evaluate(
        &mut ctl,
        &env,
        Task::LaneFollow,
        20,
        1000,
        &cfg.initial_beta,
        &cfg.reward,
        11,
    );
    assert_eq!(report.success_rate, 100.0, "{report:?}");
    assert!(report.mean_deviation < 0.1, "{report:?}");
}

#[test]
fn eval_start_states_depend_only_on_seed() {
    let cfg = RunConfig::default();
    let env = cfg.build_env().unwrap();
    let run = |seed| {
        let mut ctl = geometric(&env);
        evaluate(
            &mut ctl,
            &env,
            Task::LaneFollow,
            5,
            200,
            &cfg.initial_beta,
            &cfg.reward,
            seed,
        )
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4).mean_reward, run(5).mean_reward);
}

fn straight_env() -> Env {
    let spec = TrackSpec {
        name: "long".into(),
        lane_half_width: 2.5,
        segments: vec![
            SegmentSpec::straight(300.0),
            SegmentSpec::arc(20.0, std::f64::consts::PI),
            SegmentSpec::straight(300.0),
            SegmentSpec::arc(20.0, std::f64::consts::PI),
        ],
    };
    Env::new(Track::build(spec).unwrap(), Default::default())
}

fn view<'a>(world: &'a WorldState, features: &'a FeatureVector, step: usize, post_terminal: bool) -> StepView<'a> {
    StepView {
        epoch: 20,
        episode: 0,
        step,
        world,
        features,
        last: None,
        episode_return: 0.0,
        beta: RewardWeights::uniform(1.0),
        coach_active: true,
        post_terminal,
    }
}

fn place(env: &Env, offset: f64, speed: f64) -> (WorldState, FeatureVector) {
    let w = env.place(50.0, offset, 0.0, speed, Vec::new(), RngStream::new(0, "world"));
    let f = env.features(&w);
    (w, f)
}

#[test]
fn coach_tells_a_left_drifting_car_to_turn_right() {
    let env = straight_env();
    let (w, f) = place(&env, 1.5, 15.0);
    let mut state = ScriptedCoachState::default();
    let mut rng = RngStream::new(0, "coach");
    let (rule, text) =
        scripted_utterance(&view(&w, &f, 10, false), &CoachRules::default(), &mut state, &mut rng).unwrap();
    assert_eq!(rule, CoachRule::TurnBack);
    assert!(TEMPLATES.turn_right.contains(&text));
    assert_eq!(
        RuleClassifier.classify(text).class,
        InstructionClass::Action(ActionKind::TurnRight)
    );
}

#[test]
fn coach_reports_a_collision() {
    let env = straight_env();
    let (mut w, f) = place(&env, 0.0, 15.0);
    w.terminal = Some(Terminal::Collision);
    let mut state = ScriptedCoachState::default();
    let mut rng = RngStream::new(0, "coach");
    let (rule, text) =
        scripted_utterance(&view(&w, &f, 10, true), &CoachRules::default(), &mut state, &mut rng).unwrap();
    assert_eq!(rule, CoachRule::Accident);
    assert!(TEMPLATES.accident.contains(&text));
    assert_eq!(RuleClassifier.classify(text).class.top(), TopClass::Reward);
}

#[test]
fn coach_calls_out_leaving_the_road() {
    let env = straight_env();
    let (mut w, f) = place(&env, 0.0, 15.0);
    w.terminal = Some(Terminal::OffTrack);
    let mut state = ScriptedCoachState::default();
    let mut rng = RngStream::new(0, "coach");
    let (rule, text) =
        scripted_utterance(&view(&w, &f, 10, true), &CoachRules::default(), &mut state, &mut rng).unwrap();
    assert_eq!(rule, CoachRule::OffRoad);
    assert!(TEMPLATES.off_road.contains(&text));
}

#[test]
fn crawling_centered_earns_no_praise() {
    let env = straight_env();
    let (w, f) = place(&env, 0.0, 5.0);
    let rules = CoachRules::default();
    let mut state = ScriptedCoachState::default();
    let mut rng = RngStream::new(0, "coach");
    let said: Vec<CoachRule> = (0..3 * rules.praise_streak)
        .filter_map(|t| scripted_utterance(&view(&w, &f, t, false), &rules, &mut state, &mut rng).map(|r| r.0))
        .collect();
    assert!(!said.is_empty());
    assert!(said.iter().all(|r| *r == CoachRule::SpeedUp), "{said:?}");
}

#[test]
fn coach_stays_quiet_for_a_centered_car_then_praises_it() {
    let env = straight_env();
    let (w, f) = place(&env, 0.0, 15.0);
    let rules = CoachRules::default();
    let mut state = ScriptedCoachState::default();
    let mut rng = RngStream::new(0, "coach");
    for t in 0..rules.praise_streak - 1 {
        assert_eq!(
            scripted_utterance(&view(&w, &f, t, false), &rules, &mut state, &mut rng),
            None
        );
    }
    let t = rules.praise_streak - 1;
    let (rule, _) = scripted_utterance(&view(&w, &f, t, false), &rules, &mut state, &mut rng).unwrap();
    assert_eq!(rule, CoachRule::Praise);
    assert_eq!(state.centered_streak, 0);
}

#[test]
fn coach_respects_cooldown() {
    let env = straight_env();
    let (w, f) = place(&env, 1.5, 15.0);
    let rules = CoachRules::default();
    let mut state = ScriptedCoachState::default();
    let mut rng = RngStream::new(0, "coach");
    let fired: Vec<usize> = (0..45)
        .filter(|&t| scripted_utterance(&view(&w, &f, t, false), &rules, &mut state, &mut rng).is_some())
        .collect();
    assert_eq!(fired, vec![0, 20, 40]);
}

#[test]
fn every_template_classifies_to_its_intent() {
    let cases: [(&[&str], InstructionClass); 3] = [
        (TEMPLATES.turn_left, InstructionClass::Action(ActionKind::TurnLeft)),
        (TEMPLATES.turn_right, InstructionClass::Action(ActionKind::TurnRight)),
        (TEMPLATES.speed_up, InstructionClass::Action(ActionKind::SpeedUp)),
    ];
    for (pool, class) in cases {
        for text in pool {
            assert_eq!(RuleClassifier.classify(text).class, class, "{text}");
        }
    }
    for text in TEMPLATES.accident {
        assert_eq!(
            RuleClassifier.classify(text).class,
            InstructionClass::Reward(RewardKind::Accident),
            "{text}"
        );
    }
    for text in TEMPLATES.off_road {
        assert_eq!(
            RuleClassifier.classify(text).class,
            InstructionClass::Reward(RewardKind::Mistake),
            "{text}"
        );
    }
    for text in TEMPLATES.praise {
        assert_eq!(
            RuleClassifier.classify(text).class,
            InstructionClass::Reward(RewardKind::Good),
            "{text}"
        );
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig {
        task: Task::Avoidance,
        coach: CoachMode::Scripted,
        seed: 99,
        horizon: Some(321),
        custom_track: Some(TrackSpec::oval(30.0, 15.0)),
        ..RunConfig::default()
    };
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_validation_rejects_bad_values() {
    let bad = [
        "trajectories_per_epoch = 0",
        "max_epochs = 5\ncoach_start_epoch = 6",
        "buffer_capacity = 0",
        "track = \"nowhere\"",
        "horizon = 0",
        "no_such_key = 1",
        "[ppo]\ngamma = 0.0",
    ];
    for text in bad {
        assert!(RunConfig::from_toml(text).is_err(), "{text}");
    }
    assert!(RunConfig::from_toml("").is_ok());
}

#[test]
fn task_and_coach_names_parse() {
    for t in [Task::LaneFollow, Task::FullLap, Task::Avoidance] {
        assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
    }
    for c in [CoachMode::None, CoachMode::Scripted, CoachMode::Live] {
        assert_eq!(c.to_string().parse::<CoachMode>().unwrap(), c);
    }
    assert!("fly".parse::<Task>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn override_window_length_matches_duration(start in 1usize..40, duration in 0.1f64..3.0) {
        let cfg = RunConfig { override_duration: duration, horizon: Some(120), ..wide_config() };
        let texts = ["turn left"];
        let mut coach = Script(vec![(start, texts[0])]);
        let out = rollout(&cfg, &mut coach);
        let n = cfg.override_steps();
        let expected = n.min(out.trajectory.len().saturating_sub(start));
        prop_assert_eq!(out.trajectory.overrides(), expected);
        for (i, s) in out.trajectory.steps.iter().enumerate() {
            prop_assert_eq!(s.was_override, i >= start && i < start + n);
        }
    }
}
