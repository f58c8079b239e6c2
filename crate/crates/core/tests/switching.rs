use chloros::benchmark::{build_benchmark16, build_burst_loop};
use chloros::plant::*;
use chloros::rfmpc::{LoopOptions, MpcTask};
use chloros::switching::*;
use chloros::uncertainty::UncertaintyConfig;
use chloros::Error;

fn pair() -> (MpcTask, MpcTask) {
    let mut old = MpcTask::from_network(&build_benchmark16());
    old.y_max = vec![1.0, 1.0];
    let mut new = old.clone();
    new.y_max = vec![0.8, 0.8];
    new.w_u = 3.0;
    new.w_y = 2.0;
    new.control_horizon = 4;
    (old, new)
}

fn obs(demand_ratio: f64, burst: bool) -> Observation {
    Observation {
        step: 0,
        demand_ratio,
        tank_levels: vec![3.0],
        burst,
        pressure_anomaly: false,
    }
}

fn rules() -> Vec<DetectionRule> {
    vec![
        DetectionRule::PipeBurst {
            state: OperationalState::new(OsLabel::Emergency),
        },
        DetectionRule::DemandAnomaly {
            threshold: 1.3,
            state: OperationalState::new(OsLabel::Disturbed),
        },
    ]
}

#[test]
fn blend_endpoints_are_the_tasks_themselves() {
    let (old, new) = pair();
    assert_eq!(blend(&old, &new, 0.0).unwrap(), old);
    assert_eq!(blend(&old, &new, 1.0).unwrap(), new);
}

#[test]
fn blend_midpoint_averages_bounds_and_weights() {
    let (old, new) = pair();
    let mid = blend(&old, &new, 0.5).unwrap();
    assert_eq!(mid.y_max, vec![0.9, 0.9]);
    assert_eq!(mid.w_u, 2.0);
    assert_eq!(mid.w_y, 1.0);
    assert_eq!(mid.y_min, old.y_min);
    assert_eq!(mid.control_horizon, new.control_horizon);
    assert_eq!(blend(&old, &new, 0.25).unwrap().control_horizon, old.control_horizon);
}

#[test]
fn blend_rejects_bad_inputs() {
    let (old, new) = pair();
    assert!(matches!(blend(&old, &new, 1.5), Err(Error::Config(_))));
    assert!(matches!(blend(&old, &new, -0.1), Err(Error::Config(_))));
    let narrow = old.select(&[0], &[0, 1]);
    assert!(matches!(blend(&old, &narrow, 0.5), Err(Error::IncompatibleTasks(_))));
}

#[test]
fn linear_schedules() {
    assert_eq!(lambda_schedule_linear(4).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(lambda_schedule_linear(1).unwrap(), vec![0.0, 1.0]);
    let s = lambda_schedule_linear(24).unwrap();
    assert!(s.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*s.last().unwrap(), 1.0);
    assert!(matches!(lambda_schedule_linear(0), Err(Error::Config(_))));
}

#[test]
fn min_time_jumps_to_one_when_the_new_task_is_feasible() {
    let mut probes = Vec::new();
    let next = min_time_lambda_step(0.2, &mut |l| {
        probes.push(l);
        true
    });
    assert_eq!(next, 1.0);
    assert_eq!(probes, vec![1.0]);
}

#[test]
fn min_time_stalls_when_nothing_beyond_the_previous_value_is_feasible() {
    assert_eq!(min_time_lambda_step(0.3, &mut |l| l <= 0.3), 0.3);
}

#[test]
fn min_time_finds_a_boundary_at_one_half() {
    // one-variable task: blended y_min = 0.2 + 0.4 λ against a reachable
    // ceiling of 0.4 becomes infeasible past λ = 0.5
    let y_min = |l: f64| 0.2 + 0.4 * l;
    let next = min_time_lambda_step(0.0, &mut |l| y_min(l) <= 0.4);
    assert!((0.5 - MIN_TIME_TOL..=0.5).contains(&next), "{next}");
    assert!(min_time_lambda_step(0.1, &mut |l| l <= 0.5) >= 0.1);
}

#[test]
fn detection_follows_rule_order() {
    let r = rules();
    assert_eq!(detect_os(&[obs(1.0, false)], &r).unwrap(), OperationalState::NORMAL);
    assert_eq!(detect_os(&[obs(1.5, false)], &r).unwrap().label, OsLabel::Disturbed);
    assert_eq!(detect_os(&[obs(1.0, true)], &r).unwrap().label, OsLabel::Emergency);
    // both match; the burst rule comes first
    assert_eq!(detect_os(&[obs(1.5, true)], &r).unwrap().label, OsLabel::Emergency);
    assert_eq!(detect_os(&[obs(1.5, false)], &[]).unwrap(), OperationalState::NORMAL);
}

#[test]
fn demand_rule_uses_the_window_mean() {
    let r = rules();
    let window = [obs(1.0, false), obs(1.5, false)];
    assert_eq!(detect_os(&window, &r).unwrap(), OperationalState::NORMAL);
    let window = [obs(1.4, false), obs(1.3, false)];
    assert_eq!(detect_os(&window, &r).unwrap().label, OsLabel::Disturbed);
}

#[test]
fn tank_rule_fires_below_its_level() {
    let rule = [DetectionRule::TankLevel {
        below: 3.5,
        state: OperationalState::new(OsLabel::Emergency),
    }];
    assert_eq!(detect_os(&[obs(1.0, false)], &rule).unwrap().label, OsLabel::Emergency);
}

#[test]
fn empty_window_is_an_error() {
    assert!(matches!(detect_os(&[], &rules()), Err(Error::Config(_))));
}

#[test]
fn supervisor_config_validation() {
    let net = build_burst_loop();
    let cfg = burst_loop_supervisor(&net, SwitchMode::Linear, 8);
    assert!(cfg.validate().is_ok());
    assert_eq!(cfg.strategy_for(OperationalState::new(OsLabel::Emergency)), Some(1));
    assert_eq!(cfg.strategy_for(OperationalState::new(OsLabel::Disturbed)), None);
    let mut bad = cfg.clone();
    bad.initial = "missing".into();
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let mut bad = cfg.clone();
    bad.switch_steps = 0;
    assert!(bad.validate().is_err());
    let mut bad = cfg;
    bad.window = 0;
    assert!(bad.validate().is_err());
}

fn burst_run(mode: SwitchMode, with_burst: bool) -> SupervisorLog {
    let mut net = build_burst_loop();
    if !with_burst {
        net.events.clear();
    }
    let s = demand_tracking_schedule(&net, &hourly_demand(&net)).unwrap();
    let set = UncertaintyConfig::zero().build(&net).unwrap();
    let real = set.nominal(net.demand_profiles.len());
    let cfg = burst_loop_supervisor(&net, mode, 24);
    supervise(&net, &s, &Tariff::benchmark(), &set, &real, &cfg, LoopOptions::default()).unwrap().1
}

#[test]
fn steady_normal_operation_never_switches() {
    let log = burst_run(SwitchMode::Linear, false);
    assert!(log.switches.is_empty());
    assert!(log.os_timeline.iter().all(|(_, s)| *s == OperationalState::NORMAL));
    assert_eq!(log.infeasible_cycles(), 0);
}

#[test]
fn linear_switch_after_the_burst_completes_on_schedule() {
    let log = burst_run(SwitchMode::Linear, true);
    assert_eq!(log.switches.len(), 1);
    let sw = &log.switches[0];
    assert_eq!((sw.from.as_str(), sw.to.as_str()), ("normal", "burst"));
    assert_eq!(sw.start, 100);
    assert_eq!(sw.completed_at, Some(124));
    for &(k, l) in &sw.lambdas {
        assert!((l - ((k - 100) as f64 / 24.0).min(1.0)).abs() < 1e-12, "step {k}: {l}");
    }
    assert!(log.os_timeline.iter().any(|&(k, s)| k == 100 && s.label == OsLabel::Emergency));
}

#[test]
fn min_time_switch_never_steps_back() {
    let log = burst_run(SwitchMode::MinTime, true);
    let sw = &log.switches[0];
    assert!(sw.lambdas.windows(2).all(|w| w[1].1 >= w[0].1));
    assert_eq!(sw.lambdas.last().unwrap().1, 1.0);
    assert!(sw.completed_at.unwrap() <= 124);
}
