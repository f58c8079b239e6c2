mod common;

use chloros::benchmark::build_benchmark16;
use chloros::network::{Network, TimeGrid};
use chloros::plant::*;
use chloros::uncertainty::*;
use chloros::Error;

fn bench() -> (Network, HydraulicSchedule) {
    let net = build_benchmark16();
    let s = optimize_pump_schedule(&net, &hourly_demand(&net), &Tariff::benchmark()).unwrap();
    (net, s)
}

/// Hourly input profile between the booster bounds.
fn smooth_input(net: &Network) -> Vec<Vec<f64>> {
    let steps = net.time_grid.steps_quality();
    (0..steps)
        .map(|k| {
            let phase = k as f64 / steps as f64 * std::f64::consts::TAU;
            net.boosters.iter().map(|b| b.u_min + (b.u_max - b.u_min) * (0.5 + 0.3 * phase.sin())).collect()
        })
        .collect()
}

fn cfg(delta: f64, decay_rel: f64) -> UncertaintyConfig {
    UncertaintyConfig {
        delta_early: delta,
        delta_late: delta,
        switch_hour: 0.0,
        decay_rel,
    }
}

#[test]
fn degenerate_box_samples_the_nominal_point() {
    let (net, _) = bench();
    let set = UncertaintyConfig::zero().build(&net).unwrap();
    assert!(set.is_point());
    let nd = net.demand_profiles.len();
    let nominal = set.nominal(nd);
    for seed in 0..5 {
        let r = sample_realization(&set, nd, seed);
        assert_eq!(r.demand_mult, nominal.demand_mult);
        assert_eq!(r.decay_rate, nominal.decay_rate);
    }
}

#[test]
fn config_splits_demand_bound_at_switch_hour() {
    let (net, _) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    assert_eq!(set.demand_delta.len(), 24);
    assert!(set.demand_delta[..10].iter().all(|&d| d == 0.05));
    assert!(set.demand_delta[10..].iter().all(|&d| d == 0.10));
}

#[test]
fn invalid_bounds_are_rejected() {
    let (net, _) = bench();
    assert!(matches!(cfg(1.0, 0.0).build(&net), Err(Error::Config(_))));
    assert!(matches!(cfg(0.1, 1.5).build(&net), Err(Error::Config(_))));
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let (net, _) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    let nd = net.demand_profiles.len();
    assert_eq!(sample_realization(&set, nd, 42), sample_realization(&set, nd, 42));
    assert_ne!(sample_realization(&set, nd, 42), sample_realization(&set, nd, 43));
}

#[test]
fn draws_fill_the_box_and_stay_inside() {
    let (net, _) = bench();
    let set = cfg(0.1, 0.2).build(&net).unwrap();
    let nd = net.demand_profiles.len();
    let (mut lo, mut hi, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
    let mut seed = 0;
    while n < 10_000 {
        let r = sample_realization(&set, nd, seed);
        for m in r.demand_mult.iter().flatten() {
            assert!((0.9..=1.1).contains(m), "{m}");
            lo = lo.min(*m);
            hi = hi.max(*m);
            n += 1;
        }
        for (p, k) in r.decay_rate.iter().enumerate() {
            assert!(*k >= set.decay_lo[p] && *k <= set.decay_hi[p]);
        }
        seed += 1;
    }
    assert!(lo < 0.901 && hi > 1.099, "[{lo}, {hi}]");
}

#[test]
fn zero_width_envelope_is_the_nominal_trajectory() {
    let (net, s) = bench();
    let set = UncertaintyConfig::zero().build(&net).unwrap();
    let u = smooth_input(&net);
    let env = robust_envelope(&net, &s, &u, &set, &EnvelopeConfig::default()).unwrap();
    let t = simulate(&net, &s, &Tariff::benchmark(), &u, None).unwrap();
    for k in 0..env.steps() {
        for i in 0..2 {
            assert_eq!(env.y_lo[k][i], env.y_hi[k][i]);
            assert!((env.y_lo[k][i] - t.y[k][i]).abs() < 1e-12);
        }
    }
}

#[test]
fn decay_only_envelope_spans_the_extreme_rates_on_a_single_path() {
    // one path: the output falls with the decay rate, so the extremes sit at
    // the interval ends
    let net = common::line(3.0, 0.4, 6.0, TimeGrid::default());
    let s = demand_tracking_schedule(&net, &hourly_demand(&net)).unwrap();
    let set = cfg(0.0, 0.5).build(&net).unwrap();
    let u = vec![vec![0.8]; net.time_grid.steps_quality()];
    let ecfg = EnvelopeConfig {
        inflation: 0.0,
        ..EnvelopeConfig::default()
    };
    let env = robust_envelope(&net, &s, &u, &set, &ecfg).unwrap();
    let run = |rate: f64| {
        let r = Realization {
            seed: None,
            demand_mult: vec![vec![1.0]; 24],
            decay_rate: vec![rate],
        };
        simulate(&net, &s, &Tariff::benchmark(), &u, Some(&r)).unwrap().y
    };
    let slow = run(0.2);
    let fast = run(0.6);
    for k in 0..env.steps() {
        assert!((env.y_hi[k][0] - slow[k][0]).abs() < 1e-12, "k={k}");
        assert!((env.y_lo[k][0] - fast[k][0]).abs() < 1e-12, "k={k}");
    }
    for step in 0..=20 {
        let y = run(0.2 + 0.4 * step as f64 / 20.0);
        assert!(env.contains(&y, 1e-12));
    }
}

#[test]
fn envelope_contains_sampled_realizations() {
    let (net, s) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    let u = smooth_input(&net);
    let env = robust_envelope(&net, &s, &u, &set, &EnvelopeConfig::default()).unwrap();
    let nd = net.demand_profiles.len();
    let tariff = Tariff::benchmark();
    let outside = (0..200u64)
        .filter(|&seed| {
            let r = sample_realization(&set, nd, seed);
            !env.contains(&simulate(&net, &s, &tariff, &u, Some(&r)).unwrap().y, 1e-9)
        })
        .count();
    assert_eq!(outside, 0);
}

#[test]
fn envelope_holds_the_nominal_trajectory_and_is_deterministic() {
    let (net, s) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    let u = smooth_input(&net);
    let a = robust_envelope(&net, &s, &u, &set, &EnvelopeConfig::default()).unwrap();
    let b = robust_envelope(&net, &s, &u, &set, &EnvelopeConfig::default()).unwrap();
    assert_eq!(a, b);
    let y = simulate(&net, &s, &Tariff::benchmark(), &u, None).unwrap().y;
    assert!(a.contains(&y, 0.0));
}

#[test]
fn widening_the_demand_box_does_not_shrink_the_envelope() {
    let (net, s) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    let u = smooth_input(&net);
    let ecfg = EnvelopeConfig::default();
    let narrow = robust_envelope(&net, &s, &u, &set, &ecfg).unwrap();
    let wide = robust_envelope(&net, &s, &u, &set.scaled_demand(2.0), &ecfg).unwrap();
    for k in 0..narrow.steps() {
        for i in 0..2 {
            assert!(wide.y_lo[k][i] <= narrow.y_lo[k][i] + 1e-12, "k={k} i={i}");
            assert!(wide.y_hi[k][i] >= narrow.y_hi[k][i] - 1e-12, "k={k} i={i}");
        }
    }
}

#[test]
fn vertex_list_starts_with_nominal_and_the_two_corners() {
    let (net, _) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    let nd = net.demand_profiles.len();
    let v = vertex_realizations(&set, nd, &EnvelopeConfig::default());
    assert_eq!(v.len(), 3 + 32);
    assert_eq!(v[0], set.nominal(nd));
    assert!(v[1].demand_mult[0].iter().all(|&m| m == 0.95));
    assert!(v[2].demand_mult[23].iter().all(|&m| m == 1.10));
}

#[test]
fn lipschitz_zones_vanish_without_uncertainty() {
    let (net, s) = bench();
    let set = UncertaintyConfig::zero().build(&net).unwrap();
    let z = chloros::rfmpc::lipschitz_zones_offline(&net, &s, &set, 4, &EnvelopeConfig::default()).unwrap();
    assert_eq!(z.max(), 0.0);
    assert_eq!(z.horizon(), 288);
}

#[test]
fn lipschitz_zones_scale_with_the_demand_radius() {
    let (net, s) = bench();
    let set = cfg(0.05, 0.0).build(&net).unwrap();
    let est = lipschitz_estimate(&net, &s, &set, 4, 1).unwrap();
    assert!(est.demand.iter().all(|&l| l > 0.0));
    let z1 = est.zones(&set, 0.5);
    let z2 = est.zones(&set.scaled_demand(2.0), 0.5);
    for (a, b) in z1.iter().zip(&z2) {
        assert!((b - 2.0 * a).abs() < 1e-12);
    }
}

#[test]
fn lipschitz_estimate_needs_two_probes() {
    let (net, s) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    assert!(matches!(lipschitz_estimate(&net, &s, &set, 1, 0), Err(Error::Config(_))));
}

#[test]
fn flow_extreme_vertices_bound_every_sampled_pipe_flow() {
    let (net, s) = bench();
    let set = UncertaintyConfig::default().build(&net).unwrap();
    let nd = net.demand_profiles.len();
    let vertices = flow_extreme_vertices(&net, &set).unwrap();
    assert!(!vertices.is_empty() && vertices.len() <= 2 * net.pipes.len());
    let flows = |r: &Realization| Hydraulics::build(&net, &s, Some(r)).unwrap().pipe_flow;
    let corner: Vec<_> = vertices.iter().map(flows).collect();
    for seed in 0..50 {
        let q = flows(&sample_realization(&set, nd, seed));
        for k in (0..288).step_by(12) {
            for p in 0..net.pipes.len() {
                let lo = corner.iter().map(|c| c[k][p]).fold(f64::INFINITY, f64::min);
                let hi = corner.iter().map(|c| c[k][p]).fold(f64::NEG_INFINITY, f64::max);
                assert!(q[k][p] >= lo - 1e-9 && q[k][p] <= hi + 1e-9, "seed {seed} step {k} pipe {p}");
            }
        }
    }
}
