mod common;

use chloros::benchmark::build_benchmark16;
use chloros::network::{Network, NodeKind, TimeGrid};
use chloros::plant::hydraulics::nodal_injection;
use chloros::plant::quality::mix;
use chloros::plant::*;
use chloros::uncertainty::{sample_realization, Realization, UncertaintyConfig};
use chloros::Error;
use nalgebra::{DMatrix, DVector};

fn nominal(net: &Network) -> Realization {
    UncertaintyConfig::zero().build(net).unwrap().nominal(net.demand_profiles.len())
}

fn benchmark_schedule(net: &Network) -> HydraulicSchedule {
    optimize_pump_schedule(net, &hourly_demand(net), &Tariff::benchmark()).unwrap()
}

/// Demand of 1 m³/h at node 2, supplied by the pump into node 1.
fn unit_demand(net: &Network) -> Vec<f64> {
    net.nodes.iter().map(|n| if n.id == 2 { 1.0 } else { 0.0 }).collect()
}

#[test]
fn series_path_carries_the_demand() {
    let net = common::line(1.0, 0.1, 1.0, TimeGrid::default());
    let q = solve_flows(&net, &[1.0], &[], &unit_demand(&net), 0).unwrap();
    assert!((q[0] - 1.0).abs() < 1e-12);
}

#[test]
fn equal_parallel_pipes_split_evenly() {
    let net = common::parallel(1.0, 1.0);
    let q = solve_flows(&net, &[1.0], &[], &unit_demand(&net), 0).unwrap();
    assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12, "{q:?}");
}

#[test]
fn unequal_parallel_pipes_match_kkt_solution() {
    let (r1, r2) = (1.0, 3.0);
    let net = common::parallel(r1, r2);
    let q = solve_flows(&net, &[1.0], &[], &unit_demand(&net), 0).unwrap();
    // stationarity 2 r_i q_i + λ = 0, feasibility q_1 + q_2 = 1
    let k = DMatrix::from_row_slice(3, 3, &[2.0 * r1, 0.0, 1.0, 0.0, 2.0 * r2, 1.0, 1.0, 1.0, 0.0]);
    let sol = k.lu().solve(&DVector::from_vec(vec![0.0, 0.0, 1.0])).unwrap();
    assert!((q[0] - sol[0]).abs() < 1e-12 && (q[1] - sol[1]).abs() < 1e-12, "{q:?} vs {sol}");
    assert!((q[0] - 0.75).abs() < 1e-12);
}

#[test]
fn unbalanced_supply_is_rejected_with_step() {
    let net = common::line(1.0, 0.1, 1.0, TimeGrid::default());
    let err = solve_flows(&net, &[2.0], &[], &unit_demand(&net), 7).unwrap_err();
    assert!(matches!(err, Error::HydraulicInfeasible { step: 7, .. }), "{err}");
}

#[test]
fn flat_tariff_cost_is_energy_times_price() {
    let net = common::line(1.0, 0.1, 10.0, TimeGrid::default());
    let s = optimize_pump_schedule(&net, &hourly_demand(&net), &Tariff::flat(0.1)).unwrap();
    let want = 0.5 * 10.0 * 24.0 * 0.1;
    assert!((s.energy_cost(&net, &Tariff::flat(0.1), 0) - want).abs() < 1e-6);
}

#[test]
fn two_hours_at_peak_price() {
    // 0.5 kWh/m³ at 200 m³/h is 100 kW.
    let net = common::line(1.0, 0.1, 10.0, TimeGrid::default());
    let s = HydraulicSchedule {
        pump_flow: vec![vec![200.0], vec![200.0]],
        tank_flow: vec![vec![], vec![]],
        pipe_flow: vec![vec![200.0], vec![200.0]],
        tank_level: vec![vec![]; 3],
    };
    assert!((s.energy_cost(&net, &Tariff::benchmark(), 6) - 24.0).abs() < 1e-12);
}

#[test]
fn flow_weighted_mixing() {
    let c = mix(&[(2.0, 1.0), (3.0, 0.5)]).unwrap();
    assert!((c - 0.7).abs() < 1e-15);
    assert_eq!(mix(&[]), None);
}

#[test]
fn two_hours_residence_at_half_per_hour_decays_to_inverse_e() {
    // 20 m³ at 10 m³/h is 2 h, i.e. 24 quality steps.
    let net = common::line(20.0, 0.5, 10.0, TimeGrid::default());
    let s = demand_tracking_schedule(&net, &hourly_demand(&net)).unwrap();
    let u = vec![vec![1.0]; 288];
    let t = simulate(&net, &s, &Tariff::flat(0.1), &u, None).unwrap();
    for k in 0..24 {
        assert_eq!(t.y[k][0], 0.0);
    }
    for k in 24..288 {
        assert!((t.y[k][0] - (-1.0f64).exp()).abs() < 1e-12, "step {k}: {}", t.y[k][0]);
    }
}

#[test]
fn full_setpoint_arrives_after_the_path_delay_without_decay() {
    // 2.5 m³ at 10 m³/h is 3 quality steps.
    let mut net = common::line(2.5, 0.0, 10.0, TimeGrid::default());
    net.initial_conc = 0.25;
    let s = demand_tracking_schedule(&net, &hourly_demand(&net)).unwrap();
    let u_max = net.boosters[0].u_max;
    let u = vec![vec![u_max]; 288];
    let t = simulate(&net, &s, &Tariff::flat(0.1), &u, None).unwrap();
    // buffer starts [0.25, 0.25, 0.25]; each step reads the front and
    // pushes u_max at the back
    assert_eq!(&t.y[..4].iter().map(|r| r[0]).collect::<Vec<_>>(), &[0.25, 0.25, 0.25, u_max]);
    assert!(t.y[3..].iter().all(|r| r[0] == u_max));
}

fn chlorine_free(mut net: Network) -> Network {
    net.initial_conc = 0.0;
    for n in net.nodes.iter_mut().filter(|n| n.kind == NodeKind::Source) {
        n.source_conc = 0.0;
    }
    net
}

#[test]
fn no_chlorine_anywhere_gives_zero_outputs() {
    let net = chlorine_free(build_benchmark16());
    let s = benchmark_schedule(&net);
    let u = vec![vec![0.0, 0.0]; 288];
    let t = simulate(&net, &s, &Tariff::benchmark(), &u, None).unwrap();
    assert!(t.y.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn simulation_is_deterministic() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    let set = UncertaintyConfig::default().build(&net).unwrap();
    let r = sample_realization(&set, net.demand_profiles.len(), 4);
    let u: Vec<Vec<f64>> = (0..288).map(|k| vec![0.3 + 0.001 * (k % 17) as f64, 0.35]).collect();
    let a = simulate(&net, &s, &Tariff::benchmark(), &u, Some(&r)).unwrap();
    let b = simulate(&net, &s, &Tariff::benchmark(), &u, Some(&r)).unwrap();
    assert_eq!(a.csv_bytes().unwrap(), b.csv_bytes().unwrap());
    assert_eq!(a.y, b.y);
}

#[test]
fn schedule_balances_every_node() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    let demand = hourly_demand(&net);
    let idx = net.node_index();
    for h in 0..s.steps() {
        let mut residual = nodal_injection(&net, &s.pump_flow[h], &s.tank_flow[h], &demand[h]);
        for (p, q) in net.pipes.iter().zip(&s.pipe_flow[h]) {
            residual[idx[&p.from]] -= q;
            residual[idx[&p.to]] += q;
        }
        let worst = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(worst <= 1e-9, "hour {h}: residual {worst:e}");
    }
}

#[test]
fn schedule_respects_tank_and_pump_limits() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    let dt = net.time_grid.dt_hydraulic_h();
    for h in 0..s.steps() {
        for (p, q) in net.pumps.iter().zip(&s.pump_flow[h]) {
            assert!((0.0..=p.flow_max).contains(q), "pump {} flow {q}", p.id);
        }
        for (j, t) in net.tanks.iter().enumerate() {
            let next = s.tank_level[h][j] - s.tank_flow[h][j] * dt / t.area;
            assert_eq!(s.tank_level[h + 1][j], next);
            assert!(next >= t.level_min - 1e-9 && next <= t.level_max + 1e-9, "tank {} level {next}", t.node_id);
        }
    }
    for (j, t) in net.tanks.iter().enumerate() {
        assert!(s.tank_level[s.steps()][j] >= t.level_init - 1e-6);
    }
}

#[test]
fn outputs_stay_within_input_and_source_bounds() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    let u_max = net.boosters.iter().map(|b| b.u_max).fold(0.0, f64::max);
    let cap = net.nodes.iter().map(|n| n.source_conc).fold(u_max.max(net.initial_conc), f64::max);
    let u = vec![vec![net.boosters[0].u_max, net.boosters[1].u_max]; 288];
    let t = simulate(&net, &s, &Tariff::benchmark(), &u, Some(&nominal(&net))).unwrap();
    assert!(t.y.iter().flatten().all(|&v| (0.0..=cap + 1e-12).contains(&v)));
}

#[test]
fn faster_decay_never_raises_outputs() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    let base = nominal(&net);
    let u = vec![vec![0.4, 0.4]; 288];
    let y0 = simulate(&net, &s, &Tariff::benchmark(), &u, Some(&base)).unwrap().y;
    for p in [0, 7, 20] {
        let mut r = base.clone();
        r.decay_rate[p] *= 3.0;
        let y1 = simulate(&net, &s, &Tariff::benchmark(), &u, Some(&r)).unwrap().y;
        for (a, b) in y0.iter().flatten().zip(y1.iter().flatten()) {
            assert!(*b <= a + 1e-12, "pipe {p}: {b} > {a}");
        }
    }
}

#[test]
fn outputs_are_linear_in_the_injections() {
    let net = chlorine_free(build_benchmark16());
    let s = benchmark_schedule(&net);
    let tariff = Tariff::benchmark();
    let u1: Vec<Vec<f64>> = (0..288).map(|k| vec![0.2 + 0.1 * ((k as f64) * 0.1).sin(), 0.3]).collect();
    let u2: Vec<Vec<f64>> = (0..288).map(|k| vec![0.1, 0.5 * ((k / 12) % 2) as f64]).collect();
    let (a, b) = (0.7, 1.6);
    let mix_u: Vec<Vec<f64>> = u1.iter().zip(&u2).map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()).collect();
    let y1 = simulate(&net, &s, &tariff, &u1, None).unwrap().y;
    let y2 = simulate(&net, &s, &tariff, &u2, None).unwrap().y;
    let y = simulate(&net, &s, &tariff, &mix_u, None).unwrap().y;
    for k in 0..288 {
        for i in 0..2 {
            assert!((y[k][i] - (a * y1[k][i] + b * y2[k][i])).abs() <= 1e-9);
        }
    }
}

#[test]
fn plant_tank_levels_follow_mass_balance() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    let hyd = Hydraulics::build(&net, &s, None).unwrap();
    for k in 0..hyd.steps {
        for j in 0..net.tanks.len() {
            assert_eq!(hyd.tank_level[k + 1][j], hyd.tank_level[k][j] - hyd.tank_flow[k][j] * hyd.dt_h / hyd.tank_area[j]);
        }
    }
}

#[test]
fn csv_has_the_documented_columns() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    let u = vec![vec![0.3, 0.3]; 288];
    let t = simulate(&net, &s, &Tariff::benchmark(), &u, None).unwrap();
    let text = String::from_utf8(t.csv_bytes().unwrap()).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "time_s,y_16,y_8,u_5,u_10,level_17,level_18,level_19,flow_101,flow_201,energy_cost_cumulative");
    assert_eq!(text.lines().count(), 289);
    assert!(text.lines().nth(2).unwrap().starts_with("300,"));
}

#[test]
fn short_input_is_a_dimension_error() {
    let net = build_benchmark16();
    let s = benchmark_schedule(&net);
    assert!(matches!(
        simulate(&net, &s, &Tariff::benchmark(), &vec![vec![0.3, 0.3]; 10], None),
        Err(Error::DimensionMismatch(_))
    ));
}
