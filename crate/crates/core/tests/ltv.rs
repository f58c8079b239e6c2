mod common;

use chloros::benchmark::build_benchmark16;
use chloros::ltv::{extract, LtvResponseModel};
use chloros::network::{Network, TimeGrid};
use chloros::plant::*;
use chloros::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_of(net: &Network) -> LtvResponseModel {
    let s = demand_tracking_schedule(net, &hourly_demand(net)).unwrap();
    let hyd = Hydraulics::build(net, &s, None).unwrap();
    extract(net, &s, &hyd.uniform_state(0, net.initial_conc)).unwrap()
}

fn benchmark_model() -> (Network, HydraulicSchedule, LtvResponseModel) {
    let net = build_benchmark16();
    let s = optimize_pump_schedule(&net, &hourly_demand(&net), &Tariff::benchmark()).unwrap();
    let hyd = Hydraulics::build(&net, &s, None).unwrap();
    let m = extract(&net, &s, &hyd.uniform_state(0, net.initial_conc)).unwrap();
    (net, s, m)
}

#[test]
fn three_step_pipe_with_per_step_factor_point_nine() {
    // 2.5 m³ at 10 m³/h is 3 steps; exp(-k Δt) = 0.9 per step
    let rate = -(0.9f64).ln() * 12.0;
    let net = common::line(2.5, rate, 10.0, TimeGrid::default());
    let m = model_of(&net);
    for k in 0..10 {
        let want = if k == 3 { 0.729 } else { 0.0 };
        assert!((m.gain(0, k, 0, 0) - want).abs() < 1e-12, "k={k}: {}", m.gain(0, k, 0, 0));
    }
}

#[test]
fn zero_input_gives_the_free_response() {
    let (_, _, m) = benchmark_model();
    assert_eq!(m.predict(&vec![0.0; m.horizon * m.nu()]).unwrap(), m.y_free);
}

#[test]
fn doubling_the_input_doubles_the_forced_response() {
    let (_, _, m) = benchmark_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u: Vec<f64> = (0..m.horizon * m.nu()).map(|_| rng.gen_range(0.0..0.5)).collect();
    let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
    let y1 = m.predict(&u).unwrap();
    let y2 = m.predict(&u2).unwrap();
    for ((a, b), f) in y1.iter().zip(&y2).zip(&m.y_free) {
        assert!(((b - f) - 2.0 * (a - f)).abs() < 1e-12);
    }
}

#[test]
fn identity_model_returns_the_input() {
    let m = LtvResponseModel::from_dense(1, 1, 6, |_, k, _, l| if k == l { 1.0 } else { 0.0 }, vec![0.0; 6]).unwrap();
    let u = vec![0.1, 0.5, 0.2, 0.9, 0.0, 0.3];
    assert_eq!(m.predict(&u).unwrap(), u);
}

#[test]
fn wrong_input_length_is_rejected() {
    let m = LtvResponseModel::from_dense(1, 1, 4, |_, _, _, _| 0.5, vec![0.0; 4]).unwrap();
    assert!(matches!(m.predict(&[0.0; 3]), Err(Error::DimensionMismatch(_))));
}

#[test]
fn benchmark_prediction_matches_simulation_with_source_chlorine() {
    let (net, s, m) = benchmark_model();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let u: Vec<Vec<f64>> = (0..288).map(|_| net.boosters.iter().map(|b| rng.gen_range(b.u_min..=b.u_max)).collect()).collect();
        let y = m.predict(&u.concat()).unwrap();
        let t = simulate(&net, &s, &Tariff::benchmark(), &u, None).unwrap();
        let worst = (0..288).flat_map(|k| (0..2).map(move |i| (k, i))).map(|(k, i)| (y[k * 2 + i] - t.y[k][i]).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-9, "{worst:e}");
    }
}

#[test]
fn later_inputs_do_not_move_earlier_outputs() {
    let (_, _, m) = benchmark_model();
    let base = vec![0.3; m.horizon * m.nu()];
    let y0 = m.predict(&base).unwrap();
    for l in [0, 50, 143, 287] {
        for j in 0..m.nu() {
            let mut u = base.clone();
            u[l * m.nu() + j] += 1.0;
            let y = m.predict(&u).unwrap();
            // the monitored nodes are not booster nodes, so even k = l is unaffected
            for k in 0..=l {
                for i in 0..m.ny() {
                    assert_eq!(y[k * m.ny() + i], y0[k * m.ny() + i], "l={l} j={j} k={k}");
                }
            }
        }
    }
}

#[test]
fn gains_are_fractions_and_rows_sum_to_at_most_one() {
    let (_, _, m) = benchmark_model();
    for k in 0..m.horizon {
        for i in 0..m.ny() {
            let row = m.row(i, k);
            assert!(row.iter().all(|g| (0.0..=1.0).contains(g)));
            let sum: f64 = row.iter().sum();
            assert!(sum <= 1.0 + 1e-12, "i={i} k={k}: {sum}");
        }
    }
}

#[test]
fn full_setpoint_output_rises_monotonically_on_a_decaying_path() {
    let net = common::line(6.0, 0.3, 10.0, TimeGrid::default());
    let m = model_of(&net);
    let y = m.predict(&vec![net.boosters[0].u_max; m.horizon]).unwrap();
    assert!(y.windows(2).all(|w| w[1] >= w[0]));
    assert!(*y.last().unwrap() > 0.0);
}

#[test]
fn dump_round_trips() {
    let (_, _, m) = benchmark_model();
    let mut buf = Vec::new();
    m.write_to(&mut buf).unwrap();
    let back = LtvResponseModel::read_from(buf.as_slice()).unwrap();
    assert_eq!(back.gains, m.gains);
    assert_eq!(back.y_free, m.y_free);
    assert_eq!(back.horizon, m.horizon);

    buf[0] = b'X';
    assert!(matches!(LtvResponseModel::read_from(buf.as_slice()), Err(Error::ModelFile(_))));
}

#[test]
fn window_dump_keeps_window_relative_gains() {
    let (_, _, m) = benchmark_model();
    let w = LtvResponseModel::window(m.gains.clone(), 100, 50, m.y_free[200..300].to_vec()).unwrap();
    let mut buf = Vec::new();
    w.write_to(&mut buf).unwrap();
    let back = LtvResponseModel::read_from(buf.as_slice()).unwrap();
    for k in 0..50 {
        for l in 0..=k {
            assert_eq!(back.gain(1, k, 0, l), w.gain(1, k, 0, l));
        }
    }
    let u = vec![0.2; 100];
    assert_eq!(back.predict(&u).unwrap(), w.predict(&u).unwrap());
}
