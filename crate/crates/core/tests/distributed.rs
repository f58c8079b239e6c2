use chloros::benchmark::{build_benchmark16, build_two_path};
use chloros::distributed::*;
use chloros::ltv::{extract, LtvResponseModel};
use chloros::network::Network;
use chloros::plant::*;
use chloros::rfmpc::{LoopOptions, MpcTask};
use chloros::uncertainty::UncertaintyConfig;
use chloros::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_of(net: &Network) -> (HydraulicSchedule, LtvResponseModel) {
    let s = demand_tracking_schedule(net, &hourly_demand(net)).unwrap();
    let hyd = Hydraulics::build(net, &s, None).unwrap();
    let m = extract(net, &s, &hyd.uniform_state(0, net.initial_conc)).unwrap();
    (s, m)
}

fn zone(id: &str, boosters: &[u32], outputs: &[u32]) -> Zone {
    Zone {
        id: id.into(),
        boosters: boosters.to_vec(),
        outputs: outputs.to_vec(),
    }
}

#[test]
fn per_booster_partition_of_the_benchmark_is_the_two_zone_split() {
    let net = build_benchmark16();
    assert_eq!(ZonePartition::per_booster(&net), ZonePartition::benchmark());
    let idx = ZonePartition::benchmark().resolve(&net).unwrap();
    assert_eq!((idx[0].inputs.clone(), idx[0].outputs.clone(), idx[0].others.clone()), (vec![0], vec![0], vec![1]));
    assert_eq!((idx[1].inputs.clone(), idx[1].outputs.clone(), idx[1].others.clone()), (vec![1], vec![1], vec![0]));
}

#[test]
fn invalid_partitions_are_named() {
    let net = build_benchmark16();
    let cases = [
        vec![zone("A", &[5], &[16]), zone("A", &[10], &[8])],
        vec![zone("A", &[], &[16]), zone("B", &[5, 10], &[8])],
        vec![zone("A", &[5, 7], &[16]), zone("B", &[10], &[8])],
        vec![zone("A", &[5], &[16]), zone("B", &[5, 10], &[8])],
        vec![zone("A", &[5], &[16, 8])],
        vec![zone("A", &[5, 10], &[16])],
    ];
    let words = ["duplicate zone id", "needs a booster", "not a booster", "in two zones", "booster 10 is in no zone", "output 8 is in no zone"];
    for (zones, word) in cases.into_iter().zip(words) {
        let err = ZonePartition { zones }.resolve(&net).unwrap_err();
        assert!(matches!(err, Error::InvalidPartition(_)));
        assert!(err.to_string().contains(word), "{err} lacks {word:?}");
    }
}

#[test]
fn independent_branches_have_no_cross_gains() {
    let net = build_two_path();
    let (_, m) = model_of(&net);
    let agents = decompose(&m, &net, &ZonePartition::per_booster(&net)).unwrap();
    for a in &agents {
        let pairs = || (0..m.horizon).flat_map(|k| (0..=k).map(move |l| (k, l)));
        assert!(pairs().all(|(k, l)| a.cross.gain(0, k, 0, l) == 0.0));
        assert!(pairs().any(|(k, l)| a.own.gain(0, k, 0, l) > 0.0));
    }
}

#[test]
fn blocks_reassemble_the_centralized_model() {
    let net = build_benchmark16();
    let (_, m) = model_of(&net);
    let agents = decompose(&m, &net, &ZonePartition::benchmark()).unwrap();
    let mut any_cross = false;
    for a in &agents {
        let i = a.index.outputs[0];
        for k in 0..m.horizon {
            assert_eq!(a.own.y_free[k], m.y_free[k * m.ny() + i]);
            for l in 0..=k {
                assert_eq!(a.own.gain(0, k, 0, l), m.gain(i, k, a.index.inputs[0], l));
                let c = a.cross.gain(0, k, 0, l);
                assert_eq!(c, m.gain(i, k, a.index.others[0], l));
                any_cross |= c > 0.0;
            }
        }
    }
    assert!(any_cross, "the benchmark zones interact");
}

#[test]
fn interaction_term_is_the_cross_block_times_the_plan() {
    let net = build_benchmark16();
    let (_, m) = model_of(&net);
    let agents = decompose(&m, &net, &ZonePartition::benchmark()).unwrap();
    let a = &agents[1];
    let h = m.horizon;
    assert_eq!(a.interaction_free_response(&vec![0.0; h]).unwrap(), a.own.y_free);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p1: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..1.5)).collect();
    let p2: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..1.5)).collect();
    let d: Vec<f64> = p2.iter().zip(&p1).map(|(a, b)| a - b).collect();
    let y1 = a.interaction_free_response(&p1).unwrap();
    let y2 = a.interaction_free_response(&p2).unwrap();
    let gd = a.cross.predict(&d).unwrap();
    for k in 0..h {
        assert!((y2[k] - y1[k] - gd[k]).abs() < 1e-12);
    }
}

#[test]
fn aligned_plans_shift_and_hold_the_last_value() {
    let p = AgentPlan {
        agent: 0,
        issued_at: 10,
        u: vec![1.0, 2.0, 3.0],
    };
    assert_eq!(p.aligned(1, 11, 5), vec![2.0, 3.0, 3.0, 3.0, 3.0]);
    assert_eq!(p.aligned(1, 10, 2), vec![1.0, 2.0]);
    let two = AgentPlan {
        agent: 1,
        issued_at: 0,
        u: vec![1.0, 10.0, 2.0, 20.0],
    };
    assert_eq!(two.aligned(2, 1, 2), vec![2.0, 20.0, 2.0, 20.0]);
}

#[test]
fn plan_hash_tracks_content() {
    let p = AgentPlan {
        agent: 0,
        issued_at: 12,
        u: vec![0.5, 0.25],
    };
    assert_eq!(p.hash(), p.clone().hash());
    assert_eq!(p.hash().len(), 64);
    let mut q = p.clone();
    q.u[1] = 0.26;
    assert_ne!(p.hash(), q.hash());
}

#[test]
fn mailbox_starts_empty_and_keeps_the_latest_plan() {
    let mut mb = Mailbox::new(&[1, 2]);
    assert_eq!(mb.read(1).u, vec![0.0, 0.0]);
    let plan = |at: usize, v: f64| AgentPlan {
        agent: 0,
        issued_at: at,
        u: vec![v],
    };
    mb.publish(plan(0, 0.4));
    mb.publish(plan(12, 0.7));
    assert_eq!(mb.read(0), &plan(12, 0.7));
    assert_eq!(mb.read(1).u, vec![0.0, 0.0]);
}

#[test]
fn every_agent_publishes_once_per_cycle() {
    let net = build_two_path();
    let (s, _) = model_of(&net);
    let set = UncertaintyConfig::zero().build(&net).unwrap();
    let task = MpcTask::from_network(&net);
    let out = run_drfmpc(&net, &s, &Tariff::benchmark(), &ZonePartition::per_booster(&net), &task, &set, &set.nominal(2), LoopOptions::default()).unwrap();
    let cycles = 288usize.div_ceil(task.control_horizon);
    assert_eq!(out.messages.len(), 2 * cycles);
    assert_eq!(out.trace_jsonl().unwrap().lines().count(), 2 * cycles);
    for pair in out.messages.chunks(2) {
        assert_eq!(pair[0].step, pair[1].step);
        assert_eq!((pair[0].from.as_str(), pair[1].from.as_str()), ("A", "B"));
    }
    assert_eq!(out.log.rows.len(), 288);
    assert_eq!(out.log.agents.len(), 2);
    assert_eq!(out.log.violation_count(), 0);
}
