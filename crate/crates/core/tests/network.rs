mod common;

use chloros::benchmark::build_benchmark16;
use chloros::network::{apply_event, validate, with_events_until, NodeKind, ScenarioEvent};
use chloros::Error;

#[test]
fn benchmark_validates() {
    let report = validate(&build_benchmark16());
    assert!(report.is_empty(), "{report}");
}

#[test]
fn zero_volume_pipe_is_reported() {
    let mut net = build_benchmark16();
    net.pipes[3].volume = 0.0;
    assert!(validate(&net).contains("pipe volume must be > 0"));
}

#[test]
fn unreachable_monitored_node_is_reported() {
    let mut net = common::line(1.0, 0.1, 1.0, Default::default());
    net.nodes.push(common::node(3, NodeKind::Junction));
    net.monitored.push(common::monitored(3));
    let report = validate(&net);
    assert!(report.contains("unreachable monitored node 3"), "{report}");
}

#[test]
fn report_lists_every_problem() {
    let mut net = build_benchmark16();
    net.pipes[0].volume = -1.0;
    net.pipes[1].resistance = 0.0;
    net.tanks[0].level_init = net.tanks[0].level_max + 1.0;
    let report = validate(&net);
    assert!(report.violations.len() >= 3, "{report}");
    assert!(report.contains("pipe resistance must be > 0"));
    assert!(report.contains("level_min <= level_init <= level_max"));
}

#[test]
fn validate_is_idempotent_and_pure() {
    let mut net = build_benchmark16();
    net.pipes[2].volume = 0.0;
    let before = net.clone();
    let a = validate(&net);
    let b = validate(&net);
    assert_eq!(a, b);
    assert_eq!(net, before);
}

#[test]
fn benchmark_is_deterministic() {
    let a = serde_json::to_string(&build_benchmark16()).unwrap();
    let b = serde_json::to_string(&build_benchmark16()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn benchmark_roles() {
    let net = build_benchmark16();
    let ids: Vec<u32> = net.nodes.iter().filter(|n| n.kind == NodeKind::Junction).map(|n| n.id).collect();
    assert_eq!(ids, (1..=16).collect::<Vec<_>>());
    let tanks: Vec<u32> = net.tanks.iter().map(|t| t.node_id).collect();
    assert_eq!(tanks, vec![17, 18, 19]);
    let mut pumps: Vec<u32> = net.pumps.iter().map(|p| p.id).collect();
    pumps.sort();
    assert_eq!(pumps, vec![101, 201]);
    let mut sources: Vec<u32> = net.nodes.iter().filter(|n| n.kind == NodeKind::Source).map(|n| n.id).collect();
    sources.sort();
    assert_eq!(sources, vec![100, 200]);
}

/// A pipe whose removal leaves every node reachable.
fn redundant_pipe(net: &chloros::network::Network) -> u32 {
    net.pipes
        .iter()
        .map(|p| p.id)
        .find(|&id| {
            let mut n = net.clone();
            n.pipes.retain(|p| p.id != id);
            validate(&n).is_empty()
        })
        .expect("benchmark has loops")
}

#[test]
fn burst_of_redundant_pipe_keeps_network_connected() {
    let net = build_benchmark16();
    let id = redundant_pipe(&net);
    let out = apply_event(&net, &ScenarioEvent::PipeBurst { at_step: 0, pipe_id: id }).unwrap();
    assert_eq!(out.pipes.len(), 26);
    assert!(validate(&out).is_empty());
    // everything else untouched
    let mut expected = net.clone();
    expected.pipes.retain(|p| p.id != id);
    assert_eq!(out, expected);
}

#[test]
fn burst_of_only_feed_of_node_16_splits_the_network() {
    let net = build_benchmark16();
    let into_16: Vec<u32> = net.pipes.iter().filter(|p| p.from == 16 || p.to == 16).map(|p| p.id).collect();
    assert_eq!(into_16.len(), 1, "node 16 hangs off a single pipe");
    let err = apply_event(&net, &ScenarioEvent::PipeBurst { at_step: 10, pipe_id: into_16[0] }).unwrap_err();
    assert!(matches!(err, Error::NetworkSplit(_)));
    assert!(err.to_string().contains("network split"), "{err}");
}

#[test]
fn demand_surge_scales_from_its_step() {
    let net = build_benchmark16();
    let node = 3;
    let before = net.demand_profiles.iter().find(|d| d.node_id == node).unwrap().values.clone();
    let out = apply_event(&net, &ScenarioEvent::DemandSurge { at_step: 100, node_id: node, multiplier: 1.5 }).unwrap();
    let after = &out.demand_profiles.iter().find(|d| d.node_id == node).unwrap().values;
    for k in 0..before.len() {
        let want = if k >= 100 { before[k] * 1.5 } else { before[k] };
        assert_eq!(after[k], want, "step {k}");
    }
    let others = |n: &chloros::network::Network| n.demand_profiles.iter().filter(|d| d.node_id != node).cloned().collect::<Vec<_>>();
    assert_eq!(others(&out), others(&net));
}

#[test]
fn unknown_pipe_is_an_error() {
    let net = build_benchmark16();
    assert!(matches!(
        apply_event(&net, &ScenarioEvent::PipeBurst { at_step: 0, pipe_id: 999 }),
        Err(Error::UnknownElement(_))
    ));
}

#[test]
fn burst_keeps_pipe_listed_but_inactive_from_its_step() {
    let mut net = build_benchmark16();
    let id = redundant_pipe(&net);
    net.events.push(ScenarioEvent::PipeBurst { at_step: 50, pipe_id: id });
    let seen = with_events_until(&net, None).unwrap();
    assert_eq!(seen.pipes.len(), 27);
    assert!(seen.pipe_active(id, 49));
    assert!(!seen.pipe_active(id, 50));
    // the controller at step 10 does not know about it yet
    let early = with_events_until(&net, Some(10)).unwrap();
    assert!(early.pipe_active(id, 200));
}
