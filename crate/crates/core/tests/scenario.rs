use chloros::network::ScenarioEvent;
use chloros::scenario::{Mode, Scenario};
use chloros::switching::SwitchMode;

#[test]
fn benchmark_round_trips_losslessly() {
    let sc = Scenario::benchmark16();
    let text = sc.to_toml_string().unwrap();
    let back = Scenario::from_toml_str(&text).unwrap();
    assert_eq!(back, sc);
    assert_eq!(back.to_toml_string().unwrap(), text);
}

#[test]
fn burst_scenario_round_trips_with_events_and_supervisor() {
    let sc = Scenario::burst_loop(SwitchMode::MinTime, 24);
    assert!(matches!(sc.network.events[0], ScenarioEvent::PipeBurst { at_step: 100, .. }));
    let back = Scenario::from_toml_str(&sc.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, sc);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.toml");
    let sc = Scenario::benchmark16();
    sc.save(&path).unwrap();
    assert_eq!(Scenario::load(&path).unwrap(), sc);
}

#[test]
fn shipped_benchmark_file_matches_builder() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/benchmark16.toml");
    let sc = Scenario::load(std::path::Path::new(path)).unwrap();
    assert_eq!(sc, Scenario::benchmark16());
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let text = Scenario::benchmark16().to_toml_string().unwrap();
    let bad = text.replacen("schema_version = 1", "schema_version = 1\ncolour = \"blue\"", 1);
    let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");

    let bad = text.replacen("[network.time_grid]", "[network.time_grid]\nleap_seconds = 1", 1);
    let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
    assert!(err.contains("leap_seconds"), "{err}");
}

#[test]
fn malformed_file_reports_line() {
    let text = Scenario::benchmark16().to_toml_string().unwrap();
    let bad = text.replacen("schema_version = 1", "schema_version = = 1", 1);
    let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn missing_tariff_fails_only_in_hierarchy_mode() {
    let mut sc = Scenario::benchmark16();
    sc.tariff = None;
    let err = sc.check(Mode::Hierarchy, false).unwrap_err().to_string();
    assert!(err.contains("[tariff]"), "{err}");
    sc.check(Mode::Centralized, false).unwrap();

    let text = sc.to_toml_string().unwrap();
    assert!(!text.contains("[tariff]"));
    let back = Scenario::from_toml_str(&text).unwrap();
    assert!(back.check(Mode::Hierarchy, false).unwrap_err().to_string().contains("[tariff]"));
}

#[test]
fn switching_needs_supervisor_section() {
    let err = Scenario::benchmark16().check(Mode::Centralized, true).unwrap_err().to_string();
    assert!(err.contains("[supervisor]"), "{err}");
    Scenario::burst_loop(SwitchMode::Linear, 24).check(Mode::Centralized, true).unwrap();
}

#[test]
fn invalid_network_is_reported() {
    let mut sc = Scenario::benchmark16();
    sc.network.pipes[0].volume = 0.0;
    let err = sc.check(Mode::Centralized, false).unwrap_err().to_string();
    assert!(err.contains("pipe volume must be > 0"), "{err}");
}

#[test]
fn mode_names_round_trip() {
    for m in [Mode::Simulate, Mode::Centralized, Mode::Distributed, Mode::Hierarchy] {
        assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
    }
    assert!("central".parse::<Mode>().is_err());
}

#[test]
fn wrong_schema_version_is_rejected() {
    let mut sc = Scenario::benchmark16();
    sc.schema_version = 7;
    let text = sc.to_toml_string().unwrap();
    let err = Scenario::from_toml_str(&text).unwrap_err().to_string();
    assert!(err.contains("schema_version 7"), "{err}");
}
