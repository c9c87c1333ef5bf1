use std::fs;
use std::path::{Path, PathBuf};

use feedstation::simharness::{
    daily_series, generate_trace, one_night_scenario, read_station_trace, replay, run_scenario, simulate, station_config,
    station_inputs, torpor_scenario, trend_slope, write_station_trace, Scenario,
};
use feedstation::station::StationInput;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Compare against a frozen file; `UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = data(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{} differs; rerun with UPDATE_GOLDEN=1 if the change is intended", path.display());
}

#[test]
fn same_seed_same_report() {
    let sc = Scenario::load(&data("two_lemurs.scenario")).unwrap();
    let a = run_scenario(&sc).unwrap().to_lines();
    let b = run_scenario(&sc).unwrap().to_lines();
    assert_eq!(a, b);

    let mut other = sc.clone();
    other.seed += 1;
    assert_ne!(run_scenario(&other).unwrap().to_lines(), a);
}

#[test]
fn scenario_report_is_frozen() {
    let sc = Scenario::load(&data("two_lemurs.scenario")).unwrap();
    let report = run_scenario(&sc).unwrap();
    assert_eq!(report.truth_visits, 5);
    assert_eq!(report.matched_visits, 5);
    assert!(report.drained);
    golden("two_lemurs.report", &report.to_lines());
}

#[test]
fn recorded_trace_replays_to_frozen_report() {
    let sc = Scenario::load(&data("overlap.scenario")).unwrap();
    let trace = generate_trace(&sc).unwrap();
    let inputs: Vec<StationInput> = station_inputs(&sc, &trace)
        .into_iter()
        .filter(|i| matches!(i, StationInput::Sample(_) | StationInput::Detection(_)))
        .collect();
    let mut text = Vec::new();
    write_station_trace(&mut text, &inputs).unwrap();
    let text = String::from_utf8(text).unwrap();
    golden("overlap.trace", &text);

    let cfg = station_config(&sc);
    let read = read_station_trace(text.as_bytes(), cfg.station_id()).unwrap();
    assert_eq!(read.len(), inputs.len());
    let report = replay("overlap replay", read, cfg, sc.seed).unwrap();
    assert_eq!((report.station_visits, report.server_visits), (2, 2));
    golden("overlap_replay.report", &report.to_lines());
}

#[test]
fn torpor_trend_sign_is_recovered() {
    for trend in [0.3, -0.25] {
        let sc = torpor_scenario(11, 29, trend);
        let run = simulate(&sc).unwrap();
        let cfg = station_config(&sc);
        for animal in &sc.animals {
            let series = daily_series(&run.server_visits, animal.tag, cfg.epoch_s);
            assert!(series.len() >= 25, "{}: {} days with visits", animal.name, series.len());
            let slope = trend_slope(&series).unwrap();
            assert_eq!(slope.signum(), trend.signum(), "{} slope {slope}", animal.name);
            assert!((slope - trend).abs() < 0.05, "{} slope {slope} vs {trend}", animal.name);
        }
    }
}

#[test]
fn one_night_reaches_the_server_intact() {
    let sc = one_night_scenario(21);
    let report = run_scenario(&sc).unwrap();
    assert_eq!(report.matched_visits, report.truth_visits);
    assert_eq!(report.spurious_visits, 0);
    assert!(report.max_weight_error <= 1.0, "max error {}", report.max_weight_error);
    assert_eq!(report.wrong_tags, 0);
    assert_eq!(report.system_updates, report.expected_system_updates);
    assert!(report.drained);
}

#[test]
fn faults_show_up_in_the_report() {
    let text = fs::read_to_string(data("two_lemurs.scenario")).unwrap();
    let sc = Scenario::parse(&format!("{text}\nrfid_outage_s = 0 1800\nhumidity_fault_s = 300\n")).unwrap();
    let run = simulate(&sc).unwrap();
    let report = run_scenario(&sc).unwrap();
    assert_eq!(report.matched_visits, 5);
    assert!(run.server_visits.iter().all(|v| v.tag.is_none()));
    let status = run.world.server().station_status(station_config(&sc).station_id()).unwrap();
    let errors = status.system.unwrap().errors;
    assert!(errors.iter().any(|e| e == "rfid") && errors.iter().any(|e| e == "humidity"), "{errors:?}");
}
