//! Simulate a month of visits by animals gaining or losing weight and
//! recover each animal's daily trend from what the server stored.
//!
//! `cargo run --example weight_trend -- [seed] [days] [trend_g_per_day]`

use feedstation::simharness::{daily_series, simulate, station_config, torpor_scenario, trend_slope};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let days = args.next().and_then(|s| s.parse().ok()).unwrap_or(29);
    let trend = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.3);

    let sc = torpor_scenario(seed, days, trend);
    let run = simulate(&sc).expect("generated scenario is valid");
    let epoch = station_config(&sc).epoch_s;
    println!("{} visits simulated, {} stored", run.trace.truth.len(), run.server_visits.len());
    println!("{:<10} {:>5} {:>12}", "animal", "days", "g per day");
    for animal in &sc.animals {
        let series = daily_series(&run.server_visits, animal.tag, epoch);
        let slope = trend_slope(&series).map_or("n/a".to_string(), |s| format!("{s:+.3}"));
        println!("{:<10} {:>5} {:>12}", animal.name, series.len(), slope);
    }
}
