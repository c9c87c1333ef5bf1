mod common;

use feedstation::simharness::{generate_trace, NoiseModel, Scenario, RAMP_MS};
use feedstation::weighing::{ScaleState, WeighingConfig, WeighingEngine, WeighingEvent, WeightSample};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engine_matches_oracle_on_clean_traces(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sc = common::random_clean_scenario(&mut rng, 2_000);
        let trace = generate_trace(&sc).unwrap();
        let got = common::engine_segmentation(&trace.samples);
        let want = common::oracle_segmentation(&trace.samples);
        prop_assert!(common::same_segmentation(&got, &want), "engine {:?}\noracle {:?}", got, want);
    }

    #[test]
    fn entrances_balance_exits(segments in proptest::collection::vec(
        (prop_oneof![Just(0.0), 10.0f64..60.0, 60.0f64..250.0], 1usize..80, 0.0f64..1.5),
        1..40,
    )) {
        let mut e = WeighingEngine::new(WeighingConfig::default());
        let mut t = 0;
        let (mut entered, mut left) = (0i64, 0i64);
        let tally = |events: Vec<WeighingEvent>, entered: &mut i64, left: &mut i64| {
            for ev in events {
                match ev {
                    WeighingEvent::Entrance { .. } => *entered += 1,
                    WeighingEvent::Exit { animals_left, .. } => *left += animals_left as i64,
                    _ => {}
                }
            }
        };
        for (k, (level, len, jitter)) in segments.iter().enumerate() {
            for i in 0..*len {
                let wobble = if (i + k) % 2 == 0 { *jitter } else { -*jitter };
                let events = e.ingest(WeightSample::new(t, level + wobble));
                tally(events, &mut entered, &mut left);
                prop_assert_eq!(entered - left, e.animal_count() as i64);
                t += 50;
            }
        }
        // a long empty stretch always brings the scale back to idle
        for _ in 0..400 {
            let events = e.ingest(WeightSample::new(t, 0.0));
            tally(events, &mut entered, &mut left);
            t += 50;
        }
        let events = e.flush();
        tally(events, &mut entered, &mut left);
        prop_assert_eq!(e.state(), ScaleState::Idle);
        prop_assert_eq!(entered, left);
    }

    #[test]
    fn nested_visits_conserve_weight(
        weights in proptest::collection::vec(25.0f64..150.0, 1..=3),
        exit_order in Just(()).prop_perturb(|_, mut rng| {
            let mut v = vec![0usize, 1, 2];
            for i in (1..3).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            v
        }),
    ) {
        let mut sc = Scenario { noise: NoiseModel::noise_free(), ..Default::default() };
        let ids: Vec<usize> = weights.iter().enumerate().map(|(i, &w)| sc.add_animal(&format!("a{i}"), None, w)).collect();
        let step = 3_000 + RAMP_MS;
        let entries: Vec<i64> = (0..ids.len()).map(|i| 2_000 + i as i64 * step).collect();
        let order: Vec<usize> = exit_order.into_iter().filter(|&i| i < ids.len()).collect();
        let first_exit = entries[ids.len() - 1] + step;
        for (k, &a) in order.iter().enumerate() {
            sc.add_visit(ids[a], entries[a], first_exit + k as i64 * step);
        }
        sc.duration_ms = first_exit + ids.len() as i64 * step + 3_000;
        let trace = generate_trace(&sc).unwrap();
        let visits = common::engine_segmentation(&trace.samples);
        prop_assert_eq!(visits.len(), ids.len());
        let total: f64 = visits.iter().map(|v| v.weight).sum();
        let plateau: f64 = weights.iter().sum();
        prop_assert!((total - plateau).abs() <= 2.0 * ids.len() as f64, "{} vs {}", total, plateau);
    }
}
