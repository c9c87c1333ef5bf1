//! Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use feedstation::codec::{
    self, AnimalUpdate, DbSyncRequest, Downlink, ErrorFlags, Message, SystemUpdate, TagOp, TagOpKind, TrapEvent, TrapUpdate,
    Uplink, MAX_PAYLOAD,
};
use feedstation::rfid::TagId;
use feedstation::server::{ManualClock, MemoryStorage, Server, TargetOp};
use feedstation::simharness::{
    generate_trace, link_reliability, match_visits, one_night_scenario, run_scenario, simulate, station_config, table_one,
    visit_detection_rate, NoiseModel, Scenario,
};
use feedstation::trapctl::TrapDatabase;
use feedstation::uplinkqueue::delivery_probability;
use feedstation::weighing::VisitFlags;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(_) => (false, "panicked".to_string()),
    };
    let in_time = limit.is_none_or(|l| took <= l);
    let limit_text = limit.map_or(String::new(), |l| format!(" (limit {} s)", l.as_secs()));
    let ok = pass && in_time;
    println!("{} {name}: {detail}; runtime {:.2} s{limit_text}", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    ok
}

fn weighing_accuracy() -> Outcome {
    let t = table_one(20_240_601, 200);
    let worst = t.rows.iter().map(|r| r.mean_abs_error).fold(0.0, f64::max);
    let missed: usize = t.rows.iter().map(|r| r.missed).sum();
    let per: Vec<String> = t.rows.iter().map(|r| format!("{}={:.3}", r.condition.label(), r.mean_abs_error)).collect();
    Outcome {
        pass: t.overall_mae <= 0.41 && worst <= 0.95 && missed == 0,
        detail: format!(
            "overall MAE {:.3} g (<= 0.41), worst condition {:.3} g (<= 0.95), {missed} runs without a visit [{}]",
            t.overall_mae,
            worst,
            per.join(", ")
        ),
    }
}

fn attribution() -> Outcome {
    let a_tag = TagId::new(756, 5_000_001).unwrap();
    let b_tag = TagId::new(756, 5_000_002).unwrap();
    let build = |noise: NoiseModel| {
        let mut sc = Scenario { name: "overlap".into(), seed: 11, duration_ms: 20_000, noise, p_detect: 1.0, ..Default::default() };
        let a = sc.add_animal("a", Some(a_tag), 40.0);
        let b = sc.add_animal("b", Some(b_tag), 52.0);
        sc.add_visit(a, 2_000, 10_000);
        sc.add_visit(b, 6_000, 14_000);
        sc
    };
    // exhaustive pairing over the noise-free plateaus 0 / 40 / 92 / 52 / 0
    let clean = generate_trace(&build(NoiseModel::noise_free())).unwrap();
    let oracle = common::oracle_segmentation(&clean.samples);
    let oracle_w: Vec<f64> = oracle.iter().map(|s| s.weight).collect();

    let sc = build(NoiseModel::default());
    let run = simulate(&sc).unwrap();
    let mut got: Vec<(Option<TagId>, f64)> = run.server_visits.iter().map(|v| (v.tag, v.weight_grams)).collect();
    got.sort_by(|x, y| x.1.total_cmp(&y.1));
    let pass = oracle_w == vec![40.0, 52.0]
        && got.len() == 2
        && got[0].0 == Some(a_tag)
        && got[1].0 == Some(b_tag)
        && (got[0].1 - 40.0).abs() <= 1.0
        && (got[1].1 - 52.0).abs() <= 1.0;
    Outcome {
        pass,
        detail: format!(
            "oracle {:?}, server {:?}",
            oracle_w,
            got.iter().map(|(t, w)| format!("{}:{w:.1} g", t.map_or("none".into(), |t| t.to_string()))).collect::<Vec<_>>()
        ),
    }
}

fn rfid_detection() -> Outcome {
    let low = visit_detection_rate(0.885, 100_000, 1);
    let high = visit_detection_rate(0.965, 100_000, 2);
    let a_low = 1.0 - (1.0f64 - 0.885).powi(2);
    let a_high = 1.0 - (1.0f64 - 0.965).powi(2);
    Outcome {
        pass: (low - 0.9868).abs() <= 0.003 && (high - 0.99878).abs() <= 0.001,
        detail: format!(
            "p=0.885: {low:.5} (0.9868 +- 0.003, analytic {a_low:.5}); p=0.965: {high:.5} (0.99878 +- 0.001, analytic {a_high:.5})"
        ),
    }
}

fn link_delivery() -> Outcome {
    let p = 0.1418;
    let analytic = delivery_probability(p, 2);
    let bounded = link_reliability(p, Some(2), 1995, 60_000, 3).unwrap();
    let unbounded = link_reliability(p, None, 1995, 60_000, 4).unwrap();
    let sim = bounded.delivered_fraction();
    let pass = (analytic - 0.9799).abs() <= 0.01
        && (sim - 0.9799).abs() <= 0.01
        && unbounded.delivered == unbounded.packets
        && unbounded.drained;
    Outcome {
        pass,
        detail: format!(
            "one retry: analytic {analytic:.4}, simulated {sim:.4} ({}/{} packets) (0.9799 +- 0.01); unbounded: {}/{} delivered, drained {}",
            bounded.delivered, bounded.packets, unbounded.delivered, unbounded.packets, unbounded.drained
        ),
    }
}

fn random_tag<R: Rng>(rng: &mut R) -> TagId {
    TagId::new(rng.random_range(0..1024), rng.random_range(0..(1u64 << 38))).unwrap()
}

fn random_message<R: Rng>(rng: &mut R) -> Message {
    let opt_tag = |rng: &mut R| rng.random_bool(0.7).then(|| random_tag(rng));
    match rng.random_range(0..5) {
        0 => Uplink::System(SystemUpdate {
            seq: rng.random(),
            ts: rng.random(),
            temp_in_dc: rng.random_range(-400..=3695),
            temp_out_dc: rng.random_range(-400..=3695),
            rh_in_dpct: rng.random_range(0..=1000),
            rh_out_dpct: rng.random_range(0..=1000),
            error_flags: ErrorFlags(rng.random()),
        })
        .into(),
        1 => Uplink::Animal(AnimalUpdate {
            seq: rng.random(),
            tag: opt_tag(rng),
            entry_ts: rng.random(),
            exit_ts: rng.random(),
            weight_dg: rng.random_range(0..=65_535),
            std_dg: rng.random_range(0..=1023),
            flags: VisitFlags::from_bits(rng.random_range(0..8)),
        })
        .into(),
        2 => Uplink::DbSync(DbSyncRequest { seq: rng.random(), last_updated: rng.random() }).into(),
        3 => Uplink::Trap(TrapEvent { seq: rng.random(), ts: rng.random(), tag: opt_tag(rng) }).into(),
        _ => {
            let shared = rng.random_bool(0.5).then(|| rng.random_range(0..1024u16));
            let n = rng.random_range(0..=8);
            let mut ops: Vec<TagOp> = (0..n)
                .map(|_| {
                    let tag = match shared {
                        Some(c) => TagId::new(c, rng.random_range(0..(1u64 << 38))).unwrap(),
                        None => random_tag(rng),
                    };
                    TagOp { kind: if rng.random_bool(0.5) { TagOpKind::Add } else { TagOpKind::Remove }, tag }
                })
                .collect();
            let mut u = TrapUpdate {
                server_time: rng.random(),
                master: match rng.random_range(0..3) {
                    0 => None,
                    1 => Some(false),
                    _ => Some(true),
                },
                more_follows: rng.random(),
                part: rng.random(),
                ops: Vec::new(),
            };
            // keep the longest prefix that fits one payload
            while !ops.is_empty() {
                u.ops = ops.clone();
                if codec::encode(&Message::from(u.clone())).is_ok() {
                    break;
                }
                ops.pop();
            }
            u.ops = ops;
            Downlink::TrapUpdate(u).into()
        }
    }
}

fn codec_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bad_round_trips = 0;
    let mut max_len = 0;
    let mut valid = Vec::with_capacity(10_000);
    for _ in 0..10_000 {
        let m = random_message(&mut rng);
        let bytes = codec::encode(&m).unwrap();
        max_len = max_len.max(bytes.len());
        if codec::decode(&bytes).as_ref() != Ok(&m) {
            bad_round_trips += 1;
        }
        valid.push(bytes);
    }
    let prev_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut panics = 0;
    let mut accepted = 0;
    let mut non_canonical = 0;
    let mut buf = Vec::with_capacity(64);
    for i in 0..1_000_000usize {
        buf.clear();
        if i % 2 == 0 {
            let len = rng.random_range(0..=64);
            buf.resize(len, 0);
            rng.fill_bytes(&mut buf);
        } else {
            buf.extend_from_slice(&valid[i % valid.len()]);
            for _ in 0..rng.random_range(1..=3) {
                match rng.random_range(0..3) {
                    0 if !buf.is_empty() => {
                        let k = rng.random_range(0..buf.len() * 8);
                        buf[k / 8] ^= 1 << (k % 8);
                    }
                    1 if !buf.is_empty() => {
                        buf.truncate(rng.random_range(0..buf.len()));
                    }
                    _ => buf.push(rng.random()),
                }
            }
        }
        match panic::catch_unwind(|| codec::decode(&buf)) {
            Err(_) => panics += 1,
            Ok(Ok(m)) => {
                accepted += 1;
                if codec::encode(&m).as_deref() != Ok(buf.as_slice()) {
                    non_canonical += 1;
                }
            }
            Ok(Err(_)) => {}
        }
    }
    panic::set_hook(prev_hook);
    Outcome {
        pass: bad_round_trips == 0 && max_len <= MAX_PAYLOAD && panics == 0 && non_canonical == 0,
        detail: format!(
            "10000 round trips, {bad_round_trips} mismatches, largest payload {max_len} B (<= {MAX_PAYLOAD}); 1000000 fuzz inputs, {panics} panics, {accepted} decoded (all canonical: {})",
            non_canonical == 0
        ),
    }
}

fn trap_sync() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut diverged = 0;
    let mut replay_changed = 0;
    let mut downlinks = 0;
    for _ in 0..1_000 {
        let clock = ManualClock::new(1_000);
        let mut server = Server::open(MemoryStorage::new(), clock.clone()).unwrap();
        let mut db = TrapDatabase::new();
        let mut received: Vec<TrapUpdate> = Vec::new();
        let mut seq = 0u16;
        let mut sync = |server: &mut Server<MemoryStorage, ManualClock>, db: &mut TrapDatabase, lose: bool| -> bool {
            let req = Uplink::DbSync(DbSyncRequest { seq, last_updated: db.last_updated() });
            seq = seq.wrapping_add(1);
            let out = server.ingest(1, &codec::encode_uplink(&req).unwrap()).unwrap();
            let bytes = out.downlink.expect("sync is answered");
            if lose {
                return true;
            }
            let Ok(Message::Downlink(Downlink::TrapUpdate(u))) = codec::decode(&bytes) else {
                panic!("bad downlink");
            };
            db.apply_trap_update(&u);
            received.push(u.clone());
            u.more_follows
        };
        for _ in 0..rng.random_range(1..30) {
            match rng.random_range(0..7) {
                0..=2 => {
                    let ops: Vec<TargetOp> = (0..rng.random_range(1..15))
                        .map(|_| {
                            let country = if rng.random_bool(0.5) { 756 } else { rng.random_range(0..1024) };
                            let tag = TagId::new(country, rng.random_range(0..40)).unwrap();
                            match rng.random_range(0..5) {
                                0 | 1 => TargetOp::Add { tag },
                                2 | 3 => TargetOp::Remove { tag },
                                _ => TargetOp::Master { enabled: rng.random() },
                            }
                        })
                        .collect();
                    server.set_trap_targets(1, &ops, "keeper").unwrap();
                }
                3..=5 => {
                    let lose = rng.random_bool(0.3);
                    sync(&mut server, &mut db, lose);
                }
                _ => clock.advance(rng.random_range(0..100)),
            }
        }
        let mut rounds = 0;
        while sync(&mut server, &mut db, false) && rounds < 100 {
            rounds += 1;
        }
        let (targets, master) = server.targets(1);
        let mine: Vec<TagId> = db.entries().copied().collect();
        if mine != targets || db.master() != master {
            diverged += 1;
        }
        let settled = db.clone();
        for u in &received {
            db.apply_trap_update(u);
            if db != settled {
                replay_changed += 1;
            }
        }
        downlinks += received.len();
    }
    Outcome {
        pass: diverged == 0 && replay_changed == 0,
        detail: format!("1000 histories, {downlinks} downlinks applied, {diverged} diverged, {replay_changed} replays changed state"),
    }
}

fn segmentation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    let mut visits = 0;
    let mut first_bad = String::new();
    for i in 0..500 {
        let sc = common::random_clean_scenario(&mut rng, 2_000);
        let trace = generate_trace(&sc).unwrap();
        assert!(trace.samples.len() <= 2_000);
        let want = common::oracle_segmentation(&trace.samples);
        let got = common::engine_segmentation(&trace.samples);
        let same = common::same_segmentation(&want, &got);
        visits += want.len();
        if !same {
            mismatches += 1;
            if first_bad.is_empty() {
                first_bad = format!("; first mismatch trace {i}: oracle {want:?} engine {got:?}");
            }
        }
    }
    Outcome { pass: mismatches == 0, detail: format!("500 traces, {visits} oracle visits, {mismatches} mismatches{first_bad}") }
}

fn end_to_end() -> Outcome {
    let sc = one_night_scenario(7);
    let cfg = station_config(&sc);
    let run = simulate(&sc).unwrap();
    let report = run_scenario(&sc).unwrap();
    let truth = &run.trace.truth;
    let server = &run.server_visits;
    let pairs = match_visits(truth, server, cfg.epoch_s);
    let within = pairs.iter().all(|&(i, j)| (server[j].weight_grams - truth[i].weight_grams).abs() <= 1.0);
    let tags = pairs.iter().all(|&(i, j)| server[j].tag == truth[i].tag);
    let expected_sys = (sc.duration_ms / 600_000) as usize;
    let pass = pairs.len() == truth.len() && server.len() == truth.len() && within && tags && report.system_updates == expected_sys;
    Outcome {
        pass,
        detail: format!(
            "{} truth visits, {} on server, {} matched, max weight error {:.2} g, tags correct {tags}, status uplinks {} (expected {expected_sys}), link drop {} with {} transmissions for {} uplinks",
            truth.len(),
            server.len(),
            pairs.len(),
            report.max_weight_error,
            report.system_updates,
            sc.link.uplink_drop,
            report.transmissions,
            report.uplinks
        ),
    }
}

fn main() {
    let s = Duration::from_secs;
    let results = [
        check("weighing accuracy (lab batch, 6 x 200 runs)", Some(s(30)), weighing_accuracy),
        check("multi-animal attribution 0/40/92/52/0", Some(s(1)), attribution),
        check("rfid visit detection (100000 visits)", Some(s(10)), rfid_detection),
        check("link reliability (1995 packets)", Some(s(10)), link_delivery),
        check("codec soundness", Some(s(60)), codec_soundness),
        check("trap sync round trip (1000 histories)", Some(s(10)), trap_sync),
        check("state machine vs brute-force oracle (500 traces)", None, segmentation_oracle),
        check("end-to-end night", None, end_to_end),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
