use feedstation::codec::*;
use feedstation::rfid::TagId;
use feedstation::weighing::VisitFlags;
use proptest::prelude::*;

fn tag(c: u16, n: u64) -> TagId {
    TagId::new(c, n).unwrap()
}

/// Straight string-of-bits packer, kept separate from the codec's writer.
fn pack(fields: &[(u64, u32)]) -> Vec<u8> {
    let mut s = String::new();
    for &(v, w) in fields {
        s.push_str(&format!("{:0width$b}", v, width = w as usize));
    }
    while !s.len().is_multiple_of(8) {
        s.push('0');
    }
    (0..s.len()).step_by(8).map(|i| u8::from_str_radix(&s[i..i + 8], 2).unwrap()).collect()
}

fn oracle(msg: &Message) -> Vec<u8> {
    let tag_fields = |t: Option<TagId>| [(t.is_some() as u64, 1), (t.map_or(0, |t| t.to_bits()), 48)];
    let mut f: Vec<(u64, u32)> = Vec::new();
    match msg {
        Message::Uplink(Uplink::System(m)) => {
            f.extend([(1, 4), (1, 4), (m.seq as u64, 16), (m.ts as u64, 32)]);
            f.push(((m.temp_in_dc as i64 + 400) as u64, 12));
            f.push(((m.temp_out_dc as i64 + 400) as u64, 12));
            f.extend([(m.rh_in_dpct as u64, 10), (m.rh_out_dpct as u64, 10), (m.error_flags.0 as u64, 16)]);
        }
        Message::Uplink(Uplink::Animal(m)) => {
            f.extend([(2, 4), (1, 4), (m.seq as u64, 16)]);
            f.extend(tag_fields(m.tag));
            f.extend([(m.entry_ts as u64, 32), (m.exit_ts as u64, 32)]);
            f.extend([(m.weight_dg as u64, 16), (m.std_dg as u64, 10), (m.flags.bits() as u64, 3)]);
        }
        Message::Uplink(Uplink::DbSync(m)) => {
            f.extend([(3, 4), (1, 4), (m.seq as u64, 16), (m.last_updated as u64, 32)]);
        }
        Message::Uplink(Uplink::Trap(m)) => {
            f.extend([(4, 4), (1, 4), (m.seq as u64, 16), (m.ts as u64, 32)]);
            f.extend(tag_fields(m.tag));
        }
        Message::Downlink(Downlink::TrapUpdate(m)) => {
            let shared = !m.ops.is_empty() && m.ops.iter().all(|o| o.tag.country_code() == m.ops[0].tag.country_code());
            f.extend([(9, 4), (1, 4), (m.server_time as u64, 32)]);
            f.extend([
                ((m.master == Some(true)) as u64, 1),
                (m.master.is_some() as u64, 1),
                (m.more_follows as u64, 1),
                (shared as u64, 1),
                (m.ops.len() as u64, 4),
                (m.part as u64, 8),
            ]);
            if shared {
                f.push((m.ops[0].tag.country_code() as u64, 10));
            }
            for op in &m.ops {
                f.push(((op.kind == TagOpKind::Remove) as u64, 1));
                if shared {
                    f.push((op.tag.national_id(), 38));
                } else {
                    f.push((op.tag.to_bits(), 48));
                }
            }
        }
    }
    pack(&f)
}

#[test]
fn frozen_vectors() {
    let cases: Vec<(Message, &str)> = vec![
        (
            Uplink::System(SystemUpdate {
                seq: 0,
                ts: 0,
                temp_in_dc: 0,
                temp_out_dc: 0,
                rh_in_dpct: 0,
                rh_out_dpct: 0,
                error_flags: ErrorFlags::empty(),
            })
            .into(),
            "110000000000001901900000000000",
        ),
        (
            Uplink::System(SystemUpdate {
                seq: 513,
                ts: 1_700_000_000,
                temp_in_dc: 215,
                temp_out_dc: -123,
                rh_in_dpct: 655,
                rh_out_dpct: 1000,
                error_flags: ErrorFlags(0b10_0101),
            })
            .into(),
            "1102016553f100267115a3fe800250",
        ),
        (
            Uplink::Animal(AnimalUpdate {
                seq: 7,
                tag: Some(tag(756, 123_456_789)),
                entry_ts: 1_700_000_000,
                exit_ts: 1_700_000_042,
                weight_dg: 412,
                std_dg: 3,
                flags: VisitFlags { low_quality: true, ..Default::default() },
            })
            .into(),
            "210007de8003ade68ab2a9f88032a9f89500ce0068",
        ),
        (
            Uplink::Animal(AnimalUpdate {
                seq: 65_535,
                tag: None,
                entry_ts: 10,
                exit_ts: 20,
                weight_dg: 65_535,
                std_dg: 1023,
                flags: VisitFlags { unresolved: true, low_quality: true, ambiguous_tag: true },
            })
            .into(),
            "21ffff000000000000000000050000000a7ffffffc",
        ),
        (Uplink::DbSync(DbSyncRequest { seq: 42, last_updated: 1_699_999_999 }).into(), "31002a6553f0ff"),
        (
            Uplink::Trap(TrapEvent { seq: 9, ts: 1_700_000_100, tag: Some(tag(999, 1)) }).into(),
            "4100096553f164fce00000000080",
        ),
        (
            TrapUpdate { server_time: 1_700_000_200, master: None, more_follows: false, part: 0, ops: vec![] }.into(),
            "916553f1c80000",
        ),
        (
            TrapUpdate {
                server_time: 1_700_000_300,
                master: Some(true),
                more_follows: true,
                part: 3,
                ops: vec![
                    TagOp { kind: TagOpKind::Add, tag: tag(756, 1) },
                    TagOp { kind: TagOpKind::Remove, tag: tag(756, 2) },
                ],
            }
            .into(),
            "916553f22cf203bd0000000000c000000002",
        ),
        (
            TrapUpdate {
                server_time: 1_700_000_400,
                master: Some(false),
                more_follows: false,
                part: 0,
                ops: vec![
                    TagOp { kind: TagOpKind::Add, tag: tag(756, 5) },
                    TagOp { kind: TagOpKind::Remove, tag: tag(250, 6) },
                ],
            }
            .into(),
            "916553f29042005e8000000002cfa00000000180",
        ),
    ];
    for (msg, hex) in cases {
        let bytes = encode(&msg).unwrap();
        assert_eq!(to_hex(&bytes), hex, "{msg}");
        assert_eq!(payload_size(&msg), bytes.len());
        assert_eq!(decode(&from_hex(hex).unwrap()).unwrap(), msg);
    }
}

fn arb_tag() -> impl Strategy<Value = TagId> {
    (0u16..=1023, 0u64..(1 << 38)).prop_map(|(c, n)| tag(c, n))
}

fn arb_flags() -> impl Strategy<Value = VisitFlags> {
    (0u8..8).prop_map(VisitFlags::from_bits)
}

fn arb_ops() -> impl Strategy<Value = Vec<TagOp>> {
    let op = (any::<bool>(), arb_tag())
        .prop_map(|(rm, tag)| TagOp { kind: if rm { TagOpKind::Remove } else { TagOpKind::Add }, tag });
    let shared = (0u16..=1023, proptest::collection::vec((any::<bool>(), 0u64..(1 << 38)), 1..=8)).prop_map(
        |(c, v)| {
            v.into_iter()
                .map(|(rm, n)| TagOp { kind: if rm { TagOpKind::Remove } else { TagOpKind::Add }, tag: tag(c, n) })
                .collect()
        },
    );
    prop_oneof![proptest::collection::vec(op, 0..=7), shared]
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    let system = (any::<u16>(), any::<u32>(), -400i16..=3695, -400i16..=3695, 0u16..=1000, 0u16..=1000, any::<u16>())
        .prop_map(|(seq, ts, ti, to, ri, ro, f)| {
            Message::from(Uplink::System(SystemUpdate {
                seq,
                ts,
                temp_in_dc: ti,
                temp_out_dc: to,
                rh_in_dpct: ri,
                rh_out_dpct: ro,
                error_flags: ErrorFlags(f),
            }))
        });
    let animal = (
        any::<u16>(),
        proptest::option::of(arb_tag()),
        any::<u32>(),
        any::<u32>(),
        0u32..=65_535,
        0u16..=1023,
        arb_flags(),
    )
        .prop_map(|(seq, tag, entry_ts, exit_ts, weight_dg, std_dg, flags)| {
            Message::from(Uplink::Animal(AnimalUpdate { seq, tag, entry_ts, exit_ts, weight_dg, std_dg, flags }))
        });
    let dbsync = (any::<u16>(), any::<u32>())
        .prop_map(|(seq, last_updated)| Message::from(Uplink::DbSync(DbSyncRequest { seq, last_updated })));
    let trap = (any::<u16>(), any::<u32>(), proptest::option::of(arb_tag()))
        .prop_map(|(seq, ts, tag)| Message::from(Uplink::Trap(TrapEvent { seq, ts, tag })));
    let update = (any::<u32>(), proptest::option::of(any::<bool>()), any::<bool>(), any::<u8>(), arb_ops()).prop_map(
        |(server_time, master, more_follows, part, ops)| {
            Message::from(TrapUpdate { server_time, master, more_follows, part, ops })
        },
    );
    prop_oneof![system, animal, dbsync, trap, update]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip_and_layout(msg in arb_message()) {
        let bytes = encode(&msg).unwrap();
        prop_assert!(bytes.len() <= MAX_PAYLOAD);
        prop_assert_eq!(bytes.len(), payload_size(&msg));
        prop_assert_eq!(&bytes, &oracle(&msg));
        prop_assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn no_valid_payload_is_a_prefix(msg in arb_message()) {
        let bytes = encode(&msg).unwrap();
        for cut in 1..bytes.len() {
            prop_assert!(decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn decode_is_total_and_canonical(data in proptest::collection::vec(any::<u8>(), 0..=64)) {
        if let Ok(msg) = decode(&data) {
            prop_assert_eq!(encode(&msg).unwrap(), data);
        }
    }

    #[test]
    fn mutated_payloads_decode_canonically(msg in arb_message(), idx in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = encode(&msg).unwrap();
        let i = idx.index(bytes.len());
        bytes[i] ^= 1 << bit;
        if let Ok(m) = decode(&bytes) {
            prop_assert_eq!(encode(&m).unwrap(), bytes);
        }
    }
}
