use feedstation::uplinkqueue::{MemStorage, QueueConfig, UplinkQueue};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Enqueue(Vec<u8>),
    Send,
    Confirm,
    Timeout,
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => proptest::collection::vec(any::<u8>(), 0..=51).prop_map(Op::Enqueue),
        2 => Just(Op::Send),
        2 => Just(Op::Confirm),
        1 => Just(Op::Timeout),
    ]
}

/// What a restart must reproduce: live (seq, payload), parked seqs and the
/// next sequence number.
#[derive(Debug, Clone, PartialEq, Default)]
struct Durable {
    live: Vec<(u16, Vec<u8>)>,
    parked: Vec<u16>,
    next_seq: u16,
}

fn snapshot(q: &UplinkQueue<MemStorage>) -> (Vec<(u16, Vec<u8>)>, Vec<u16>) {
    (
        q.entries().map(|e| (e.seq, e.payload.clone())).collect(),
        q.parked().iter().map(|e| e.seq).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn restart_recovers_last_durable_state(
        ops in proptest::collection::vec(arb_op(), 1..60),
        crash_budget in 0usize..3000,
    ) {
        let cfg = QueueConfig { max_attempts: Some(3), ..Default::default() };
        let store = MemStorage::new();
        let mut q = UplinkQueue::open(store.clone(), cfg.clone()).unwrap();
        store.crash_after(crash_budget);
        let mut model = Durable::default();
        let mut now = 0i64;
        for op in ops {
            now += 1_000;
            let res = match op {
                Op::Enqueue(p) => q.enqueue(&p, now).map(|seq| {
                    model.live.push((seq, p));
                    model.next_seq = seq.wrapping_add(1);
                }),
                Op::Send => q.poll_transmit(now).map(|_| ()),
                Op::Confirm => match q.head().map(|h| h.seq) {
                    Some(seq) if q.head().unwrap().attempts > 0 => q.confirm(seq).map(|_| {
                        model.live.remove(0);
                    }),
                    _ => Ok(()),
                },
                Op::Timeout => {
                    now += 200_000;
                    q.poll_transmit(now).map(|_| ())
                }
            };
            if res.is_err() {
                break;
            }
            // parking happens inside poll_transmit; mirror it from the queue
            let (live, parked) = snapshot(&q);
            if parked.len() > model.parked.len() {
                let s = *parked.last().unwrap();
                model.live.retain(|(x, _)| *x != s);
                model.parked.push(s);
            }
            prop_assert_eq!(&live, &model.live);
        }
        drop(q);
        store.restore();
        let mut q = UplinkQueue::open(store.clone(), cfg).unwrap();
        let (live, parked) = snapshot(&q);
        prop_assert_eq!(live, model.live.clone());
        prop_assert_eq!(parked, model.parked.clone());
        let expect_seq = model.next_seq;
        prop_assert_eq!(q.enqueue(b"after", now).unwrap(), expect_seq);
    }
}
