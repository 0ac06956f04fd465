use etho_core::session::{token_count, LongTermMemory, MemoryItem, Role, SessionState, ShortTermMemory};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Append(usize),
    Front(usize),
}

fn ops(budget: usize) -> impl Strategy<Value = Vec<Op>> {
    let size = 1..=budget * 4;
    proptest::collection::vec(prop_oneof![size.clone().prop_map(Op::Append), size.prop_map(Op::Front)], 1..60)
}

proptest! {
    #[test]
    fn budget_holds_and_oldest_goes_first(budget in 1usize..200, script in ops(60)) {
        let mut m = ShortTermMemory::new(budget);
        for op in script {
            let (chars, front) = match op { Op::Append(c) => (c, false), Op::Front(c) => (c, true) };
            let item = MemoryItem::new(Role::User, "x".repeat(chars));
            let before: Vec<u64> = m.items().map(|i| i.seq).collect();
            let r = if front { m.push_front(item) } else { m.append(item) };
            match r {
                Err(_) => {
                    prop_assert!(token_count(&"x".repeat(chars)) > budget);
                    prop_assert_eq!(m.items().map(|i| i.seq).collect::<Vec<_>>(), before);
                }
                Ok(evicted) => {
                    let mut sorted = before.clone();
                    sorted.sort_unstable();
                    let gone: Vec<u64> = evicted.iter().map(|i| i.seq).collect();
                    prop_assert_eq!(&gone[..], &sorted[..gone.len()]);
                }
            }
            prop_assert!(m.total_tokens() <= budget);
            prop_assert_eq!(m.total_tokens(), m.items().map(|i| i.tokens).sum::<usize>());
        }
    }

    #[test]
    fn rebuild_from_items_is_lossless(script in ops(30)) {
        let mut m = ShortTermMemory::new(120);
        for op in script {
            let _ = match op {
                Op::Append(c) => m.append(MemoryItem::new(Role::Assistant, "y".repeat(c))),
                Op::Front(c) => m.push_front(MemoryItem::new(Role::System, "y".repeat(c))),
            };
        }
        let mut copy = ShortTermMemory::from_items(120, m.items().cloned().collect()).unwrap();
        prop_assert_eq!(&copy, &m);
        let next = MemoryItem::new(Role::User, "z".repeat(40));
        prop_assert_eq!(copy.append(next.clone()).unwrap(), m.clone().append(next).unwrap());
    }

    #[test]
    fn symbols_read_back_verbatim(entries in proptest::collection::btree_map("[a-z ]{1,12}", "\\PC{0,60}", 1..20)) {
        let mut long = LongTermMemory::default();
        for (k, v) in &entries {
            long.write(k, v).unwrap();
        }
        for (k, v) in &entries {
            prop_assert_eq!(long.read(k), Some(v.as_str()));
        }
    }

    #[test]
    fn session_json_round_trips(texts in proptest::collection::vec("[a-z <>|]{1,300}", 1..15)) {
        let mut s: SessionState<f64> = SessionState::new(256);
        for t in &texts {
            let _ = s.process_utterance(t);
            prop_assert!(s.short.total_tokens() <= 256);
        }
        let back = SessionState::<f64>::from_json_str(&s.to_json_string()).unwrap();
        prop_assert_eq!(back.to_json_string(), s.to_json_string());
    }
}
