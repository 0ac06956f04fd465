use etho_core::retrieval::{shipped_docs, ModuleDoc, ModuleRegistry};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = String> {
    let vocab = prop_oneof![
        Just("umap"), Just("embedding"), Just("plot"), Just("ethogram"), Just("speed"), Just("velocity"),
        Just("csv"), Just("save"), Just("neural"), Just("latent"), Just("mouse"), Just("the"), Just("zebra"),
    ];
    proptest::collection::vec(vocab, 0..8).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn repeating_the_query_changes_nothing(q in words(), k in 2usize..5) {
        let r = ModuleRegistry::with_shipped();
        let once = r.query(&q, 5);
        let many = r.query(&vec![q.as_str(); k].join(" "), 5);
        prop_assert_eq!(once.iter().map(|x| &x.name).collect::<Vec<_>>(), many.iter().map(|x| &x.name).collect::<Vec<_>>());
        for (a, b) in once.iter().zip(&many) {
            prop_assert!((a.score - b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_is_a_prefix(q in words(), k in 0usize..6) {
        let r = ModuleRegistry::with_shipped();
        let all = r.query(&q, 5);
        let some = r.query(&q, k);
        prop_assert_eq!(&all[..k.min(5)], &some[..]);
        for w in all.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for x in &all {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&x.score));
        }
    }

    #[test]
    fn load_order_does_not_matter(q in words(), seed in any::<u64>()) {
        let mut docs = shipped_docs();
        let n = docs.len();
        docs.rotate_left((seed % n as u64) as usize);
        if seed & 1 == 1 {
            docs.reverse();
        }
        let mut shuffled = ModuleRegistry::default();
        for d in docs {
            shuffled.add(ModuleDoc::new(&d.name, &d.doc)).unwrap();
        }
        prop_assert_eq!(shuffled.query(&q, 5), ModuleRegistry::with_shipped().query(&q, 5));
    }
}
