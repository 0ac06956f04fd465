use etho_core::dsl::{parse, print_def, print_program, BehaviorDef, Expr, SocialCond};
use etho_core::events::PostProcessSpec;
use etho_core::relations::{CmpOp, Orientation};
use proptest::prelude::*;

fn op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![Just(CmpOp::Lt), Just(CmpOp::Le), Just(CmpOp::Gt), Just(CmpOp::Ge), Just(CmpOp::Eq), Just(CmpOp::Ne)]
}

fn number() -> impl Strategy<Value = f64> {
    (-100_000i64..100_000).prop_map(|v| v as f64 / 100.0)
}

// keywords and spaces are included on purpose: the printer must quote them
fn name() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z_][a-z0-9_]{0,8}",
        Just("and".to_string()),
        Just("min".to_string()),
        Just("head dips".to_string()),
        "[a-zA-Z \"\\\\]{1,8}",
    ]
}

fn parts() -> impl Strategy<Value = Option<Vec<String>>> {
    proptest::option::of(proptest::collection::vec(name(), 1..4))
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (name(), prop_oneof![Just("overlap"), Just("to_left"), Just("distance")], proptest::option::of((op(), number())), parts())
            .prop_map(|(object, relation, comparison, bodyparts)| Expr::Object {
                object,
                relation: relation.into(),
                comparison,
                bodyparts,
            }),
        (
            prop_oneof![Just("distance"), Just("closest_distance"), Just("orientation")],
            prop_oneof![
                (op(), number()).prop_map(|(o, v)| SocialCond::Compare(o, v)),
                prop_oneof![Just(Orientation::Front), Just(Orientation::Behind)].prop_map(SocialCond::Orient),
            ],
            parts(),
            parts(),
        )
            .prop_map(|(relation, cond, bodyparts, other_bodyparts)| Expr::Social {
                relation: relation.into(),
                cond,
                bodyparts,
                other_bodyparts,
            }),
        (prop_oneof![Just("speed"), Just("acceleration")], op(), number())
            .prop_map(|(s, op, value)| Expr::State { state: s.into(), op, value }),
        name().prop_map(Expr::Ref),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 24, 4, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 2..4).prop_map(Expr::And),
            (inner.clone(), inner.clone(), 0usize..20).prop_map(|(a, b, g)| Expr::Then(Box::new(a), Box::new(b), g)),
            inner.prop_map(|e| Expr::Not(Box::new(e))),
        ]
    })
}

fn def() -> impl Strategy<Value = BehaviorDef> {
    (name(), expr(), 0usize..50, 0usize..50).prop_map(|(name, expr, s, m)| BehaviorDef {
        name,
        expr,
        post: PostProcessSpec::new(s, m),
    })
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(d in def()) {
        let text = print_def(&d);
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e} in {text}")))?;
        prop_assert_eq!(back, vec![d]);
    }

    #[test]
    fn programs_round_trip(defs in proptest::collection::vec(def(), 1..4)) {
        let mut seen = std::collections::BTreeSet::new();
        let defs: Vec<_> = defs.into_iter().filter(|d| seen.insert(d.name.clone())).collect();
        let text = print_program(&defs);
        prop_assert_eq!(parse(&text).unwrap(), defs);
    }

    #[test]
    fn arbitrary_text_gets_a_positioned_answer(src in "\\PC{0,80}") {
        if let Err(d) = parse(&src) {
            prop_assert!(d.pos.line >= 1 && d.pos.col >= 1);
            prop_assert!(d.pos.line <= src.split('\n').count());
        }
    }

    #[test]
    fn valid_program_with_garbage_suffix(d in def(), junk in "[()\\[\\],<>=a-z0-9 ]{1,10}") {
        let prefix = print_def(&d);
        let text = format!("{prefix} {junk}");
        // either it still parses or the error points into the junk
        if let Err(e) = parse(&text) {
            prop_assert_eq!(e.pos.line, 1);
            prop_assert!(e.pos.col > prefix.chars().count(), "{} at {}", text, e.pos);
        }
    }
}
