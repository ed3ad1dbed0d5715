use pidlens::ingest::wire::{read_records, write_records, TokenPayload};
use pidlens::ingest::{Manifest, Pooling, SampleRecord};
use proptest::prelude::*;

const K: usize = 4;

fn manifest() -> Manifest {
    Manifest {
        dataset: "ds".into(),
        model: "model-x".into(),
        k: K,
        dim_vision: 3,
        dim_text: 2,
        pooling: Pooling::Mean,
        export_tool_version: "1.0".into(),
        family: None,
        size_b: None,
        regime: None,
        feature_sidecar: None,
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![0.0f64..=1.0, Just(0.0), Just(1.0), Just(f64::MIN_POSITIVE), Just(5e-324)]
}

fn arb_record() -> impl Strategy<Value = SampleRecord> {
    (
        "[a-z0-9_\\-]{1,12}",
        prop::option::of(0u32..80),
        prop::option::of("s[12]c[1-4]"),
        prop::collection::vec(finite(), 3),
        prop::collection::vec(finite(), 2),
        prop::collection::vec(unit(), K * 3),
        prop::option::of(0usize..K),
        prop::option::of(0usize..K),
        prop::option::of(prop::collection::vec(prop::collection::vec(finite(), 3), 1..4)),
    )
        .prop_map(|(id, layer, checkpoint, x1, x2, scores, gold, pred, toks)| SampleRecord {
            id,
            dataset: "ds".into(),
            model: "model-x".into(),
            layer,
            checkpoint,
            x1,
            x2,
            scores_mm: scores[..K].to_vec(),
            scores_v: scores[K..2 * K].to_vec(),
            scores_t: scores[2 * K..].to_vec(),
            gold,
            pred,
            pred_text_only: gold,
            tokens: toks.map(|v| TokenPayload { vision: v, text: vec![vec![-0.0, 1e308]] }),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialize_then_parse_is_bit_exact(mut recs in prop::collection::vec(arb_record(), 1..12)) {
        for (i, r) in recs.iter_mut().enumerate() {
            r.id = format!("{i}-{}", r.id);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_records(&path, &recs).unwrap();
        let back = read_records(&path, &manifest()).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in back.iter().zip(&recs) {
            prop_assert_eq!(&a.id, &b.id);
            let bits = |r: &SampleRecord| -> Vec<u64> {
                let mut v: Vec<f64> = r.x1.iter().chain(&r.x2).chain(&r.scores_mm).chain(&r.scores_v).chain(&r.scores_t).copied().collect();
                if let Some(t) = &r.tokens {
                    v.extend(t.vision.iter().chain(&t.text).flatten());
                }
                v.into_iter().map(f64::to_bits).collect()
            };
            prop_assert_eq!(bits(a), bits(b));
            prop_assert_eq!(a, b);
        }
    }
}
