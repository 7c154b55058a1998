use std::collections::BTreeMap;
use std::path::PathBuf;

use mivi::config::Config;
use proptest::prelude::*;
use serde_json::{Map, Value};

fn segment() -> impl Strategy<Value = String> {
    "[a-z][a-z_]{0,6}"
}

/// Rebuilds a nested JSON object from dotted keys.
fn nest(flat: &BTreeMap<String, f64>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .unwrap();
        }
        node.insert(parts[parts.len() - 1].to_string(), Value::from(*v));
    }
    root.insert("experiment".into(), Value::from("toy2d"));
    Value::Object(root)
}

fn leaf_keys() -> impl Strategy<Value = BTreeMap<String, f64>> {
    prop::collection::btree_map(
        prop::collection::vec(segment(), 1..4).prop_map(|s| format!("x.{}", s.join("."))),
        (-8_000_000i64..8_000_000).prop_map(|i| i as f64 / 8.0),
        1..8,
    )
    .prop_filter("no key may prefix another", |m| {
        let keys: Vec<&String> = m.keys().collect();
        keys.iter().all(|a| keys.iter().all(|b| a == b || !b.starts_with(&format!("{a}."))))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nested_and_dotted_forms_agree(flat in leaf_keys()) {
        let nested = serde_json::to_string(&nest(&flat)).unwrap();
        let mut dotted: Map<String, Value> = flat.iter().map(|(k, v)| (k.clone(), Value::from(*v))).collect();
        dotted.insert("experiment".into(), Value::from("toy2d"));
        let dotted = serde_json::to_string(&Value::Object(dotted)).unwrap();
        let a = Config::parse(&nested, PathBuf::new()).unwrap();
        let b = Config::parse(&dotted, PathBuf::new()).unwrap();
        prop_assert_eq!(a.entries(), b.entries());
        for (k, v) in &flat {
            prop_assert_eq!(a.f64_opt(k).unwrap(), Some(*v));
        }
    }

    #[test]
    fn a_key_given_twice_is_rejected(flat in leaf_keys()) {
        let (key, value) = flat.iter().next().unwrap();
        let mut doc = nest(&flat);
        doc.as_object_mut().unwrap().insert(key.clone(), Value::from(*value));
        let text = serde_json::to_string(&doc).unwrap();
        let err = Config::parse(&text, PathBuf::new()).unwrap_err();
        prop_assert!(err.to_string().contains(key.as_str()), "{err}");
        prop_assert_eq!(err.exit_code(), 2);
    }
}
