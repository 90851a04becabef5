//! Hostile frames: random bytes, structurally plausible JSON, and mutations
//! of valid frames.

use proptest::collection::vec;
use proptest::prelude::*;
use serde_json::{Map, Value};

use tutorlink_core::protocol::{encode, MessageKind};

use crate::gen;

#[derive(Clone, Debug)]
pub enum Mutation {
    FlipByte { at: usize, mask: u8 },
    Truncate { at: usize },
    Insert { at: usize, byte: u8 },
    DropField(usize),
    ReplaceField(usize, Value),
    RenameType(String),
    AddField(String, Value),
    NestPayload(Value),
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        any::<f64>().prop_map(|f| serde_json::Number::from_f64(f).map(Value::Number).unwrap_or(Value::Null)),
        gen::any_text(12).prop_map(Value::String),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            vec(inner.clone(), 0..4).prop_map(Value::Array),
            vec(("[a-z_]{1,8}", inner), 0..4).prop_map(|kv| Value::Object(kv.into_iter().collect::<Map<_, _>>())),
        ]
    })
}

fn mutation() -> impl Strategy<Value = Mutation> {
    let type_names = MessageKind::ALL
        .iter()
        .map(|k| k.wire_name().to_owned())
        .chain(["", "JOIN", "hello", "join "].map(String::from))
        .collect::<Vec<_>>();
    prop_oneof![
        (any::<usize>(), 1u8..).prop_map(|(at, mask)| Mutation::FlipByte { at, mask }),
        any::<usize>().prop_map(|at| Mutation::Truncate { at }),
        (any::<usize>(), any::<u8>()).prop_map(|(at, byte)| Mutation::Insert { at, byte }),
        any::<usize>().prop_map(Mutation::DropField),
        (any::<usize>(), json_value()).prop_map(|(i, v)| Mutation::ReplaceField(i, v)),
        proptest::sample::select(type_names).prop_map(Mutation::RenameType),
        ("[a-z]{1,6}", json_value()).prop_map(|(k, v)| Mutation::AddField(k, v)),
        json_value().prop_map(Mutation::NestPayload),
    ]
}

fn apply(frame: String, m: &Mutation) -> Vec<u8> {
    let mut bytes = frame.clone().into_bytes();
    let structural = |f: &dyn Fn(&mut Map<String, Value>)| -> Vec<u8> {
        let mut v: Value = serde_json::from_str(&frame).expect("encoder output parses");
        if let Value::Object(map) = &mut v {
            f(map);
        }
        serde_json::to_vec(&v).expect("value serializes")
    };
    match m {
        Mutation::FlipByte { at, mask } => {
            let i = at % bytes.len();
            bytes[i] ^= mask;
            bytes
        }
        Mutation::Truncate { at } => {
            bytes.truncate(at % bytes.len());
            bytes
        }
        Mutation::Insert { at, byte } => {
            bytes.insert(at % (bytes.len() + 1), *byte);
            bytes
        }
        Mutation::DropField(i) => structural(&|map| {
            let key = map.keys().nth(i % map.len()).cloned().unwrap_or_default();
            map.remove(&key);
        }),
        Mutation::ReplaceField(i, v) => structural(&|map| {
            let key = map.keys().nth(i % map.len()).cloned().unwrap_or_default();
            map.insert(key, v.clone());
        }),
        Mutation::RenameType(name) => structural(&|map| {
            map.insert("type".into(), Value::String(name.clone()));
        }),
        Mutation::AddField(k, v) => structural(&|map| {
            map.insert(k.clone(), v.clone());
        }),
        Mutation::NestPayload(v) => structural(&|map| {
            if let Some(Value::Object(p)) = map.get_mut("payload") {
                p.insert("extra".into(), v.clone());
            } else {
                map.insert("payload".into(), v.clone());
            }
        }),
    }
}

/// One fuzzed frame. Most are invalid; a few mutations happen to be benign.
pub fn frame() -> impl Strategy<Value = Vec<u8>> {
    let mutated = (gen::envelope(), vec(mutation(), 1..4)).prop_map(|(env, ms)| {
        let mut frame = encode(&env).expect("generated envelopes are valid");
        let mut bytes = Vec::new();
        for m in &ms {
            bytes = apply(frame.clone(), m);
            match String::from_utf8(bytes.clone()) {
                Ok(s) if serde_json::from_str::<Value>(&s).is_ok() => frame = s,
                _ => break,
            }
        }
        bytes
    });
    prop_oneof![
        3 => mutated,
        1 => vec(any::<u8>(), 0..256),
        1 => json_value().prop_map(|v| serde_json::to_vec(&v).expect("value serializes")),
    ]
}
