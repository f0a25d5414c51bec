//! Canonical object notation: minified JSON with keys sorted lexicographically
//! at every level. Hashes and signatures are always taken over these bytes.

use serde::Serialize;
use serde_json::Value;

/// Serializes `value` canonically, dropping the named top-level fields.
pub fn to_bytes_without<T: Serialize>(value: &T, excluded: &[&str]) -> Vec<u8> {
    let mut tree = serde_json::to_value(value).expect("canonical types serialize to JSON");
    if let Value::Object(map) = &mut tree {
        for key in excluded {
            map.remove(*key);
        }
    }
    let mut out = Vec::with_capacity(256);
    write_value(&tree, &mut out);
    out
}

pub fn to_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    to_bytes_without(value, &[])
}

pub fn to_string<T: Serialize>(value: &T) -> String {
    String::from_utf8(to_bytes(value)).expect("canonical output is UTF-8")
}

pub fn value_to_string(value: &Value) -> String {
    let mut out = Vec::new();
    write_value(value, &mut out);
    String::from_utf8(out).expect("canonical output is UTF-8")
}

fn write_value(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_scalar(&Value::String(key.clone()), out);
                out.push(b':');
                write_value(&map[key.as_str()], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        scalar => write_scalar(scalar, out),
    }
}

fn write_scalar(value: &Value, out: &mut Vec<u8>) {
    serde_json::to_writer(&mut *out, value).expect("writing to a Vec cannot fail");
}
