//! Canonical JSON: object keys sorted, no whitespace, floats rounded to nine
//! significant digits. Identical values always encode to identical bytes.

use serde_json::Value;

use super::TelemetryError;

pub fn to_canonical_string(value: &Value) -> Result<String, TelemetryError> {
    let mut out = String::new();
    write_value(value, &mut out)?;
    Ok(out)
}

/// Formats a float with nine significant digits in its shortest round-trip
/// form. Non-finite values are rejected.
pub fn format_float(x: f64) -> Result<String, TelemetryError> {
    if !x.is_finite() {
        return Err(TelemetryError::Unserializable(format!("non-finite number {x}")));
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    Ok(format!("{rounded:?}"))
}

/// Rounds to the value the canonical encoding would carry.
pub fn canonical_f64(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn write_value(value: &Value, out: &mut String) -> Result<(), TelemetryError> {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_u64() || n.is_i64() {
                out.push_str(&n.to_string());
            } else {
                let x = n
                    .as_f64()
                    .ok_or_else(|| TelemetryError::Unserializable(format!("number {n}")))?;
                out.push_str(&format_float(x)?);
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(v, out)?;
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("strings serialize"));
                out.push(':');
                write_value(&map[k], out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_compact() {
        let v = json!({"b": 1, "a": {"z": true, "y": null}, "c": [1.5, "x"]});
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            r#"{"a":{"y":null,"z":true},"b":1,"c":[1.5,"x"]}"#
        );
    }

    #[test]
    fn floats_nine_significant_digits() {
        assert_eq!(format_float(0.1).unwrap(), "0.1");
        assert_eq!(format_float(1.0 / 3.0).unwrap(), "0.333333333");
        assert_eq!(format_float(5.0).unwrap(), "5.0");
        assert_eq!(format_float(-0.0).unwrap(), "0.0");
        assert_eq!(format_float(123456789012.0).unwrap(), "123456789000.0");
        assert!(format_float(f64::NAN).is_err());
        assert!(format_float(f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn float_encoding_parses_back_to_rounded_value(x in -1e12f64..1e12) {
            let s = format_float(x).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, canonical_f64(x));
            // idempotent
            prop_assert_eq!(format_float(back).unwrap(), s);
        }
    }
}
