//! Float formatting for interchange files: every float is written with 17
//! significant digits so that files round-trip bit-exactly.

use serde::ser::{Error as _, SerializeSeq};
use serde::Serializer;
use serde_json::value::RawValue;

/// `x` in scientific notation with 17 significant digits.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(S::Error::custom(format!("non-finite float {x}")));
    }
    let raw = RawValue::from_string(sig17(*x)).map_err(S::Error::custom)?;
    serde::Serialize::serialize(&raw, s)
}

pub fn vec<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&Sig17(*x))?;
    }
    seq.end()
}

pub fn matrix<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(rows.len()))?;
    for row in rows {
        seq.serialize_element(&Sig17Row(row))?;
    }
    seq.end()
}

struct Sig17(f64);

impl serde::Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        f64(&self.0, s)
    }
}

struct Sig17Row<'a>(&'a [f64]);

impl serde::Serialize for Sig17Row<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        vec(self.0, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Serialize)]
    struct Probe {
        #[serde(serialize_with = "f64")]
        x: f64,
        #[serde(serialize_with = "vec")]
        xs: Vec<f64>,
    }

    #[test]
    fn writes_seventeen_digits_and_round_trips() {
        let x = 0.1_f64 + 0.2;
        let json = serde_json::to_string(&Probe {
            x,
            xs: vec![1.0, -2.5e-300],
        })
        .unwrap();
        assert_eq!(
            json,
            r#"{"x":3.0000000000000004e-1,"xs":[1.0000000000000000e0,-2.5000000000000000e-300]}"#
        );
        let back: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["x"].as_f64().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn rejects_non_finite() {
        let err = serde_json::to_string(&Probe {
            x: f64::NAN,
            xs: vec![],
        });
        assert!(err.is_err());
    }
}
