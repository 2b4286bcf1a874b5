//! JSON-safe encoding for floats that may legitimately be infinite (margin
//! sentinels, concentrability on unsupported candidates). Finite values
//! serialize as numbers; infinities as the tagged strings "inf" / "-inf".

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Tagged {
    Number(f64),
    Tag(String),
}

fn encode(v: f64) -> Tagged {
    if v == f64::INFINITY {
        Tagged::Tag("inf".into())
    } else if v == f64::NEG_INFINITY {
        Tagged::Tag("-inf".into())
    } else {
        Tagged::Number(v)
    }
}

fn decode<'de, D: Deserializer<'de>>(t: Tagged) -> Result<f64, D::Error> {
    match t {
        Tagged::Number(v) => Ok(v),
        Tagged::Tag(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("bad float tag {other:?}"))),
        },
    }
}

pub mod float {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        encode(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode::<D>(Tagged::deserialize(d)?)
    }
}

pub mod float_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|&x| encode(x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Tagged>::deserialize(d)?
            .into_iter()
            .map(|t| decode::<D>(t))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Wrap {
        #[serde(with = "float")]
        a: f64,
        #[serde(with = "float_vec")]
        b: Vec<f64>,
    }

    #[test]
    fn infinities_round_trip() {
        let w = Wrap { a: f64::INFINITY, b: vec![1.5, f64::NEG_INFINITY, 0.25] };
        let text = serde_json::to_string(&w).unwrap();
        let back: Wrap = serde_json::from_str(&text).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn finite_values_stay_numbers() {
        let w = Wrap { a: 0.1 + 0.2, b: vec![] };
        let text = serde_json::to_string(&w).unwrap();
        assert!(!text.contains('"') || text.matches('"').count() == 4);
        let back: Wrap = serde_json::from_str(&text).unwrap();
        assert_eq!(w.a.to_bits(), back.a.to_bits());
    }
}
