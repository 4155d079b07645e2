//! Canonical encoding of reals.
//!
//! Integral values are written without a fractional part (`38`, not `38.0`)
//! and everything else as the shortest decimal that round-trips.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serializer};

/// Largest magnitude written as a JSON integer; beyond it `i64` stops being
/// an exact carrier for every integral `f64`.
const EXACT_INT_LIMIT: f64 = 9.0e15;

pub(crate) fn as_exact_int(x: f64) -> Option<i64> {
    (x.fract() == 0.0 && x.abs() < EXACT_INT_LIMIT).then_some(x as i64)
}

/// JSON number for `x`, or `None` when `x` is not finite.
pub(crate) fn to_json_number(x: f64) -> Option<serde_json::Number> {
    match as_exact_int(x) {
        Some(i) => Some(i.into()),
        None => serde_json::Number::from_f64(x),
    }
}

/// Decimal text for `x`, shortest round-trip form.
pub(crate) fn to_decimal_string(x: f64) -> String {
    match as_exact_int(x) {
        Some(i) => i.to_string(),
        None => format!("{x}"),
    }
}

pub(crate) fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    match as_exact_int(*x) {
        Some(i) => s.serialize_i64(i),
        None => s.serialize_f64(*x),
    }
}

pub(crate) fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    f64::deserialize(d)
}

pub(crate) mod map {
    use super::*;
    use serde::ser::SerializeMap;

    pub(crate) fn serialize<S: Serializer>(
        m: &BTreeMap<String, f64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let mut out = s.serialize_map(Some(m.len()))?;
        for (k, v) in m {
            match as_exact_int(*v) {
                Some(i) => out.serialize_entry(k, &i)?,
                None => out.serialize_entry(k, v)?,
            }
        }
        out.end()
    }

    pub(crate) fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<String, f64>, D::Error> {
        BTreeMap::deserialize(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_values_drop_the_fraction() {
        assert_eq!(to_decimal_string(38.0), "38");
        assert_eq!(to_decimal_string(446.99), "446.99");
        assert_eq!(to_decimal_string(-0.5), "-0.5");
        assert_eq!(to_json_number(38.0).unwrap().to_string(), "38");
        assert_eq!(to_json_number(453.01).unwrap().to_string(), "453.01");
        assert!(to_json_number(f64::NAN).is_none());
    }
}
