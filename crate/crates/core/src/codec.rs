//! Mapping between raw SUT input values and the generator's `[-1, 1]` feature space.
//!
//! Every variable is first turned into an integer (categoricals by their
//! declaration index), then mapped affinely from `[lo, hi]` onto `[-1, 1]`.
//! Decoding inverts the map, rounds half-up and clamps, so it never fails.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid input variable `{name}`: {reason}")]
    InvalidVariable { name: String, reason: String },
    #[error("input space must declare at least one variable")]
    EmptySpace,
    #[error("value {value} of `{variable}` is outside its domain")]
    OutOfDomain { variable: String, value: String },
    #[error("expected {expected} values, got {actual}")]
    Arity { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VariableKind {
    IntegerRange { lo: i64, hi: i64 },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputVariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

impl InputVariableSpec {
    pub fn integer(name: impl Into<String>, lo: i64, hi: i64) -> Result<Self, CodecError> {
        let v = Self {
            name: name.into(),
            kind: VariableKind::IntegerRange { lo, hi },
        };
        v.validate()?;
        Ok(v)
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Result<Self, CodecError> {
        let v = Self {
            name: name.into(),
            kind: VariableKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let fail = |reason: &str| {
            Err(CodecError::InvalidVariable {
                name: self.name.clone(),
                reason: reason.to_owned(),
            })
        };
        match &self.kind {
            VariableKind::IntegerRange { lo, hi } if lo >= hi => fail("lo must be < hi"),
            VariableKind::Categorical { categories } if categories.is_empty() => fail("categories must be non-empty"),
            VariableKind::Categorical { categories } => {
                let mut seen = std::collections::HashSet::new();
                if categories.iter().all(|c| seen.insert(c)) {
                    Ok(())
                } else {
                    fail("categories must be unique")
                }
            }
            _ => Ok(()),
        }
    }

    /// Integer bounds of the variable; categoricals use `[0, n-1]`.
    pub fn bounds(&self) -> (i64, i64) {
        match &self.kind {
            VariableKind::IntegerRange { lo, hi } => (*lo, *hi),
            VariableKind::Categorical { categories } => (0, categories.len() as i64 - 1),
        }
    }

    pub fn cardinality(&self) -> u64 {
        let (lo, hi) = self.bounds();
        (hi - lo + 1) as u64
    }

    pub fn contains(&self, value: i64) -> bool {
        let (lo, hi) = self.bounds();
        (lo..=hi).contains(&value)
    }

    /// Parses a raw value as it appears in CSV files or on the wire.
    pub fn parse_value(&self, raw: &str) -> Result<i64, CodecError> {
        let raw = raw.trim();
        let out_of_domain = || CodecError::OutOfDomain {
            variable: self.name.clone(),
            value: raw.to_owned(),
        };
        let value = match &self.kind {
            VariableKind::IntegerRange { .. } => raw.parse::<i64>().map_err(|_| out_of_domain())?,
            VariableKind::Categorical { categories } => {
                categories.iter().position(|c| c == raw).ok_or_else(out_of_domain)? as i64
            }
        };
        if self.contains(value) {
            Ok(value)
        } else {
            Err(out_of_domain())
        }
    }

    pub fn format_value(&self, value: i64) -> String {
        match &self.kind {
            VariableKind::IntegerRange { .. } => value.to_string(),
            VariableKind::Categorical { categories } => usize::try_from(value)
                .ok()
                .and_then(|i| categories.get(i))
                .cloned()
                .unwrap_or_else(|| value.to_string()),
        }
    }

    fn encode_value(&self, value: i64) -> f64 {
        let (lo, hi) = self.bounds();
        if hi == lo {
            return 0.0;
        }
        2.0 * (value - lo) as f64 / (hi - lo) as f64 - 1.0
    }

    fn decode_value(&self, feature: f64) -> i64 {
        let (lo, hi) = self.bounds();
        if hi == lo || feature.is_nan() {
            return lo;
        }
        let f = feature.clamp(-1.0, 1.0);
        let raw = lo as f64 + (f + 1.0) / 2.0 * (hi - lo) as f64;
        ((raw + 0.5).floor() as i64).clamp(lo, hi)
    }
}

/// Ordered list of the SUT's input variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpace {
    pub variables: Vec<InputVariableSpec>,
}

/// One raw combination of input values, in variable declaration order.
/// Categorical values are stored as their category index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TestPoint {
    pub values: Vec<i64>,
}

impl TestPoint {
    pub fn new(values: Vec<i64>) -> Self {
        Self { values }
    }
}

/// A test point mapped into `[-1, 1]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTest {
    pub features: Vec<f64>,
}

impl InputSpace {
    pub fn new(variables: Vec<InputVariableSpec>) -> Result<Self, CodecError> {
        let space = Self { variables };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.variables.is_empty() {
            return Err(CodecError::EmptySpace);
        }
        self.variables.iter().try_for_each(InputVariableSpec::validate)
    }

    /// Number of variables, i.e. the feature dimension.
    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn total_combinations(&self) -> u64 {
        self.variables.iter().map(InputVariableSpec::cardinality).product()
    }

    pub fn check(&self, point: &TestPoint) -> Result<(), CodecError> {
        if point.values.len() != self.dim() {
            return Err(CodecError::Arity {
                expected: self.dim(),
                actual: point.values.len(),
            });
        }
        for (var, &v) in self.variables.iter().zip(&point.values) {
            if !var.contains(v) {
                return Err(CodecError::OutOfDomain {
                    variable: var.name.clone(),
                    value: v.to_string(),
                });
            }
        }
        Ok(())
    }

    /// The `index`-th point in lexicographic order (first variable most significant).
    pub fn point_at(&self, mut index: u64) -> TestPoint {
        let mut values = vec![0; self.dim()];
        for (slot, var) in values.iter_mut().zip(&self.variables).rev() {
            let card = var.cardinality();
            *slot = var.bounds().0 + (index % card) as i64;
            index /= card;
        }
        TestPoint { values }
    }

    pub fn index_of(&self, point: &TestPoint) -> Result<u64, CodecError> {
        self.check(point)?;
        Ok(self.variables.iter().zip(&point.values).fold(0u64, |acc, (var, &v)| {
            acc * var.cardinality() + (v - var.bounds().0) as u64
        }))
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> TestPoint {
        TestPoint {
            values: self
                .variables
                .iter()
                .map(|v| {
                    let (lo, hi) = v.bounds();
                    rng.gen_range(lo..=hi)
                })
                .collect(),
        }
    }

    pub fn iter_points(&self) -> impl Iterator<Item = TestPoint> + '_ {
        (0..self.total_combinations()).map(|i| self.point_at(i))
    }

    pub fn format_point(&self, point: &TestPoint) -> Vec<String> {
        self.variables
            .iter()
            .zip(&point.values)
            .map(|(var, &v)| var.format_value(v))
            .collect()
    }

    pub fn variable_names(&self) -> Vec<&str> {
        self.variables.iter().map(|v| v.name.as_str()).collect()
    }
}

pub fn encode(space: &InputSpace, point: &TestPoint) -> Result<EncodedTest, CodecError> {
    space.check(point)?;
    Ok(EncodedTest {
        features: space
            .variables
            .iter()
            .zip(&point.values)
            .map(|(var, &v)| var.encode_value(v))
            .collect(),
    })
}

/// Inverse of [`encode`]; out-of-range features are clamped into the domain.
/// Missing trailing features decode to each variable's lower bound.
pub fn decode(space: &InputSpace, enc: &EncodedTest) -> TestPoint {
    TestPoint {
        values: space
            .variables
            .iter()
            .enumerate()
            .map(|(i, var)| var.decode_value(enc.features.get(i).copied().unwrap_or(f64::NAN)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rubis_like() -> InputSpace {
        InputSpace::new(vec![
            InputVariableSpec::integer("CID", 1, 20).unwrap(),
            InputVariableSpec::integer("RID", 1, 62).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn endpoints_map_to_unit_interval_edges() {
        let s = rubis_like();
        assert_eq!(encode(&s, &TestPoint::new(vec![1, 1])).unwrap().features[0], -1.0);
        assert_eq!(encode(&s, &TestPoint::new(vec![20, 1])).unwrap().features[0], 1.0);
    }

    #[test]
    fn interior_value_follows_affine_map() {
        let s = rubis_like();
        let f = encode(&s, &TestPoint::new(vec![1, 32])).unwrap().features[1];
        assert!((f - 1.0 / 61.0).abs() < 1e-15);
        assert!((f - 0.016393).abs() < 1e-6);
    }

    #[test]
    fn decode_clamps_and_rounds_half_up() {
        let s = rubis_like();
        let p = decode(
            &s,
            &EncodedTest {
                features: vec![1.7, 0.0],
            },
        );
        assert_eq!(p.values, vec![20, 32]);
        let p = decode(
            &s,
            &EncodedTest {
                features: vec![-5.0, f64::NAN],
            },
        );
        assert_eq!(p.values, vec![1, 1]);
    }

    #[test]
    fn encode_rejects_out_of_domain() {
        let s = rubis_like();
        assert!(matches!(
            encode(&s, &TestPoint::new(vec![21, 1])),
            Err(CodecError::OutOfDomain { .. })
        ));
        assert!(matches!(
            encode(&s, &TestPoint::new(vec![1])),
            Err(CodecError::Arity { .. })
        ));
    }

    #[test]
    fn categorical_uses_declaration_order() {
        let s = InputSpace::new(vec![InputVariableSpec::categorical(
            "region",
            ["north", "south", "east"],
        )
        .unwrap()])
        .unwrap();
        let v = s.variables[0].parse_value("east").unwrap();
        assert_eq!(v, 2);
        assert_eq!(encode(&s, &TestPoint::new(vec![v])).unwrap().features, vec![1.0]);
        assert_eq!(encode(&s, &TestPoint::new(vec![1])).unwrap().features, vec![0.0]);
        assert_eq!(s.format_point(&TestPoint::new(vec![0])), vec!["north"]);
        assert!(s.variables[0].parse_value("west").is_err());
    }

    #[test]
    fn single_category_is_constant() {
        let s = InputSpace::new(vec![InputVariableSpec::categorical("only", ["x"]).unwrap()]).unwrap();
        let e = encode(&s, &TestPoint::new(vec![0])).unwrap();
        assert_eq!(e.features, vec![0.0]);
        assert_eq!(decode(&s, &e).values, vec![0]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(InputVariableSpec::integer("x", 3, 3).is_err());
        assert!(InputVariableSpec::categorical::<&str>("c", []).is_err());
        assert!(InputVariableSpec::categorical("c", ["a", "a"]).is_err());
        assert_eq!(InputSpace::new(vec![]).unwrap_err(), CodecError::EmptySpace);
    }

    #[test]
    fn enumeration_index_round_trips() {
        let s = rubis_like();
        assert_eq!(s.total_combinations(), 1240);
        for i in [0, 1, 61, 62, 1239] {
            assert_eq!(s.index_of(&s.point_at(i)).unwrap(), i);
        }
        assert_eq!(s.point_at(62).values, vec![2, 1]);
    }

    proptest! {
        #[test]
        fn round_trip_identity(cid in 1i64..=20, rid in 1i64..=62) {
            let s = rubis_like();
            let p = TestPoint::new(vec![cid, rid]);
            prop_assert_eq!(decode(&s, &encode(&s, &p).unwrap()), p);
        }

        #[test]
        fn decode_is_total(a in proptest::num::f64::ANY, b in -10.0f64..10.0) {
            let s = rubis_like();
            let p = decode(&s, &EncodedTest { features: vec![a, b] });
            prop_assert!(s.check(&p).is_ok());
        }

        #[test]
        fn encode_strictly_monotone(a in 1i64..62, d in 1i64..10) {
            let s = rubis_like();
            let b = (a + d).min(62);
            prop_assume!(b > a);
            let fa = encode(&s, &TestPoint::new(vec![1, a])).unwrap().features[1];
            let fb = encode(&s, &TestPoint::new(vec![1, b])).unwrap().features[1];
            prop_assert!(fa < fb);
        }
    }
}
