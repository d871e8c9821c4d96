//! Feature schema: the ordered list of categorical/continuous feature
//! declarations that fixes the block layout of every encoded record.
//!
//! The schema is always explicit and external — outcome vocabularies are
//! never inferred from data, so train- and score-time encodings cannot
//! drift apart. Model inputs are laid out as the categorical one-hot
//! blocks in feature order followed by the continuous values in feature
//! order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    /// Outcome vocabulary; required (len >= 2) for categorical features,
    /// must be absent for continuous ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcomes: Vec<String>,
}

impl Feature {
    pub fn categorical(name: impl Into<String>, outcomes: Vec<String>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Categorical,
            outcomes,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Continuous,
            outcomes: Vec::new(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }
}

/// Ordered feature declarations. Field is private so every instance went
/// through validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct CategoricalSchema {
    features: Vec<Feature>,
}

/// On-disk shape: `{"features": [{"name", "kind", "outcomes"?}]}`.
#[derive(Serialize, Deserialize)]
struct SchemaFile {
    features: Vec<Feature>,
}

impl TryFrom<SchemaFile> for CategoricalSchema {
    type Error = Error;

    fn try_from(f: SchemaFile) -> Result<Self> {
        CategoricalSchema::new(f.features)
    }
}

impl From<CategoricalSchema> for SchemaFile {
    fn from(s: CategoricalSchema) -> Self {
        SchemaFile {
            features: s.features,
        }
    }
}

impl CategoricalSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Validation("schema has no features".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &features {
            if !seen.insert(f.name.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate feature name {:?}",
                    f.name
                )));
            }
            match f.kind {
                FeatureKind::Categorical => {
                    if f.outcomes.len() < 2 {
                        return Err(Error::Validation(format!(
                            "categorical feature {:?} needs >= 2 outcomes, got {}",
                            f.name,
                            f.outcomes.len()
                        )));
                    }
                    let mut outs = std::collections::HashSet::new();
                    for o in &f.outcomes {
                        if !outs.insert(o) {
                            return Err(Error::Validation(format!(
                                "feature {:?} lists outcome {:?} twice",
                                f.name, o
                            )));
                        }
                    }
                }
                FeatureKind::Continuous => {
                    if !f.outcomes.is_empty() {
                        return Err(Error::Validation(format!(
                            "continuous feature {:?} must not list outcomes",
                            f.name
                        )));
                    }
                }
            }
        }
        Ok(CategoricalSchema { features })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    /// Number of categorical features.
    pub fn d_cat(&self) -> usize {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
            .count()
    }

    /// Number of continuous features.
    pub fn n_cont(&self) -> usize {
        self.features.len() - self.d_cat()
    }

    /// Outcome count K_d per categorical feature, in feature order.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
            .map(|f| f.outcomes.len())
            .collect()
    }

    /// Sum of all K_d.
    pub fn total_onehot_dim(&self) -> usize {
        self.block_sizes().iter().sum()
    }

    /// Model input width: one-hot blocks plus continuous values.
    pub fn input_dim(&self) -> usize {
        self.total_onehot_dim() + self.n_cont()
    }

    /// Categorical features in block order.
    pub fn cat_features(&self) -> impl Iterator<Item = &Feature> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
    }

    /// Continuous features in layout order.
    pub fn cont_features(&self) -> impl Iterator<Item = &Feature> {
        self.features
            .iter()
            .filter(|f| f.kind == FeatureKind::Continuous)
    }

    /// Compact JSON with a fixed field order, used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("schema serialization cannot fail")
    }

    /// Hex SHA-256 of the canonical JSON; binds checkpoints and scorer
    /// files to the schema they were built from.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_json().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text + "\n")
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cat_one_cont() -> CategoricalSchema {
        CategoricalSchema::new(vec![
            Feature::categorical("color", vec!["r".into(), "g".into(), "b".into()]),
            Feature::continuous("age"),
            Feature::categorical("shape", vec!["round".into(), "square".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn dimensions_follow_block_layout() {
        let s = two_cat_one_cont();
        assert_eq!(s.d_cat(), 2);
        assert_eq!(s.n_cont(), 1);
        assert_eq!(s.block_sizes(), vec![3, 2]);
        assert_eq!(s.total_onehot_dim(), 5);
        assert_eq!(s.input_dim(), 6);
    }

    #[test]
    fn rejects_small_vocabulary() {
        let err = CategoricalSchema::new(vec![Feature::categorical("x", vec!["only".into()])]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_duplicate_names_and_outcomes() {
        assert!(CategoricalSchema::new(vec![
            Feature::continuous("x"),
            Feature::continuous("x"),
        ])
        .is_err());
        assert!(
            CategoricalSchema::new(vec![Feature::categorical(
                "x",
                vec!["a".into(), "a".into()]
            )])
            .is_err()
        );
    }

    #[test]
    fn rejects_outcomes_on_continuous() {
        let f = Feature {
            name: "x".into(),
            kind: FeatureKind::Continuous,
            outcomes: vec!["a".into(), "b".into()],
        };
        assert!(CategoricalSchema::new(vec![f]).is_err());
    }

    #[test]
    fn json_round_trip_preserves_schema_and_hash() {
        let s = two_cat_one_cont();
        let text = serde_json::to_string(&s).unwrap();
        let back = CategoricalSchema::from_json_str(&text).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.hash(), back.hash());
        assert_eq!(s.hash().len(), 64);
    }

    #[test]
    fn hash_distinguishes_schemas() {
        let a = two_cat_one_cont();
        let b = CategoricalSchema::new(vec![Feature::categorical(
            "color",
            vec!["r".into(), "g".into()],
        )])
        .unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn deserialization_validates() {
        let bad = r#"{"features":[{"name":"x","kind":"categorical","outcomes":["a"]}]}"#;
        assert!(CategoricalSchema::from_json_str(bad).is_err());
    }
}
