//! Acoustic feature schema: the named features, the two utterance-level
//! summary statistics taken over each, and the grouping of the resulting
//! (feature, statistic) columns into predictor groups.
//!
//! Columns are addressed by a dense index in catalog order: feature-major,
//! mean before std, so column `2 * f` is the mean of feature `f` and
//! `2 * f + 1` its standard deviation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Utterance-level summary statistic of a frame-level feature track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Mean,
    Std,
}

impl StatKind {
    pub const ALL: [StatKind; 2] = [StatKind::Mean, StatKind::Std];

    pub fn suffix(self) -> &'static str {
        match self {
            StatKind::Mean => "mean",
            StatKind::Std => "std",
        }
    }

    fn offset(self) -> usize {
        match self {
            StatKind::Mean => 0,
            StatKind::Std => 1,
        }
    }

    pub fn parse(s: &str) -> Option<StatKind> {
        match s {
            "mean" => Some(StatKind::Mean),
            "std" => Some(StatKind::Std),
            _ => None,
        }
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureId {
    pub name: String,
    /// Informational only; values are never converted between units.
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureGroup {
    pub name: String,
    /// Column indices into the owning catalog, in declaration order.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct GroupScheme {
    pub groups: Vec<FeatureGroup>,
}

impl GroupScheme {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }
}

/// Immutable feature schema shared by ingestion, design construction and
/// reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCatalog {
    features: Vec<FeatureId>,
    scheme: GroupScheme,
    index: HashMap<String, usize>,
}

const DEFAULT_FEATURES: [(&str, &str); 23] = [
    ("F0", "semitone"),
    ("Loudness", "sone"),
    ("Jitter", "ratio"),
    ("Shimmer", "dB"),
    ("HNR", "dB"),
    ("H1-H2", "dB"),
    ("H1-A3", "dB"),
    ("F1", "Hz"),
    ("F2", "Hz"),
    ("F3", "Hz"),
    ("F4", "Hz"),
    ("B1", "Hz"),
    ("B2", "Hz"),
    ("B3", "Hz"),
    ("B4", "Hz"),
    ("A1", "dB"),
    ("A2", "dB"),
    ("A3", "dB"),
    ("A4", "dB"),
    ("SpectralFlux", "unitless"),
    ("VoicedSegPerSec", "1/s"),
    ("VoicedSegLength", "s"),
    ("UnvoicedSegLength", "s"),
];

const DEFAULT_GROUPS: [(&str, &[&str]); 8] = [
    ("F0", &["F0"]),
    ("VQ", &["Loudness", "Jitter", "Shimmer", "HNR", "H1-H2", "H1-A3"]),
    ("Formant1", &["F1", "B1", "A1"]),
    ("Formant2", &["F2", "B2", "A2"]),
    ("Formant3", &["F3", "B3", "A3"]),
    ("Formant4", &["F4", "B4", "A4"]),
    ("SpectralFlux", &["SpectralFlux"]),
    ("Temporal", &["VoicedSegPerSec", "VoicedSegLength", "UnvoicedSegLength"]),
];

/// The 23-feature catalog with its 8 feature groups.
pub fn default_catalog() -> FeatureCatalog {
    let config = CatalogConfig {
        features: DEFAULT_FEATURES
            .iter()
            .map(|(name, unit)| FeatureId {
                name: name.to_string(),
                unit: unit.to_string(),
            })
            .collect(),
        groups: DEFAULT_GROUPS
            .iter()
            .map(|(name, feats)| GroupConfig {
                name: name.to_string(),
                members: feats
                    .iter()
                    .flat_map(|f| StatKind::ALL.iter().map(move |s| format!("{f}:{s}")))
                    .collect(),
            })
            .collect(),
    };
    FeatureCatalog::from_config(config).expect("built-in catalog is valid")
}

/// On-disk catalog description (TOML).
///
/// ```toml
/// [[features]]
/// name = "F0"
/// unit = "semitone"
///
/// [[groups]]
/// name = "F0"
/// members = ["F0:mean", "F0:std"]
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogConfig {
    #[serde(default)]
    pub features: Vec<FeatureId>,
    #[serde(default)]
    pub groups: Vec<GroupConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupConfig {
    pub name: String,
    #[serde(default)]
    pub members: Vec<String>,
}

/// Parses a catalog document and validates it.
pub fn load_custom_catalog(document: &str) -> Result<FeatureCatalog> {
    let config: CatalogConfig =
        toml::from_str(document).map_err(|e| Error::Catalog(format!("malformed document: {e}")))?;
    FeatureCatalog::from_config(config)
}

pub fn load_catalog_file(path: &Path) -> Result<FeatureCatalog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_custom_catalog(&text)
}

impl FeatureCatalog {
    pub fn from_config(config: CatalogConfig) -> Result<Self> {
        if config.features.is_empty() {
            return Err(Error::Catalog("empty catalog".into()));
        }
        let mut index = HashMap::with_capacity(config.features.len());
        for (i, f) in config.features.iter().enumerate() {
            if f.name.is_empty() || f.name.contains(':') || f.name.contains(',') {
                return Err(Error::Catalog(format!("invalid feature name {:?}", f.name)));
            }
            if index.insert(f.name.clone(), i).is_some() {
                return Err(Error::Catalog(format!("duplicate feature name {:?}", f.name)));
            }
        }

        let mut seen_groups = HashSet::new();
        let mut assigned: HashMap<usize, String> = HashMap::new();
        let mut groups = Vec::with_capacity(config.groups.len());
        for g in config.groups {
            if !seen_groups.insert(g.name.clone()) {
                return Err(Error::Catalog(format!("duplicate group name {:?}", g.name)));
            }
            if g.members.is_empty() {
                return Err(Error::Catalog(format!("empty group {:?}", g.name)));
            }
            let mut members = Vec::with_capacity(g.members.len());
            for m in &g.members {
                let (feat, stat) = m.rsplit_once(':').ok_or_else(|| {
                    Error::Catalog(format!("member {m:?} is not of the form <feature>:<mean|std>"))
                })?;
                let stat = StatKind::parse(stat)
                    .ok_or_else(|| Error::Catalog(format!("member {m:?}: unknown statistic")))?;
                let f = *index
                    .get(feat)
                    .ok_or_else(|| Error::Catalog(format!("member {m:?}: unknown feature")))?;
                let col = 2 * f + stat.offset();
                if let Some(prev) = assigned.insert(col, g.name.clone()) {
                    return Err(Error::Catalog(format!(
                        "duplicate group membership: {m} in both {prev:?} and {:?}",
                        g.name
                    )));
                }
                members.push(col);
            }
            groups.push(FeatureGroup {
                name: g.name,
                members,
            });
        }

        Ok(FeatureCatalog {
            features: config.features,
            scheme: GroupScheme { groups },
            index,
        })
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn groups(&self) -> &GroupScheme {
        &self.scheme
    }

    pub fn n_columns(&self) -> usize {
        2 * self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn column(&self, feature: &str, stat: StatKind) -> Option<usize> {
        self.feature_index(feature).map(|f| 2 * f + stat.offset())
    }

    pub fn column_feature(&self, col: usize) -> &FeatureId {
        &self.features[col / 2]
    }

    pub fn column_stat(&self, col: usize) -> StatKind {
        StatKind::ALL[col % 2]
    }

    /// Header label of a column, `<feature>_<mean|std>`.
    pub fn column_label(&self, col: usize) -> String {
        format!("{}_{}", self.features[col / 2].name, self.column_stat(col))
    }

    pub fn column_labels(&self) -> Vec<String> {
        (0..self.n_columns()).map(|c| self.column_label(c)).collect()
    }

    /// Inverse of [`column_label`](Self::column_label). Also accepts the
    /// `<feature>:<stat>` spelling used in catalog documents.
    pub fn parse_column(&self, label: &str) -> Option<usize> {
        let (feat, stat) = label.rsplit_once('_').or_else(|| label.rsplit_once(':'))?;
        self.column(feat, StatKind::parse(stat)?)
    }

    /// Serializes back to the document form accepted by
    /// [`load_custom_catalog`].
    pub fn to_config(&self) -> CatalogConfig {
        CatalogConfig {
            features: self.features.clone(),
            groups: self
                .scheme
                .groups
                .iter()
                .map(|g| GroupConfig {
                    name: g.name.clone(),
                    members: g
                        .members
                        .iter()
                        .map(|&c| format!("{}:{}", self.features[c / 2].name, self.column_stat(c)))
                        .collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_shape() {
        let cat = default_catalog();
        assert_eq!(cat.features().len(), 23);
        assert_eq!(cat.n_columns(), 46);
        let sizes: Vec<usize> = cat.groups().groups.iter().map(|g| g.members.len()).collect();
        assert_eq!(sizes, vec![2, 12, 6, 6, 6, 6, 2, 6]);
        assert_eq!(sizes.iter().sum::<usize>(), 46);
        assert_eq!(cat.groups().get("F0").unwrap().members.len(), 2);
        assert_eq!(cat.groups().get("VQ").unwrap().members.len(), 12);
    }

    #[test]
    fn default_groups_partition_columns() {
        let cat = default_catalog();
        let mut all: Vec<usize> = cat
            .groups()
            .groups
            .iter()
            .flat_map(|g| g.members.iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..46).collect::<Vec<_>>());
    }

    #[test]
    fn default_catalog_is_deterministic() {
        assert_eq!(default_catalog(), default_catalog());
    }

    #[test]
    fn formant_groups_are_per_formant() {
        let cat = default_catalog();
        let g = cat.groups().get("Formant3").unwrap();
        let labels: Vec<String> = g.members.iter().map(|&c| cat.column_label(c)).collect();
        assert_eq!(labels, ["F3_mean", "F3_std", "B3_mean", "B3_std", "A3_mean", "A3_std"]);
    }

    #[test]
    fn column_labels_round_trip() {
        let cat = default_catalog();
        for c in 0..cat.n_columns() {
            assert_eq!(cat.parse_column(&cat.column_label(c)), Some(c));
        }
        assert_eq!(cat.parse_column("H1-A3_std"), cat.column("H1-A3", StatKind::Std));
        assert_eq!(cat.parse_column("F0:mean"), Some(0));
        assert_eq!(cat.parse_column("F0_median"), None);
    }

    #[test]
    fn custom_catalog_two_features() {
        let doc = r#"
            [[features]]
            name = "pitch"
            unit = "semitone"
            [[features]]
            name = "energy"
            unit = "dB"
            [[groups]]
            name = "all"
            members = ["pitch:mean", "pitch:std", "energy:mean", "energy:std"]
        "#;
        let cat = load_custom_catalog(doc).unwrap();
        assert_eq!(cat.features().len(), 2);
        assert_eq!(cat.groups().len(), 1);
        assert_eq!(cat.groups().groups[0].members, vec![0, 1, 2, 3]);
    }

    #[test]
    fn custom_catalog_duplicate_membership() {
        let doc = r#"
            [[features]]
            name = "F0"
            unit = "semitone"
            [[groups]]
            name = "a"
            members = ["F0:mean"]
            [[groups]]
            name = "b"
            members = ["F0:mean", "F0:std"]
        "#;
        let err = load_custom_catalog(doc).unwrap_err().to_string();
        assert!(err.contains("duplicate group membership"), "{err}");
    }

    #[test]
    fn custom_catalog_rejects_degenerate_documents() {
        let err = load_custom_catalog("features = []").unwrap_err().to_string();
        assert!(err.contains("empty catalog"), "{err}");

        let dup = r#"
            [[features]]
            name = "x"
            unit = ""
            [[features]]
            name = "x"
            unit = ""
        "#;
        assert!(load_custom_catalog(dup).unwrap_err().to_string().contains("duplicate feature"));

        let empty_group = r#"
            [[features]]
            name = "x"
            unit = ""
            [[groups]]
            name = "g"
            members = []
        "#;
        assert!(load_custom_catalog(empty_group).unwrap_err().to_string().contains("empty group"));

        let unknown = r#"
            [[features]]
            name = "x"
            unit = ""
            [[groups]]
            name = "g"
            members = ["y:mean"]
        "#;
        assert!(load_custom_catalog(unknown).unwrap_err().to_string().contains("unknown feature"));
    }

    #[test]
    fn config_round_trip() {
        let cat = default_catalog();
        let doc = toml::to_string(&cat.to_config()).unwrap();
        assert_eq!(load_custom_catalog(&doc).unwrap(), cat);
    }
}
