use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// The four lesion categories of the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LesionClass {
    #[serde(rename = "OPMD")]
    Opmd,
    Benign,
    Healthy,
    OralCancer,
}

impl LesionClass {
    pub const ALL: [LesionClass; 4] = [
        LesionClass::Opmd,
        LesionClass::Benign,
        LesionClass::Healthy,
        LesionClass::OralCancer,
    ];

    /// Directory name used in the dataset layout.
    pub fn folder_name(self) -> &'static str {
        match self {
            LesionClass::Opmd => "OPMD",
            LesionClass::Benign => "Benign",
            LesionClass::Healthy => "Healthy",
            LesionClass::OralCancer => "OralCancer",
        }
    }

    /// Row label used in rendered report tables.
    pub fn table_label(self) -> &'static str {
        match self {
            LesionClass::OralCancer => "Oral Cancer",
            other => other.folder_name(),
        }
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.folder_name())
    }
}

impl FromStr for LesionClass {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LesionClass::ALL
            .into_iter()
            .find(|c| c.folder_name() == s)
            .ok_or_else(|| DatasetError::Taxonomy(format!("unknown class `{s}`")))
    }
}

/// The three canonical label sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyKind {
    TwoClass,
    ThreeClass,
    FourClass,
}

impl TaxonomyKind {
    pub fn name(self) -> &'static str {
        match self {
            TaxonomyKind::TwoClass => "two_class",
            TaxonomyKind::ThreeClass => "three_class",
            TaxonomyKind::FourClass => "four_class",
        }
    }

    pub fn taxonomy(self) -> ClassTaxonomy {
        let classes = match self {
            TaxonomyKind::TwoClass => &LesionClass::ALL[..2],
            TaxonomyKind::ThreeClass => &LesionClass::ALL[..3],
            TaxonomyKind::FourClass => &LesionClass::ALL[..],
        };
        ClassTaxonomy {
            name: self.name().to_string(),
            classes: classes.to_vec(),
        }
    }
}

impl FromStr for TaxonomyKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_class" => Ok(TaxonomyKind::TwoClass),
            "three_class" => Ok(TaxonomyKind::ThreeClass),
            "four_class" => Ok(TaxonomyKind::FourClass),
            other => Err(DatasetError::Taxonomy(format!(
                "unknown taxonomy `{other}` (expected two_class, three_class or four_class)"
            ))),
        }
    }
}

/// An ordered label set. Class order fixes the row and column order of every
/// confusion matrix and report built against it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy")]
pub struct ClassTaxonomy {
    name: String,
    classes: Vec<LesionClass>,
}

#[derive(Deserialize)]
struct RawTaxonomy {
    name: String,
    classes: Vec<LesionClass>,
}

impl TryFrom<RawTaxonomy> for ClassTaxonomy {
    type Error = DatasetError;

    fn try_from(raw: RawTaxonomy) -> Result<Self, Self::Error> {
        Self::new(raw.name, raw.classes)
    }
}

impl ClassTaxonomy {
    pub fn new(name: impl Into<String>, classes: Vec<LesionClass>) -> Result<Self, DatasetError> {
        let name = name.into();
        if !(2..=4).contains(&classes.len()) {
            return Err(DatasetError::Taxonomy(format!(
                "taxonomy `{name}` must have 2 to 4 classes, got {}",
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(DatasetError::Taxonomy(format!(
                    "taxonomy `{name}` lists class {c} twice"
                )));
            }
        }
        Ok(Self { name, classes })
    }

    pub fn two_class() -> Self {
        TaxonomyKind::TwoClass.taxonomy()
    }

    pub fn three_class() -> Self {
        TaxonomyKind::ThreeClass.taxonomy()
    }

    pub fn four_class() -> Self {
        TaxonomyKind::FourClass.taxonomy()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[LesionClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, class: LesionClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn contains(&self, class: LesionClass) -> bool {
        self.index_of(class).is_some()
    }

    /// Comma-joined class list, as written into manifests.
    pub fn class_list(&self) -> String {
        self.classes
            .iter()
            .map(|c| c.folder_name())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Inverse of `name` + `class_list`.
    pub fn from_parts(name: &str, class_list: &str) -> Result<Self, DatasetError> {
        let classes = class_list
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, classes)
    }
}
