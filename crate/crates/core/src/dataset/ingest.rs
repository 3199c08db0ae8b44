use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassTaxonomy, DatasetError, LesionClass, MetadataTable};

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// How an example entered the training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Augmented,
    Duplicated,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Augmented => "augmented",
            Origin::Duplicated => "duplicated",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Origin::Original),
            "augmented" => Ok(Origin::Augmented),
            "duplicated" => Ok(Origin::Duplicated),
            other => Err(format!("unknown origin `{other}`")),
        }
    }
}

/// Example identifier.
///
/// Originals are named by their path relative to the dataset root
/// (`OPMD/P1_0.jpg`). Derived examples append `@a<k>` for the k-th augmented
/// copy and `@d<k>` for the k-th duplicate drawn during oversampling.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExampleId(String);

impl ExampleId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn augmented(&self, copy: u32) -> ExampleId {
        ExampleId(format!("{}@a{copy}", self.0))
    }

    pub fn duplicated(&self, k: usize) -> ExampleId {
        ExampleId(format!("{}@d{k}", self.0))
    }

    /// The original example this id descends from.
    pub fn root(&self) -> ExampleId {
        ExampleId(self.0.split('@').next().unwrap_or_default().to_string())
    }

    /// The example whose pixels this one shares: duplicates resolve to their
    /// source.
    pub fn pixel_source(&self) -> ExampleId {
        let mut s = self.0.as_str();
        while let Some(pos) = s.rfind("@d") {
            if s[pos + 2..].bytes().all(|b| b.is_ascii_digit()) && pos + 2 < s.len() {
                s = &s[..pos];
            } else {
                break;
            }
        }
        ExampleId(s.to_string())
    }

    /// Augmentation copy index of the pixel source, if it is an augmented copy.
    pub fn augmentation_copy(&self) -> Option<u32> {
        let source = self.pixel_source();
        let pos = source.0.rfind("@a")?;
        source.0[pos + 2..].parse().ok()
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The id for an original image file in a class folder.
pub fn example_id_for(class: LesionClass, file_name: &str) -> ExampleId {
    ExampleId(format!("{}/{file_name}", class.folder_name()))
}

/// Validates an example id and returns its class, patient id and origin.
pub fn parse_example_id(text: &str) -> Result<(ExampleId, LesionClass, String, Origin), String> {
    if text.chars().any(char::is_control) {
        return Err(format!("example id {text:?} contains control characters"));
    }
    let (class_part, rest) = text
        .split_once('/')
        .ok_or_else(|| format!("example id `{text}` lacks a class prefix"))?;
    let class: LesionClass = class_part.parse().map_err(|e: DatasetError| e.to_string())?;
    let mut parts = rest.split('@');
    let file_name = parts.next().unwrap_or_default();
    if file_name.is_empty() || file_name == "." || file_name == ".." || file_name.contains('/') || file_name.contains('\\') {
        return Err(format!("example id `{text}` has an invalid file name"));
    }
    let mut origin = Origin::Original;
    for part in parts {
        let (tag, digits) = part.split_at(part.len().min(1));
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() > 9 {
            return Err(format!("example id `{text}` has a malformed suffix `@{part}`"));
        }
        origin = match (tag, origin) {
            ("a", Origin::Original) => Origin::Augmented,
            ("d", _) => Origin::Duplicated,
            _ => return Err(format!("example id `{text}` has an out-of-order suffix `@{part}`")),
        };
    }
    let patient = patient_id_from_file_name(file_name);
    Ok((ExampleId(text.to_string()), class, patient, origin))
}

/// Patient id encoded in an image file name: the prefix before the first
/// underscore, or the whole stem when there is none.
pub fn patient_id_from_file_name(file_name: &str) -> String {
    let stem = match file_name.rfind('.') {
        Some(pos) if pos > 0 => &file_name[..pos],
        _ => file_name,
    };
    stem.split('_').next().unwrap_or(stem).to_string()
}

/// One image paired with its patient and label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: ExampleId,
    pub image_path: PathBuf,
    pub patient_id: String,
    pub label: LesionClass,
    pub origin: Origin,
}

impl LabeledExample {
    /// Rebuilds an example from its id and the dataset root.
    pub fn from_id(root: &Path, text: &str) -> Result<Self, String> {
        let (id, label, patient_id, origin) = parse_example_id(text)?;
        let relative = id.root();
        Ok(Self {
            image_path: root.join(relative.as_str()),
            id,
            patient_id,
            label,
            origin,
        })
    }
}

/// Result of scanning a dataset root.
#[derive(Clone, Debug, Default)]
pub struct IngestOutcome {
    /// Examples sorted by id.
    pub examples: Vec<LabeledExample>,
    /// Image files per folder that were skipped because the folder is not in
    /// the taxonomy.
    pub skipped: BTreeMap<String, usize>,
    /// Taxonomy classes whose folder is missing or holds no images.
    pub empty_classes: Vec<LesionClass>,
}

impl IngestOutcome {
    pub fn class_counts(&self) -> BTreeMap<LesionClass, usize> {
        let mut counts = BTreeMap::new();
        for ex in &self.examples {
            *counts.entry(ex.label).or_insert(0) += 1;
        }
        counts
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DatasetError::io(dir, e))?;
    entries.sort();
    Ok(entries)
}

/// Scans `<root>/<Class>/<patient_id>_<k>.<ext>` for the taxonomy's classes and
/// joins each image to its metadata record.
pub fn ingest_images(
    root: &Path,
    taxonomy: &ClassTaxonomy,
    metadata: &MetadataTable,
) -> Result<IngestOutcome, DatasetError> {
    let mut outcome = IngestOutcome::default();
    let mut candidates = Vec::new();

    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let folder = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let class = folder.parse::<LesionClass>().ok().filter(|c| taxonomy.contains(*c));
        let images: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        match class {
            Some(class) => candidates.extend(images.into_iter().map(|p| (class, p))),
            None => {
                log::info!("skipping folder {folder}: {} images outside taxonomy", images.len());
                outcome.skipped.insert(folder, images.len());
            }
        }
    }

    let mut unresolved = Vec::new();
    let mut examples = Vec::with_capacity(candidates.len());
    for (class, path) in candidates {
        let file_name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| DatasetError::UnreadableImage {
                path: path.clone(),
                message: "file name is not valid UTF-8".into(),
            })?
            .to_string();
        let id = example_id_for(class, &file_name);
        if !matches!(parse_example_id(id.as_str()), Ok((_, _, _, Origin::Original))) {
            return Err(DatasetError::UnreadableImage {
                path,
                message: "file name cannot form an example id (no '@' or control characters)".into(),
            });
        }
        let patient_id = patient_id_from_file_name(&file_name);
        if metadata.get(&patient_id).is_none() {
            unresolved.push(path);
            continue;
        }
        examples.push(LabeledExample {
            id,
            image_path: path,
            patient_id,
            label: class,
            origin: Origin::Original,
        });
    }
    if !unresolved.is_empty() {
        return Err(DatasetError::UnresolvedPatient(unresolved));
    }

    // header-only decode; catches truncated or mislabelled files early
    let failures: Vec<DatasetError> = examples
        .par_iter()
        .filter_map(|ex| {
            image::ImageReader::open(&ex.image_path)
                .and_then(|r| r.with_guessed_format())
                .map_err(|e| e.to_string())
                .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()))
                .err()
                .map(|message| DatasetError::UnreadableImage {
                    path: ex.image_path.clone(),
                    message,
                })
        })
        .collect();
    if let Some(first) = failures.into_iter().next() {
        return Err(first);
    }

    examples.sort_by(|a, b| a.id.cmp(&b.id));
    for &class in taxonomy.classes() {
        if !examples.iter().any(|e| e.label == class) {
            log::warn!("class {class} has no images");
            outcome.empty_classes.push(class);
        }
    }
    outcome.examples = examples;
    Ok(outcome)
}
