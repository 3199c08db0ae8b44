use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetError;

/// Required header columns of the metadata table.
pub const METADATA_COLUMNS: [&str; 6] = [
    "patient_id",
    "age",
    "gender",
    "smoking",
    "betel_quid",
    "alcohol",
];

/// Width of the encoded metadata vector: (age, gender, smoking, betel_quid, alcohol).
pub const METADATA_DIM: usize = 5;

/// Min-max age scaling fitted over one ingested table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeScaler {
    pub min: f64,
    pub max: f64,
}

impl AgeScaler {
    /// Maps an age in years into [0, 1]. Ages outside the fitted range are
    /// clamped; a degenerate range maps everything to 0.
    pub fn apply(&self, age: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((age - self.min) / span).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientMetadata {
    pub patient_id: String,
    /// Raw age in years as read from the table.
    pub age_years: f64,
    /// Min-max normalised age in [0, 1].
    pub age: f64,
    pub gender: u8,
    pub smoking: u8,
    pub betel_quid: u8,
    pub alcohol: u8,
}

impl PatientMetadata {
    /// The encoded 5-vector in fixed field order.
    pub fn to_vector(&self) -> [f64; METADATA_DIM] {
        [
            self.age,
            f64::from(self.gender),
            f64::from(self.smoking),
            f64::from(self.betel_quid),
            f64::from(self.alcohol),
        ]
    }

    /// The 5-vector with age rescaled by `scaler` instead of the table's own
    /// statistics.
    pub fn to_vector_with(&self, scaler: &AgeScaler) -> [f64; METADATA_DIM] {
        let mut v = self.to_vector();
        v[0] = scaler.apply(self.age_years);
        v
    }
}

/// Cleaned metadata plus the age statistics it was normalised with.
#[derive(Clone, Debug, PartialEq)]
pub struct MetadataTable {
    records: Vec<PatientMetadata>,
    index: BTreeMap<String, usize>,
    pub age_scaler: AgeScaler,
}

impl MetadataTable {
    pub fn records(&self) -> &[PatientMetadata] {
        &self.records
    }

    pub fn get(&self, patient_id: &str) -> Option<&PatientMetadata> {
        self.index.get(patient_id).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Male → 1, Female → 0; trimmed, case-insensitive.
pub fn encode_gender(value: &str) -> Option<u8> {
    match value.trim().to_ascii_lowercase().as_str() {
        "male" => Some(1),
        "female" => Some(0),
        _ => None,
    }
}

/// Yes → 1, No → 0; trimmed, case-insensitive.
pub fn encode_binary(value: &str) -> Option<u8> {
    match value.trim().to_ascii_lowercase().as_str() {
        "yes" => Some(1),
        "no" => Some(0),
        _ => None,
    }
}

pub fn load_metadata(path: &Path) -> Result<MetadataTable, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    parse_metadata(&bytes)
}

/// Parses and encodes a metadata CSV held in memory.
pub fn parse_metadata(data: &[u8]) -> Result<MetadataTable, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(data);

    let headers = reader.headers()?.clone();
    let mut columns = [0usize; 6];
    for (slot, name) in columns.iter_mut().zip(METADATA_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
    }

    let mut raw = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |col: usize, name: &str| -> Result<&str, DatasetError> {
            match record.get(columns[col]).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DatasetError::Row {
                    row,
                    message: format!("missing value for `{name}`"),
                }),
            }
        };
        let patient_id = field(0, "patient_id")?.to_string();
        let age_text = field(1, "age")?;
        let age_years: f64 = age_text.parse().map_err(|_| DatasetError::Row {
            row,
            message: format!("non-numeric age `{age_text}`"),
        })?;
        if !age_years.is_finite() || age_years < 0.0 {
            return Err(DatasetError::Row {
                row,
                message: format!("age `{age_text}` is not a non-negative number"),
            });
        }
        let categorical = |col: usize, name: &str, encode: fn(&str) -> Option<u8>| {
            let value = field(col, name)?;
            encode(value).ok_or_else(|| DatasetError::Row {
                row,
                message: format!("unmappable value `{value}` for `{name}`"),
            })
        };
        let gender = categorical(2, "gender", encode_gender)?;
        let smoking = categorical(3, "smoking", encode_binary)?;
        let betel_quid = categorical(4, "betel_quid", encode_binary)?;
        let alcohol = categorical(5, "alcohol", encode_binary)?;
        raw.push(PatientMetadata {
            patient_id,
            age_years,
            age: 0.0,
            gender,
            smoking,
            betel_quid,
            alcohol,
        });
    }

    let mut index = BTreeMap::new();
    let mut duplicates = BTreeSet::new();
    for (i, rec) in raw.iter().enumerate() {
        if index.insert(rec.patient_id.clone(), i).is_some() {
            duplicates.insert(rec.patient_id.clone());
        }
    }
    if !duplicates.is_empty() {
        return Err(DatasetError::DuplicatePatients(duplicates.into_iter().collect()));
    }

    let (min, max) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.age_years), hi.max(r.age_years))
    });
    let age_scaler = if raw.is_empty() {
        AgeScaler { min: 0.0, max: 0.0 }
    } else {
        AgeScaler { min, max }
    };
    for rec in &mut raw {
        rec.age = age_scaler.apply(rec.age_years);
    }

    Ok(MetadataTable {
        records: raw,
        index,
        age_scaler,
    })
}
