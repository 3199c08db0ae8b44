//! Dataset ingestion, class taxonomies and stratified splitting.

mod error;
mod ingest;
mod metadata;
mod pixels;
mod split;
mod taxonomy;

pub use error::DatasetError;
pub use ingest::{
    example_id_for, ingest_images, parse_example_id, patient_id_from_file_name, ExampleId,
    IngestOutcome, LabeledExample, Origin,
};
pub use metadata::{
    encode_binary, encode_gender, load_metadata, parse_metadata, AgeScaler, MetadataTable,
    PatientMetadata, METADATA_COLUMNS, METADATA_DIM,
};
pub use pixels::{decode_image, load_image, resize_image, PixelGrid, MAX_DECODE_SIDE, TARGET_SIZE};
pub use split::{
    apportion, stratified_split, Grouping, SplitManifest, SplitRatios, Subset,
};
pub use taxonomy::{ClassTaxonomy, LesionClass, TaxonomyKind};
