//! Dataset ingestion: descriptors, verified downloads, and preparation of
//! raw archives into prepared task files.

mod descriptor;
mod fetch;
mod prepare;

pub use descriptor::{
    load_descriptors, parse_descriptors, Checksum, DatasetDescriptor, DigestAlgo, ExtractionRecipe, SourceFile,
    SplitRecipe,
};
pub use fetch::{archive_dir, fetch};
pub use prepare::{dedup, extract, prepare, read_members, split, tasks_dir, Origin, PrepareReport};
