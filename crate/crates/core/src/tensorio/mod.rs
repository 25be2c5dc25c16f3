//! Disk formats: PTNS tensors, the bank manifest and label files. No other
//! module reads or writes files.

mod labels;
mod manifest;
mod ptns;

pub use labels::{labels_to_json, parse_labels, read_labels, write_labels, LabelFileError};
pub use manifest::{
    load_manifest, parse_manifest_file, validate_manifest, Artifact, BankManifest, ManifestError,
    ModelMeta, TargetMeta, TransferOutcome, Violation,
};
pub use ptns::{
    decode, encode, read_matrix, read_tensor, write_matrix, write_tensor, DType, TensorData,
    TensorError, TensorFile, MAGIC, VERSION,
};
