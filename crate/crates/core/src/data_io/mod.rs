//! Feature and label files, dataset directories, and the synthetic generator.

mod dataset;
mod features;
mod labels;
mod synthetic;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

pub use dataset::{Dataset, Video};
pub use features::{
    load_feature_file, read_matrix_block, sidecar_path, write_feature_file, write_matrix_block,
    FeatureSequence, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use labels::{
    decode_labels, encode_labels, read_label_file, write_label_file, LabelKind, LabelSet,
    LocalizationLabels, ParsingLabels, ParsingSegments,
};
pub use synthetic::{generate_synthetic, LengthBucket, LengthSampler, SyntheticSpec};

use crate::error::{Error, Result};

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Audio,
    Visual,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(Modality::Audio),
            "visual" => Ok(Modality::Visual),
            other => Err(Error::config("modality", format!("unknown modality `{other}`"))),
        }
    }
}

/// Single-event localization (AVE) or multi-event parsing (LLP).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Localization,
    Parsing,
}

impl Task {
    /// Short name used on the command line.
    pub fn flag(self) -> &'static str {
        match self {
            Task::Localization => "ave",
            Task::Parsing => "avvp",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Localization => "localization",
            Task::Parsing => "parsing",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "localization" | "ave" => Ok(Task::Localization),
            "parsing" | "avvp" => Ok(Task::Parsing),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }
}
