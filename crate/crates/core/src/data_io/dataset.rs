use std::fs;
use std::path::{Path, PathBuf};

use super::{load_feature_file, read_label_file, write_feature_file, write_label_file};
use super::{FeatureSequence, LabelSet, Task};
use crate::error::{Error, Result};

pub const LABEL_FILE: &str = "labels.lbl";
pub const FEATURE_DIR: &str = "features";

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub audio: FeatureSequence,
    pub visual: FeatureSequence,
    pub labels: LabelSet,
}

impl Video {
    pub fn num_segments(&self) -> usize {
        self.audio.num_segments()
    }
}

/// A directory holding `labels.lbl` and `features/<id>.{audio,visual}.mmpf`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub videos: Vec<Video>,
}

fn feature_path(dir: &Path, id: &str, modality: &str) -> PathBuf {
    dir.join(FEATURE_DIR).join(format!("{id}.{modality}.mmpf"))
}

impl Dataset {
    pub fn new(videos: Vec<Video>) -> Self {
        Self { videos }
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn task(&self) -> Option<Task> {
        self.videos.first().map(|v| v.labels.task())
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.videos.first().map(|v| v.labels.num_classes())
    }

    pub fn feature_dims(&self) -> Option<(usize, usize)> {
        self.videos.first().map(|v| (v.audio.dim(), v.visual.dim()))
    }

    pub fn get(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn labels(&self) -> Vec<LabelSet> {
        self.videos.iter().map(|v| v.labels.clone()).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let feats = dir.join(FEATURE_DIR);
        fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        for v in &self.videos {
            write_feature_file(&feature_path(dir, &v.id, "audio"), &v.audio)?;
            write_feature_file(&feature_path(dir, &v.id, "visual"), &v.visual)?;
        }
        write_label_file(&dir.join(LABEL_FILE), &self.labels())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingPath(dir.to_owned()));
        }
        let feats = dir.join(FEATURE_DIR);
        if !feats.is_dir() {
            return Err(Error::MissingPath(feats));
        }
        let labels = read_label_file(&dir.join(LABEL_FILE))?;
        let mut videos = Vec::with_capacity(labels.len());
        for l in labels {
            let audio = load_feature_file(&feature_path(dir, &l.video_id, "audio"))?;
            let visual = load_feature_file(&feature_path(dir, &l.video_id, "visual"))?;
            if audio.num_segments() != visual.num_segments() {
                return Err(Error::Shape(format!(
                    "video `{}`: {} audio vs {} visual segments",
                    l.video_id,
                    audio.num_segments(),
                    visual.num_segments()
                )));
            }
            if let Some(n) = l.num_segments() {
                if n != audio.num_segments() {
                    return Err(Error::Shape(format!(
                        "video `{}`: labels cover {n} segments, features {}",
                        l.video_id,
                        audio.num_segments()
                    )));
                }
            }
            videos.push(Video {
                id: l.video_id.clone(),
                audio,
                visual,
                labels: l,
            });
        }
        if let Some(first) = videos.first() {
            let task = first.labels.task();
            if videos.iter().any(|v| v.labels.task() != task) {
                return Err(Error::InvalidLabel("dataset mixes tasks".into()));
            }
        }
        Ok(Self { videos })
    }

    /// Consecutive split: the first `n` videos and the rest.
    pub fn split_at(mut self, n: usize) -> (Dataset, Dataset) {
        let rest = self.videos.split_off(n.min(self.videos.len()));
        (self, Dataset { videos: rest })
    }
}
