//! Label structures for both tasks and their text encoding.
//!
//! A label file is a sequence of records, one per video:
//!
//! ```text
//! [video_0001]
//! task=parsing
//! num_classes=4
//! audio=0,2
//! visual=1
//! num_segments=3
//! audio_segments=1000,1010,0010
//! visual_segments=0100,0100,0000
//! audio_visual_segments=0000,0000,0000
//! ```
//!
//! Segment matrices are written one `0`/`1` string per segment, one character
//! per class. Localization records carry `category` and optional
//! `segment_classes` instead; the background class is `num_classes - 1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Task;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalizationLabels {
    num_classes: usize,
    category: usize,
    segments: Option<Vec<usize>>,
}

impl LocalizationLabels {
    /// `num_classes` counts the background class, which is the last index.
    pub fn new(num_classes: usize, category: usize, segments: Option<Vec<usize>>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidLabel(
                "localization needs at least one event class plus background".into(),
            ));
        }
        if category >= num_classes {
            return Err(Error::InvalidLabel(format!(
                "category {category} out of range for {num_classes} classes"
            )));
        }
        let background = num_classes - 1;
        if let Some(segs) = &segments {
            if segs.is_empty() {
                return Err(Error::InvalidLabel("zero segments".into()));
            }
            if let Some((t, &c)) = segs
                .iter()
                .enumerate()
                .find(|(_, &c)| c != background && c != category)
            {
                return Err(Error::InvalidLabel(format!(
                    "segment {t} has class {c}, video category is {category}"
                )));
            }
            let has_event = segs.contains(&category);
            if category != background && !has_event {
                return Err(Error::InvalidLabel(format!(
                    "category {category} never occurs in the segments"
                )));
            }
        }
        Ok(Self {
            num_classes,
            category,
            segments,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn background(&self) -> usize {
        self.num_classes - 1
    }

    pub fn category(&self) -> usize {
        self.category
    }

    pub fn segments(&self) -> Option<&[usize]> {
        self.segments.as_deref()
    }

    /// Per-segment "contains the event" flags.
    pub fn relevance(&self) -> Option<Vec<bool>> {
        let bg = self.background();
        self.segments
            .as_ref()
            .map(|s| s.iter().map(|&c| c != bg).collect())
    }
}

/// Segment-level parsing labels. The audio-visual matrix is always derived.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsingSegments {
    audio: Array2<bool>,
    visual: Array2<bool>,
}

impl ParsingSegments {
    pub fn new(audio: Array2<bool>, visual: Array2<bool>) -> Result<Self> {
        if audio.dim() != visual.dim() {
            return Err(Error::InvalidLabel(format!(
                "audio segments {:?} vs visual {:?}",
                audio.dim(),
                visual.dim()
            )));
        }
        if audio.nrows() == 0 || audio.ncols() == 0 {
            return Err(Error::InvalidLabel("empty segment matrix".into()));
        }
        Ok(Self { audio, visual })
    }

    pub fn audio(&self) -> &Array2<bool> {
        &self.audio
    }

    pub fn visual(&self) -> &Array2<bool> {
        &self.visual
    }

    pub fn audio_visual(&self) -> Array2<bool> {
        &self.audio & &self.visual
    }

    pub fn num_segments(&self) -> usize {
        self.audio.nrows()
    }
}

fn any_over_segments(m: &Array2<bool>) -> Vec<bool> {
    m.columns().into_iter().map(|c| c.iter().any(|&b| b)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsingLabels {
    num_classes: usize,
    audio: Vec<bool>,
    visual: Vec<bool>,
    segments: Option<ParsingSegments>,
}

impl ParsingLabels {
    /// Video-level labels only (weak supervision).
    pub fn weak(audio: Vec<bool>, visual: Vec<bool>) -> Result<Self> {
        if audio.len() != visual.len() || audio.is_empty() {
            return Err(Error::InvalidLabel(format!(
                "video-level label widths {} and {}",
                audio.len(),
                visual.len()
            )));
        }
        Ok(Self {
            num_classes: audio.len(),
            audio,
            visual,
            segments: None,
        })
    }

    /// Full labels; video-level labels are the OR over segments.
    pub fn from_segments(segments: ParsingSegments) -> Self {
        Self {
            num_classes: segments.audio.ncols(),
            audio: any_over_segments(&segments.audio),
            visual: any_over_segments(&segments.visual),
            segments: Some(segments),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn audio(&self) -> &[bool] {
        &self.audio
    }

    pub fn visual(&self) -> &[bool] {
        &self.visual
    }

    /// Classes present in the video in any modality: the weak training target.
    pub fn union(&self) -> Vec<bool> {
        self.audio
            .iter()
            .zip(&self.visual)
            .map(|(&a, &v)| a || v)
            .collect()
    }

    pub fn segments(&self) -> Option<&ParsingSegments> {
        self.segments.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Localization(LocalizationLabels),
    Parsing(ParsingLabels),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    pub video_id: String,
    pub kind: LabelKind,
}

impl LabelSet {
    pub fn task(&self) -> Task {
        match self.kind {
            LabelKind::Localization(_) => Task::Localization,
            LabelKind::Parsing(_) => Task::Parsing,
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.kind {
            LabelKind::Localization(l) => l.num_classes(),
            LabelKind::Parsing(p) => p.num_classes(),
        }
    }

    pub fn num_segments(&self) -> Option<usize> {
        match &self.kind {
            LabelKind::Localization(l) => l.segments().map(<[usize]>::len),
            LabelKind::Parsing(p) => p.segments().map(ParsingSegments::num_segments),
        }
    }

    /// The same labels with segment-level information removed.
    pub fn weak(&self) -> LabelSet {
        let kind = match &self.kind {
            LabelKind::Localization(l) => LabelKind::Localization(LocalizationLabels {
                segments: None,
                ..l.clone()
            }),
            LabelKind::Parsing(p) => LabelKind::Parsing(ParsingLabels {
                segments: None,
                ..p.clone()
            }),
        };
        LabelSet {
            video_id: self.video_id.clone(),
            kind,
        }
    }

    pub fn as_parsing(&self) -> Option<&ParsingLabels> {
        match &self.kind {
            LabelKind::Parsing(p) => Some(p),
            LabelKind::Localization(_) => None,
        }
    }

    pub fn as_localization(&self) -> Option<&LocalizationLabels> {
        match &self.kind {
            LabelKind::Localization(l) => Some(l),
            LabelKind::Parsing(_) => None,
        }
    }
}

fn class_list(flags: &[bool]) -> String {
    flags
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn bit_rows(m: &Array2<bool>) -> String {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn encode_labels(labels: &[LabelSet]) -> String {
    let mut out = String::from("# mmpyramid labels v1\n");
    for l in labels {
        let _ = writeln!(out, "\n[{}]", l.video_id);
        let _ = writeln!(out, "task={}", l.task());
        let _ = writeln!(out, "num_classes={}", l.num_classes());
        match &l.kind {
            LabelKind::Localization(loc) => {
                let _ = writeln!(out, "category={}", loc.category);
                if let Some(segs) = &loc.segments {
                    let s: Vec<String> = segs.iter().map(usize::to_string).collect();
                    let _ = writeln!(out, "segment_classes={}", s.join(","));
                }
            }
            LabelKind::Parsing(p) => {
                let _ = writeln!(out, "audio={}", class_list(&p.audio));
                let _ = writeln!(out, "visual={}", class_list(&p.visual));
                if let Some(s) = &p.segments {
                    let _ = writeln!(out, "num_segments={}", s.num_segments());
                    let _ = writeln!(out, "audio_segments={}", bit_rows(&s.audio));
                    let _ = writeln!(out, "visual_segments={}", bit_rows(&s.visual));
                    let _ = writeln!(out, "audio_visual_segments={}", bit_rows(&s.audio_visual()));
                }
            }
        }
    }
    out
}

struct Record {
    video_id: String,
    line: usize,
    fields: BTreeMap<String, (usize, String)>,
}

impl Record {
    fn get(&self, key: &str) -> Result<&(usize, String)> {
        self.fields.get(key).ok_or_else(|| Error::LabelParse {
            line: self.line,
            reason: format!("record `{}` lacks `{key}`", self.video_id),
        })
    }

    fn usize_field(&self, key: &str) -> Result<usize> {
        let (line, v) = self.get(key)?;
        v.parse().map_err(|_| Error::LabelParse {
            line: *line,
            reason: format!("`{key}` is not an integer: `{v}`"),
        })
    }
}

fn parse_class_list(v: &str, num_classes: usize, line: usize) -> Result<Vec<bool>> {
    let mut flags = vec![false; num_classes];
    for tok in v.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let c: usize = tok.parse().map_err(|_| Error::LabelParse {
            line,
            reason: format!("bad class index `{tok}`"),
        })?;
        if c >= num_classes {
            return Err(Error::LabelParse {
                line,
                reason: format!("class {c} out of range"),
            });
        }
        flags[c] = true;
    }
    Ok(flags)
}

fn parse_bit_rows(v: &str, rows: usize, cols: usize, line: usize) -> Result<Array2<bool>> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != rows {
        return Err(Error::LabelParse {
            line,
            reason: format!("expected {rows} segments, found {}", parts.len()),
        });
    }
    let mut m = Array2::from_elem((rows, cols), false);
    for (t, p) in parts.iter().enumerate() {
        if p.len() != cols {
            return Err(Error::LabelParse {
                line,
                reason: format!("segment {t} has {} flags, expected {cols}", p.len()),
            });
        }
        for (c, ch) in p.chars().enumerate() {
            m[[t, c]] = match ch {
                '0' => false,
                '1' => true,
                other => {
                    return Err(Error::LabelParse {
                        line,
                        reason: format!("unexpected flag `{other}`"),
                    })
                }
            };
        }
    }
    Ok(m)
}

fn decode_record(r: &Record) -> Result<LabelSet> {
    let (task_line, task) = r.get("task")?;
    let task: Task = task.parse().map_err(|_| Error::LabelParse {
        line: *task_line,
        reason: format!("unknown task `{task}`"),
    })?;
    let num_classes = r.usize_field("num_classes")?;
    let kind = match task {
        Task::Localization => {
            let category = r.usize_field("category")?;
            let segments = match r.fields.get("segment_classes") {
                Some((line, v)) => Some(
                    v.split(',')
                        .map(|t| {
                            t.trim().parse::<usize>().map_err(|_| Error::LabelParse {
                                line: *line,
                                reason: format!("bad segment class `{t}`"),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => None,
            };
            LabelKind::Localization(LocalizationLabels::new(num_classes, category, segments)?)
        }
        Task::Parsing => {
            let (la, a) = r.get("audio")?;
            let (lv, v) = r.get("visual")?;
            let audio = parse_class_list(a, num_classes, *la)?;
            let visual = parse_class_list(v, num_classes, *lv)?;
            let labels = if r.fields.contains_key("num_segments") {
                let n = r.usize_field("num_segments")?;
                let (l1, s1) = r.get("audio_segments")?;
                let (l2, s2) = r.get("visual_segments")?;
                let (l3, s3) = r.get("audio_visual_segments")?;
                let sa = parse_bit_rows(s1, n, num_classes, *l1)?;
                let sv = parse_bit_rows(s2, n, num_classes, *l2)?;
                let sav = parse_bit_rows(s3, n, num_classes, *l3)?;
                let segs = ParsingSegments::new(sa, sv)?;
                let derived = segs.audio_visual();
                if let Some((((t, m), _), _)) = derived
                    .indexed_iter()
                    .zip(sav.iter())
                    .find(|((_, d), s)| *d != *s)
                {
                    return Err(Error::InvalidLabel(format!(
                        "video `{}`: audio_visual differs from audio AND visual at segment {t}, class {m}",
                        r.video_id
                    )));
                }
                let labels = ParsingLabels::from_segments(segs);
                if labels.audio != audio || labels.visual != visual {
                    return Err(Error::InvalidLabel(format!(
                        "video `{}`: video-level labels disagree with segment labels",
                        r.video_id
                    )));
                }
                labels
            } else {
                ParsingLabels::weak(audio, visual)?
            };
            LabelKind::Parsing(labels)
        }
    };
    Ok(LabelSet {
        video_id: r.video_id.clone(),
        kind,
    })
}

pub fn decode_labels(text: &str) -> Result<Vec<LabelSet>> {
    let mut records: Vec<Record> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        if let Some(id) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            records.push(Record {
                video_id: id.to_string(),
                line,
                fields: BTreeMap::new(),
            });
            continue;
        }
        let Some((k, v)) = l.split_once('=') else {
            return Err(Error::LabelParse {
                line,
                reason: format!("expected key=value, found `{l}`"),
            });
        };
        let Some(rec) = records.last_mut() else {
            return Err(Error::LabelParse {
                line,
                reason: "field before any [video] header".into(),
            });
        };
        rec.fields.insert(k.trim().to_string(), (line, v.trim().to_string()));
    }
    records.iter().map(decode_record).collect()
}

pub fn write_label_file(path: &Path, labels: &[LabelSet]) -> Result<()> {
    super::write_atomic(path, encode_labels(labels).as_bytes())
}

pub fn read_label_file(path: &Path) -> Result<Vec<LabelSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&text)
}
