//! Seeded synthetic datasets with planted events of controlled lengths.
//!
//! Each class owns a fixed random direction per modality, with unit RMS per
//! feature. An event of class `c` adds `amplitude` times that direction to the
//! features of its modality (both for audio-visual events) over exactly its
//! labelled interval; everything else is Gaussian noise.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    FeatureSequence, LabelKind, LabelSet, LocalizationLabels, Modality, ParsingLabels,
    ParsingSegments, Task, Video,
};
use crate::error::{Error, Result};

/// Event lengths drawn uniformly from `[min_len, max_len]` with bucket probability ∝ `weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct LengthBucket {
    pub min_len: usize,
    pub max_len: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub task: Task,
    pub seed: u64,
    pub num_videos: usize,
    pub num_segments: usize,
    pub feature_dim: usize,
    /// Event classes; localization adds one background class on top.
    pub num_classes: usize,
    pub lengths: Vec<LengthBucket>,
    pub noise_std: f64,
    pub amplitude: f64,
    pub min_events: usize,
    pub max_events: usize,
    /// Relative frequency of audio-only, visual-only and audio-visual events.
    pub modality_weights: [f64; 3],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            task: Task::Parsing,
            seed: 0,
            num_videos: 100,
            num_segments: 10,
            feature_dim: 16,
            num_classes: 4,
            lengths: vec![
                LengthBucket { min_len: 1, max_len: 3, weight: 1.0 },
                LengthBucket { min_len: 4, max_len: 7, weight: 1.0 },
                LengthBucket { min_len: 8, max_len: 10, weight: 1.0 },
            ],
            noise_std: 1.0,
            amplitude: 1.0,
            min_events: 1,
            max_events: 3,
            modality_weights: [1.0, 1.0, 1.0],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSynthetic(m));
        if self.num_segments == 0 || self.feature_dim == 0 || self.num_classes == 0 {
            return bad("segments, feature dim and classes must be positive".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be a finite non-negative", self.noise_std));
        }
        LengthSampler::new(&self.lengths)?;
        if let Some(b) = self.lengths.iter().find(|b| b.max_len > self.num_segments) {
            return bad(format!(
                "length bucket [{}, {}] exceeds {} segments",
                b.min_len, b.max_len, self.num_segments
            ));
        }
        if self.min_events > self.max_events {
            return bad("min_events exceeds max_events".into());
        }
        match self.task {
            Task::Parsing => {
                // One event per class per video.
                if self.max_events > self.num_classes {
                    return bad(format!(
                        "{} events per video cannot be packed with {} classes",
                        self.max_events, self.num_classes
                    ));
                }
                if self.modality_weights.iter().any(|w| *w < 0.0 || !w.is_finite())
                    || self.modality_weights.iter().sum::<f64>() <= 0.0
                {
                    return bad("modality weights must be non-negative, not all zero".into());
                }
            }
            Task::Localization => {
                if self.min_events != 1 || self.max_events != 1 {
                    return bad("localization videos hold exactly one event".into());
                }
            }
        }
        Ok(())
    }
}

/// The generator's event-length distribution.
#[derive(Clone, Debug)]
pub struct LengthSampler {
    buckets: Vec<LengthBucket>,
    pick: WeightedIndex<f64>,
}

impl LengthSampler {
    pub fn new(buckets: &[LengthBucket]) -> Result<Self> {
        if buckets.is_empty() {
            return Err(Error::InvalidSynthetic("no length buckets".into()));
        }
        for b in buckets {
            if b.min_len == 0 || b.min_len > b.max_len {
                return Err(Error::InvalidSynthetic(format!(
                    "length bucket [{}, {}] is empty or starts at zero",
                    b.min_len, b.max_len
                )));
            }
            if !(b.weight >= 0.0 && b.weight.is_finite()) {
                return Err(Error::InvalidSynthetic(format!("bad weight {}", b.weight)));
            }
        }
        let pick = WeightedIndex::new(buckets.iter().map(|b| b.weight))
            .map_err(|e| Error::InvalidSynthetic(format!("length weights: {e}")))?;
        Ok(Self {
            buckets: buckets.to_vec(),
            pick,
        })
    }

    pub fn buckets(&self) -> &[LengthBucket] {
        &self.buckets
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let b = &self.buckets[self.pick.sample(rng)];
        rng.random_range(b.min_len..=b.max_len)
    }
}

fn class_directions(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Array2<f32> {
    let mut dirs: Array2<f64> = Array2::from_shape_simple_fn((classes, dim), || StandardNormal.sample(rng));
    for mut row in dirs.rows_mut() {
        let rms = (row.iter().map(|v| v * v).sum::<f64>() / dim as f64).sqrt();
        row.mapv_inplace(|v| v / rms);
    }
    dirs.mapv(|v| v as f32)
}

fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f32> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        (z * std) as f32
    })
}

fn plant(features: &mut Array2<f32>, dir: ndarray::ArrayView1<f32>, start: usize, len: usize, amp: f32) {
    for t in start..start + len {
        let mut row = features.row_mut(t);
        row.scaled_add(amp, &dir);
    }
}

/// Generate the dataset described by `spec`; identical specs give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Video>> {
    spec.validate()?;
    let lengths = LengthSampler::new(&spec.lengths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d, c) = (spec.num_segments, spec.feature_dim, spec.num_classes);
    let audio_dirs = class_directions(&mut rng, c, d);
    let visual_dirs = class_directions(&mut rng, c, d);
    let modality_pick = WeightedIndex::new(spec.modality_weights)
        .map_err(|e| Error::InvalidSynthetic(format!("modality weights: {e}")))?;
    let amp = spec.amplitude as f32;

    let mut videos = Vec::with_capacity(spec.num_videos);
    for i in 0..spec.num_videos {
        let id = format!("syn_{i:05}");
        let mut audio = noise(&mut rng, n, d, spec.noise_std);
        let mut visual = noise(&mut rng, n, d, spec.noise_std);
        let kind = match spec.task {
            Task::Parsing => {
                let k = rng.random_range(spec.min_events..=spec.max_events);
                let classes = index::sample(&mut rng, c, k).into_vec();
                let mut seg_a = Array2::from_elem((n, c), false);
                let mut seg_v = Array2::from_elem((n, c), false);
                for class in classes {
                    let which = modality_pick.sample(&mut rng);
                    let len = lengths.sample(&mut rng);
                    let start = rng.random_range(0..=n - len);
                    let (in_audio, in_visual) = match which {
                        0 => (true, false),
                        1 => (false, true),
                        _ => (true, true),
                    };
                    if in_audio {
                        plant(&mut audio, audio_dirs.row(class), start, len, amp);
                        seg_a.slice_mut(ndarray::s![start..start + len, class]).fill(true);
                    }
                    if in_visual {
                        plant(&mut visual, visual_dirs.row(class), start, len, amp);
                        seg_v.slice_mut(ndarray::s![start..start + len, class]).fill(true);
                    }
                }
                LabelKind::Parsing(ParsingLabels::from_segments(ParsingSegments::new(seg_a, seg_v)?))
            }
            Task::Localization => {
                let class = rng.random_range(0..c);
                let len = lengths.sample(&mut rng);
                let start = rng.random_range(0..=n - len);
                plant(&mut audio, audio_dirs.row(class), start, len, amp);
                plant(&mut visual, visual_dirs.row(class), start, len, amp);
                let segs = (0..n)
                    .map(|t| if (start..start + len).contains(&t) { class } else { c })
                    .collect();
                LabelKind::Localization(LocalizationLabels::new(c + 1, class, Some(segs))?)
            }
        };
        videos.push(Video {
            audio: FeatureSequence::new(Modality::Audio, id.clone(), audio)?,
            visual: FeatureSequence::new(Modality::Visual, id.clone(), visual)?,
            labels: LabelSet { video_id: id.clone(), kind },
            id,
        });
    }
    Ok(videos)
}
