//! Segment- and event-level evaluation for both tasks.

use std::fmt;
use std::ops::AddAssign;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::data_io::ParsingSegments;
use crate::error::{Error, Result};

/// Minimum temporal IoU for a predicted event to match a ground-truth event.
pub const EVENT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EventTrack {
    Audio,
    Visual,
    AudioVisual,
}

impl EventTrack {
    pub const ALL: [EventTrack; 3] = [EventTrack::Audio, EventTrack::Visual, EventTrack::AudioVisual];

    pub fn name(self) -> &'static str {
        match self {
            EventTrack::Audio => "audio",
            EventTrack::Visual => "visual",
            EventTrack::AudioVisual => "audio_visual",
        }
    }
}

/// Half-open segment interval `[start, end)` of one class on one track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventInterval {
    pub class: usize,
    pub start: usize,
    pub end: usize,
    pub track: EventTrack,
}

impl EventInterval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

pub fn temporal_iou(a: &EventInterval, b: &EventInterval) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Maximal runs of positive segments, per class, ordered by class then start.
pub fn extract_events(binary: ArrayView2<bool>, track: EventTrack) -> Vec<EventInterval> {
    let (n, c) = binary.dim();
    let mut out = Vec::new();
    for class in 0..c {
        let mut t = 0;
        while t < n {
            if binary[[t, class]] {
                let start = t;
                while t < n && binary[[t, class]] {
                    t += 1;
                }
                out.push(EventInterval {
                    class,
                    start,
                    end: t,
                    track,
                });
            } else {
                t += 1;
            }
        }
    }
    out
}

/// Inverse of [`extract_events`] for one track.
pub fn rasterize(events: &[EventInterval], num_segments: usize, num_classes: usize) -> Array2<bool> {
    let mut m = Array2::from_elem((num_segments, num_classes), false);
    for e in events {
        for t in e.start..e.end {
            m[[t, e.class]] = true;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// `2TP / (2TP + FP + FN)`; 1 when there is nothing to find and nothing found.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

pub fn segment_counts(pred: ArrayView2<bool>, gold: ArrayView2<bool>) -> Result<Counts> {
    if pred.dim() != gold.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gold.dim()
        )));
    }
    let mut c = Counts::default();
    for (&p, &g) in pred.iter().zip(gold.iter()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn segment_f1(pred: ArrayView2<bool>, gold: ArrayView2<bool>) -> Result<f64> {
    segment_counts(pred, gold).map(|c| c.f1())
}

/// One-to-one matching at IoU ≥ 0.5 within the same class and track.
///
/// Predictions are visited in ascending start order; each takes the unmatched
/// ground-truth event with the highest IoU (earliest start on ties).
pub fn event_counts(pred: &[EventInterval], gold: &[EventInterval]) -> Counts {
    let mut pred: Vec<&EventInterval> = pred.iter().collect();
    pred.sort_by_key(|e| (e.start, e.end, e.class, e.track));
    let mut gold: Vec<&EventInterval> = gold.iter().collect();
    gold.sort_by_key(|e| (e.start, e.end, e.class, e.track));
    let mut taken = vec![false; gold.len()];
    let mut tp = 0;
    for p in &pred {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gold.iter().enumerate() {
            if taken[j] || g.class != p.class || g.track != p.track {
                continue;
            }
            let iou = temporal_iou(p, g);
            if iou >= EVENT_IOU_THRESHOLD && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

pub fn event_f1(pred: &[EventInterval], gold: &[EventInterval]) -> f64 {
    event_counts(pred, gold).f1()
}

/// Mean of the audio, visual and audio-visual F-scores.
pub fn aggregate_type_av(per_type: [f64; 3]) -> f64 {
    per_type.iter().sum::<f64>() / 3.0
}

/// F-score of counts pooled over the three event types.
pub fn aggregate_event_av(per_type: &[Counts; 3]) -> f64 {
    let mut pooled = Counts::default();
    for c in per_type {
        pooled += *c;
    }
    pooled.f1()
}

/// Percentage of segments whose predicted class equals the ground truth.
pub fn ave_accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted vs {} ground-truth segments",
            pred.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Shape("no segments to score".into()));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / gold.len() as f64)
}

/// Running totals for segment-level accuracy over many videos.
#[derive(Clone, Copy, Debug, Default)]
pub struct AccuracyAccumulator {
    pub hits: usize,
    pub total: usize,
}

impl AccuracyAccumulator {
    pub fn add(&mut self, pred: &[usize], gold: &[usize]) -> Result<()> {
        ave_accuracy(pred, gold)?;
        self.hits += pred.iter().zip(gold).filter(|(p, g)| p == g).count();
        self.total += gold.len();
        Ok(())
    }

    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.hits as f64 / self.total as f64
        }
    }
}

/// The ten parsing scores: per type and both averages, at segment and event level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FScoreReport {
    /// Audio, visual, audio-visual.
    pub segment: [f64; 3],
    pub event: [f64; 3],
    pub segment_type_av: f64,
    pub segment_event_av: f64,
    pub event_type_av: f64,
    pub event_event_av: f64,
}

impl FScoreReport {
    /// `(name, value)` in a fixed order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(10);
        for (i, t) in EventTrack::ALL.iter().enumerate() {
            out.push((format!("{}.segment", t.name()), self.segment[i]));
            out.push((format!("{}.event", t.name()), self.event[i]));
        }
        out.push(("type_av.segment".into(), self.segment_type_av));
        out.push(("type_av.event".into(), self.event_type_av));
        out.push(("event_av.segment".into(), self.segment_event_av));
        out.push(("event_av.event".into(), self.event_event_av));
        out
    }
}

impl fmt::Display for FScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v:.6}")?;
        }
        Ok(())
    }
}

/// Accumulates parsing counts over a test set (micro-averaged).
#[derive(Clone, Debug, Default)]
pub struct ParsingEvaluator {
    segment: [Counts; 3],
    event: [Counts; 3],
    max_event_len: Option<usize>,
}

impl ParsingEvaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Score only events spanning at most `max_len` segments (on both sides)
    /// at event level.
    pub fn with_max_event_len(max_len: usize) -> Self {
        Self {
            max_event_len: Some(max_len),
            ..Self::default()
        }
    }

    pub fn add(&mut self, pred: &ParsingSegments, gold: &ParsingSegments) -> Result<()> {
        let pairs = [
            (pred.audio().clone(), gold.audio().clone()),
            (pred.visual().clone(), gold.visual().clone()),
            (pred.audio_visual(), gold.audio_visual()),
        ];
        for (i, ((p, g), track)) in pairs.iter().zip(EventTrack::ALL).enumerate() {
            self.segment[i] += segment_counts(p.view(), g.view())?;
            let keep = |e: &EventInterval| self.max_event_len.is_none_or(|m| e.len() <= m);
            let pe: Vec<_> = extract_events(p.view(), track).into_iter().filter(keep).collect();
            let ge: Vec<_> = extract_events(g.view(), track).into_iter().filter(keep).collect();
            self.event[i] += event_counts(&pe, &ge);
        }
        Ok(())
    }

    pub fn segment_counts(&self) -> &[Counts; 3] {
        &self.segment
    }

    pub fn event_counts(&self) -> &[Counts; 3] {
        &self.event
    }

    pub fn report(&self) -> FScoreReport {
        let segment = self.segment.map(|c| c.f1());
        let event = self.event.map(|c| c.f1());
        FScoreReport {
            segment,
            event,
            segment_type_av: aggregate_type_av(segment),
            segment_event_av: aggregate_event_av(&self.segment),
            event_type_av: aggregate_type_av(event),
            event_event_av: aggregate_event_av(&self.event),
        }
    }
}
