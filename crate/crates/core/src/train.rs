//! Optimization loop, learning-rate schedule and evaluation drivers.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data_io::{Dataset, LabelKind, LabelSet, Task};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::heads::{ave_segment_labels, Supervision};
use crate::metrics::{AccuracyAccumulator, FScoreReport, ParsingEvaluator};
use crate::model::{MmPyramid, Prediction};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub mode: Supervision,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs between successive decays.
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Probability threshold used for validation metrics.
    pub threshold: f64,
}

impl TrainConfig {
    /// Localization: 2e-5, divided by 10 every 50 epochs.
    /// Parsing: 1e-4, divided by 5 every 10 epochs.
    pub fn for_task(task: Task) -> Self {
        let (lr, factor, every, mode) = match task {
            Task::Localization => (2e-5, 10.0, 50, Supervision::Full),
            Task::Parsing => (1e-4, 5.0, 10, Supervision::Weak),
        };
        Self {
            task,
            mode,
            lr,
            lr_decay_factor: factor,
            lr_decay_every: every,
            epochs: 100,
            batch_size: 16,
            label_smoothing: 0.1,
            seed: 0,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if !(self.lr_decay_factor >= 1.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::config("train.lr_decay_factor", "must be at least 1"));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::config("train.lr_decay_every", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::config("train.label_smoothing", "must lie in [0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("metrics.threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Step decay for 1-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let k = epoch.saturating_sub(1) / self.lr_decay_every;
        if k == 0 {
            self.lr
        } else {
            snap(self.lr / self.lr_decay_factor.powi(k as i32))
        }
    }
}

/// Round to 15 significant digits, so `2e-5 / 10` is exactly `2e-6`.
fn snap(x: f64) -> f64 {
    format!("{x:.14e}").parse().expect("formatted float parses")
}

/// Adam with the usual moment coefficients and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(shapes: impl Iterator<Item = (usize, usize)>) -> Self {
        let m: Vec<Array2<f64>> = shapes.map(Array2::zeros).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Array2<f64>>, grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Evaluation {
    Parsing(FScoreReport),
    Localization { accuracy: f64 },
}

impl Evaluation {
    /// The single number tracked during training.
    pub fn headline(&self) -> f64 {
        match self {
            Evaluation::Parsing(r) => r.segment_type_av,
            Evaluation::Localization { accuracy } => *accuracy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<Evaluation>,
}

impl EpochLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

/// Mean loss and parameter gradients over `batch` (indices into `data`).
fn batch_gradients(
    model: &MmPyramid,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut total: Vec<Array2<f64>> = model.store.iter().map(|(_, v)| Array2::zeros(v.dim())).collect();
    let mut loss_sum = 0.0;
    for &i in batch {
        let video = &data.videos[i];
        let labels = match cfg.mode {
            Supervision::Weak => video.labels.weak(),
            Supervision::Full => video.labels.clone(),
        };
        let mut g = Graph::training(&model.store, ChaCha8Rng::seed_from_u64(rng.random()));
        let pass = model.forward(&mut g, video)?;
        let loss = model.loss(&mut g, &pass, &labels, cfg.mode, cfg.label_smoothing)?;
        loss_sum += g.value(loss)[[0, 0]];
        for (t, d) in total.iter_mut().zip(g.param_grads(loss)) {
            *t += &d;
        }
    }
    let k = batch.len() as f64;
    for t in &mut total {
        t.mapv_inplace(|x| x / k);
    }
    Ok((loss_sum / k, total))
}

/// Train in place. `on_epoch` sees each epoch record as soon as it exists.
pub fn train(
    model: &mut MmPyramid,
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("data.train_dir", "training set is empty"));
    }
    if cfg.task != model.config.task {
        return Err(Error::config("task", "training config and model disagree"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store.iter().map(|(_, v)| v.dim()));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradients(model, data, batch, cfg, &mut rng)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(model.store.values_mut(), &grads, lr);
        }
        let validation = match validation {
            Some(v) => Some(evaluate(model, v, cfg.threshold, None)?),
            None => None,
        };
        let log = EpochLog {
            epoch,
            lr,
            loss: epoch_loss / data.len() as f64,
            validation,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

/// Score a labelled dataset. `max_event_len` restricts event-level parsing
/// scores to short events.
pub fn evaluate(
    model: &MmPyramid,
    data: &Dataset,
    threshold: f64,
    max_event_len: Option<usize>,
) -> Result<Evaluation> {
    let mut preds = Vec::with_capacity(data.len());
    for v in &data.videos {
        preds.push(model.predict(v)?.to_labels(&v.id, threshold)?);
    }
    score_labels(&preds, &data.labels(), max_event_len)
}

/// Compare prediction label sets with ground truth, matched by video id.
pub fn score_labels(
    predictions: &[LabelSet],
    gold: &[LabelSet],
    max_event_len: Option<usize>,
) -> Result<Evaluation> {
    let task = gold
        .first()
        .map(|l| l.task())
        .ok_or_else(|| Error::InvalidLabel("no ground-truth videos".into()))?;
    let mut parsing = match max_event_len {
        Some(m) => ParsingEvaluator::with_max_event_len(m),
        None => ParsingEvaluator::new(),
    };
    let mut accuracy = AccuracyAccumulator::default();
    if let Some(p) = predictions
        .iter()
        .find(|p| !gold.iter().any(|g| g.video_id == p.video_id))
    {
        return Err(Error::UnknownVideo(p.video_id.clone()));
    }
    for g in gold {
        let p = predictions
            .iter()
            .find(|p| p.video_id == g.video_id)
            .ok_or_else(|| Error::InvalidLabel(format!("no prediction for `{}`", g.video_id)))?;
        match (&p.kind, &g.kind) {
            (LabelKind::Parsing(p), LabelKind::Parsing(gl)) => {
                let missing = || Error::InvalidLabel(format!("`{}` lacks segment labels", g.video_id));
                let ps = p.segments().ok_or_else(missing)?;
                let gs = gl.segments().ok_or_else(missing)?;
                parsing.add(ps, gs)?;
            }
            (LabelKind::Localization(p), LabelKind::Localization(gl)) => {
                let missing = || Error::InvalidLabel(format!("`{}` lacks segment labels", g.video_id));
                accuracy.add(p.segments().ok_or_else(missing)?, gl.segments().ok_or_else(missing)?)?;
            }
            _ => {
                return Err(Error::InvalidLabel(format!(
                    "`{}`: prediction and ground truth are for different tasks",
                    g.video_id
                )))
            }
        }
    }
    Ok(match task {
        Task::Parsing => Evaluation::Parsing(parsing.report()),
        Task::Localization => Evaluation::Localization {
            accuracy: accuracy.percent(),
        },
    })
}

/// Per-segment localization labels straight from a prediction.
pub fn localization_segments(p: &Prediction, threshold: f64) -> Option<Vec<usize>> {
    match p {
        Prediction::Localization { category, relevance } => Some(ave_segment_labels(category, relevance, threshold)),
        Prediction::Parsing { .. } => None,
    }
}
