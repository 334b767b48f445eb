//! The complete network: input projections, attentive pyramid, adaptive
//! fusion and the task head.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::{
    LabelKind, LabelSet, LocalizationLabels, ParsingLabels, ParsingSegments, Task, Video,
};
use crate::error::{Error, Result};
use crate::fusion::{modality_head, ClassifierParams, Fused, FusionParams, FusionSwitches};
use crate::graph::{Graph, ParamStore, Var};
use crate::heads::{
    ave_head, ave_segment_labels, localization_loss, mmil_pool, parsing_loss, AveHeadParams,
    AveOutput, MmilOutput, MmilParams, Supervision,
};
use crate::pyramid::{Pyramid, PyramidConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub audio_dim: usize,
    pub visual_dim: usize,
    /// Parsing: event classes. Localization: event classes plus background.
    pub num_classes: usize,
    pub pyramid: PyramidConfig,
    pub fusion: FusionSwitches,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        if self.audio_dim == 0 {
            return Err(Error::config("model.audio_dim", "must be positive"));
        }
        if self.visual_dim == 0 {
            return Err(Error::config("model.visual_dim", "must be positive"));
        }
        let min = match self.task {
            Task::Parsing => 1,
            Task::Localization => 2,
        };
        if self.num_classes < min {
            return Err(Error::config(
                "model.num_classes",
                format!("{} is too few for {}", self.num_classes, self.task),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HeadParams {
    Parsing {
        audio: ClassifierParams,
        visual: ClassifierParams,
        mmil: MmilParams,
    },
    Localization(AveHeadParams),
}

#[derive(Clone, Copy, Debug)]
pub enum HeadOutput {
    Parsing {
        /// N×C segment probabilities.
        audio: Var,
        visual: Var,
        pool: MmilOutput,
    },
    Localization(AveOutput),
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub audio: Fused,
    pub visual: Fused,
    pub head: HeadOutput,
}

/// Inference result for one video.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Parsing {
        /// N×C probabilities per track.
        audio: Array2<f64>,
        visual: Array2<f64>,
        audio_visual: Array2<f64>,
        /// 1×C video-level probabilities.
        video_audio: Array2<f64>,
        video_visual: Array2<f64>,
        video_global: Array2<f64>,
        time_weights: Array2<f64>,
        modality_weights: Array2<f64>,
    },
    Localization {
        category: Array2<f64>,
        relevance: Array2<f64>,
    },
}

/// Prediction plus the per-unit selective-fusion weights (N×L per modality).
#[derive(Clone, Debug, PartialEq)]
pub struct Inspection {
    pub prediction: Prediction,
    pub audio_weights: Array2<f64>,
    pub visual_weights: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct MmPyramid {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub project_audio: ClassifierParams,
    pub project_visual: ClassifierParams,
    pub pyramid: Pyramid,
    pub fusion: FusionParams,
    pub head: HeadParams,
}

impl MmPyramid {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let dim = config.pyramid.dim;
        let project_audio = ClassifierParams::init(&mut store, &mut rng, "input.audio", config.audio_dim, dim);
        let project_visual =
            ClassifierParams::init(&mut store, &mut rng, "input.visual", config.visual_dim, dim);
        let pyramid = Pyramid::init(&mut store, &mut rng, config.pyramid.clone())?;
        let fusion = FusionParams::init(&mut store, &mut rng, dim, config.fusion)?;
        let c = config.num_classes;
        let head = match config.task {
            Task::Parsing => HeadParams::Parsing {
                audio: ClassifierParams::init(&mut store, &mut rng, "head.audio", dim, c),
                visual: ClassifierParams::init(&mut store, &mut rng, "head.visual", dim, c),
                mmil: MmilParams::init(&mut store, &mut rng, dim, c),
            },
            Task::Localization => HeadParams::Localization(AveHeadParams::init(&mut store, &mut rng, dim, c)),
        };
        Ok(Self {
            config,
            store,
            project_audio,
            project_visual,
            pyramid,
            fusion,
            head,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Scalars held by cross-modal attention projections.
    pub fn cma_parameters(&self) -> usize {
        self.store
            .iter()
            .filter(|(name, _)| name.contains(".cma"))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn check_video(&self, video: &Video) -> Result<()> {
        if video.audio.dim() != self.config.audio_dim {
            return Err(Error::DimensionMismatch {
                modality: "audio".into(),
                expected: self.config.audio_dim,
                found: video.audio.dim(),
            });
        }
        if video.visual.dim() != self.config.visual_dim {
            return Err(Error::DimensionMismatch {
                modality: "visual".into(),
                expected: self.config.visual_dim,
                found: video.visual.dim(),
            });
        }
        if video.labels.task() != self.config.task {
            return Err(Error::InvalidLabel(format!(
                "video `{}` is labelled for {}, model is built for {}",
                video.id,
                video.labels.task(),
                self.config.task
            )));
        }
        if video.labels.num_classes() != self.config.num_classes {
            return Err(Error::InvalidLabel(format!(
                "video `{}` has {} classes, model expects {}",
                video.id,
                video.labels.num_classes(),
                self.config.num_classes
            )));
        }
        Ok(())
    }

    /// Build the forward graph from raw feature matrices.
    pub fn forward_features(&self, g: &mut Graph, audio: Var, visual: Var) -> Result<ForwardPass> {
        let a = g.linear(audio, self.project_audio.w, self.project_audio.b);
        let v = g.linear(visual, self.project_visual.w, self.project_visual.b);
        let feats = self.pyramid.forward(g, a, v)?;
        let (fa, fv) = self.fusion.forward(g, &feats.audio, &feats.visual)?;
        let head = match &self.head {
            HeadParams::Parsing { audio, visual, mmil } => {
                let pa = modality_head(g, fa.features, audio, Task::Parsing)?;
                let pv = modality_head(g, fv.features, visual, Task::Parsing)?;
                let pool = mmil_pool(g, fa.features, fv.features, pa, pv, mmil)?;
                HeadOutput::Parsing {
                    audio: pa,
                    visual: pv,
                    pool,
                }
            }
            HeadParams::Localization(p) => HeadOutput::Localization(ave_head(g, fa.features, fv.features, p)?),
        };
        Ok(ForwardPass {
            audio: fa,
            visual: fv,
            head,
        })
    }

    pub fn forward(&self, g: &mut Graph, video: &Video) -> Result<ForwardPass> {
        self.check_video(video)?;
        let a = g.constant(video.audio.to_f64());
        let v = g.constant(video.visual.to_f64());
        self.forward_features(g, a, v)
    }

    /// Training loss for one video. Parsing always trains on video-level labels.
    pub fn loss(
        &self,
        g: &mut Graph,
        pass: &ForwardPass,
        labels: &LabelSet,
        mode: Supervision,
        label_smoothing: f64,
    ) -> Result<Var> {
        match (&pass.head, &labels.kind) {
            (HeadOutput::Parsing { pool, .. }, LabelKind::Parsing(l)) => {
                parsing_loss(g, pool, l, label_smoothing)
            }
            (HeadOutput::Localization(out), LabelKind::Localization(l)) => {
                localization_loss(g, out, l, mode)
            }
            _ => Err(Error::InvalidLabel(format!(
                "labels of `{}` do not match the model task",
                labels.video_id
            ))),
        }
    }

    pub fn inspect(&self, video: &Video) -> Result<Inspection> {
        let mut g = Graph::new(&self.store);
        let pass = self.forward(&mut g, video)?;
        let prediction = match pass.head {
            HeadOutput::Parsing { audio, visual, pool } => {
                let pa = g.value(audio).clone();
                let pv = g.value(visual).clone();
                Prediction::Parsing {
                    audio_visual: &pa * &pv,
                    audio: pa,
                    visual: pv,
                    video_audio: g.value(pool.audio).clone(),
                    video_visual: g.value(pool.visual).clone(),
                    video_global: g.value(pool.global).clone(),
                    time_weights: g.value(pool.time_weights).clone(),
                    modality_weights: g.value(pool.audio_weights).clone(),
                }
            }
            HeadOutput::Localization(out) => Prediction::Localization {
                category: g.value(out.category).clone(),
                relevance: g.value(out.relevance).clone(),
            },
        };
        let stack = |f: &Fused| {
            let n = video.num_segments();
            Array2::from_shape_fn((n, f.weights.len()), |(t, l)| g.value(f.weights[l])[[t, 0]])
        };
        Ok(Inspection {
            prediction,
            audio_weights: stack(&pass.audio),
            visual_weights: stack(&pass.visual),
        })
    }

    pub fn predict(&self, video: &Video) -> Result<Prediction> {
        self.inspect(video).map(|i| i.prediction)
    }
}

impl Prediction {
    /// Thresholded decisions in label form, so predictions can be written as
    /// a label file and scored standalone.
    pub fn to_labels(&self, video_id: &str, threshold: f64) -> Result<LabelSet> {
        let kind = match self {
            Prediction::Parsing { audio, visual, .. } => {
                let segs = ParsingSegments::new(
                    audio.mapv(|p| p >= threshold),
                    visual.mapv(|p| p >= threshold),
                )?;
                LabelKind::Parsing(ParsingLabels::from_segments(segs))
            }
            Prediction::Localization { category, relevance } => {
                let segs = ave_segment_labels(category, relevance, threshold);
                let c = category.ncols();
                let bg = c - 1;
                let cat = segs.iter().copied().find(|&s| s != bg).unwrap_or(bg);
                LabelKind::Localization(LocalizationLabels::new(c, cat, Some(segs))?)
            }
        };
        Ok(LabelSet {
            video_id: video_id.to_string(),
            kind,
        })
    }
}
