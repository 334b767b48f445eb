//! Adaptive semantic fusion of pyramid levels: attention across units at each
//! segment, sigmoid-weighted selective summation, and the per-modality heads.

use ndarray::Array2;
use rand::Rng;

use crate::attention::AttentionParams;
use crate::data_io::Task;
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FusionSwitches {
    /// Skip unit-level attention.
    pub disable_ula: bool,
    /// Replace selective fusion with a mean over units.
    pub disable_sf: bool,
}

/// Selective-fusion projection for one modality: `w` is D×1, `b` is 1×1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectiveParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl SelectiveParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, dim: usize) -> Self {
        Self {
            w: store.add(format!("{prefix}.w_sf"), init::xavier(rng, dim, 1)),
            b: store.add(format!("{prefix}.b_sf"), init::zeros_row(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    /// Shared across segments and modalities.
    pub unit_attention: AttentionParams,
    pub selective_audio: SelectiveParams,
    pub selective_visual: SelectiveParams,
    pub switches: FusionSwitches,
}

impl FusionParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        dim: usize,
        switches: FusionSwitches,
    ) -> Result<Self> {
        Ok(Self {
            unit_attention: AttentionParams::init(store, rng, "fusion.ula", dim, 1)?,
            selective_audio: SelectiveParams::init(store, rng, "fusion.audio", dim),
            selective_visual: SelectiveParams::init(store, rng, "fusion.visual", dim),
            switches,
        })
    }
}

/// Result of fusing one modality's pyramid.
#[derive(Clone, Debug)]
pub struct Fused {
    /// N×D fused features.
    pub features: Var,
    /// One N×1 weight column per unit (constant 1/L under mean fusion).
    pub weights: Vec<Var>,
}

/// Self-attention across the unit axis at every segment.
///
/// `units[l]` holds unit `l`'s N×D output; the result has the same layout.
/// Segment `t` of the output only depends on segment `t` of the inputs.
pub fn unit_level_attention(g: &mut Graph, units: &[Var], p: &AttentionParams) -> Result<Vec<Var>> {
    let Some(&first) = units.first() else {
        return Err(Error::Shape("unit-level attention over zero units".into()));
    };
    let shape = g.shape(first);
    if units.iter().any(|&u| g.shape(u) != shape) {
        return Err(Error::Shape("pyramid units differ in shape".into()));
    }
    let scale = 1.0 / (shape.1 as f64).sqrt();
    let (wq, wk, wv) = (g.param(p.w_q), g.param(p.w_k), g.param(p.w_v));
    let q: Vec<Var> = units.iter().map(|&u| g.matmul(u, wq)).collect();
    let k: Vec<Var> = units.iter().map(|&u| g.matmul(u, wk)).collect();
    let v: Vec<Var> = units.iter().map(|&u| g.matmul(u, wv)).collect();
    let mut out = Vec::with_capacity(units.len());
    for &ql in &q {
        let scores: Vec<Var> = k.iter().map(|&kj| g.row_dot(ql, kj)).collect();
        let scores = g.concat_cols(&scores);
        let scores = g.scale(scores, scale);
        let weights = g.softmax_rows(scores, None)?;
        let mut acc: Option<Var> = None;
        for (j, &vj) in v.iter().enumerate() {
            let w = g.slice_cols(weights, j, 1);
            let term = g.mul_col(vj, w);
            acc = Some(match acc {
                Some(a) => g.add(a, term),
                None => term,
            });
        }
        out.push(acc.expect("at least one unit"));
    }
    Ok(out)
}

/// `r̂_t = Σ_l σ(r_t^l W_sf + b_sf) r_t^l`.
pub fn selective_fusion(g: &mut Graph, units: &[Var], p: &SelectiveParams) -> Result<Fused> {
    if units.is_empty() {
        return Err(Error::Shape("selective fusion over zero units".into()));
    }
    let mut weights = Vec::with_capacity(units.len());
    let mut acc: Option<Var> = None;
    for &r in units {
        let w = g.linear(r, p.w, p.b);
        let w = g.sigmoid(w);
        weights.push(w);
        let term = g.mul_col(r, w);
        acc = Some(match acc {
            Some(a) => g.add(a, term),
            None => term,
        });
    }
    Ok(Fused {
        features: acc.expect("non-empty"),
        weights,
    })
}

/// Unweighted mean over units.
pub fn mean_fusion(g: &mut Graph, units: &[Var]) -> Result<Fused> {
    if units.is_empty() {
        return Err(Error::Shape("mean fusion over zero units".into()));
    }
    let n = g.rows(units[0]);
    let inv = 1.0 / units.len() as f64;
    let mut acc = units[0];
    for &u in &units[1..] {
        acc = g.add(acc, u);
    }
    let features = g.scale(acc, inv);
    let weights = units
        .iter()
        .map(|_| g.constant(Array2::from_elem((n, 1), inv)))
        .collect();
    Ok(Fused { features, weights })
}

impl FusionParams {
    /// Fuse both modalities' pyramids according to the switches.
    pub fn forward(&self, g: &mut Graph, audio: &[Var], visual: &[Var]) -> Result<(Fused, Fused)> {
        let mut fuse = |units: &[Var], sel: &SelectiveParams| -> Result<Fused> {
            let refined = if self.switches.disable_ula {
                units.to_vec()
            } else {
                unit_level_attention(g, units, &self.unit_attention)?
            };
            if self.switches.disable_sf {
                mean_fusion(g, &refined)
            } else {
                selective_fusion(g, &refined, sel)
            }
        };
        let a = fuse(audio, &self.selective_audio)?;
        let v = fuse(visual, &self.selective_visual)?;
        Ok((a, v))
    }
}

/// Linear classifier `D → C` for one modality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ClassifierParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        dim: usize,
        classes: usize,
    ) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), init::xavier(rng, dim, classes)),
            b: store.add(format!("{prefix}.b"), init::zeros_row(classes)),
        }
    }
}

/// Per-segment class probabilities: sigmoid for parsing (multi-label),
/// softmax for localization (exactly one class, background included).
pub fn modality_head(g: &mut Graph, fused: Var, p: &ClassifierParams, task: Task) -> Result<Var> {
    let logits = g.linear(fused, p.w, p.b);
    match task {
        Task::Parsing => Ok(g.sigmoid(logits)),
        Task::Localization => g.softmax_rows(logits, None),
    }
}

/// Audio-visual probability as the product of the two modalities.
pub fn audio_visual_conjunction(p_audio: &Array2<f64>, p_visual: &Array2<f64>) -> Result<Array2<f64>> {
    if p_audio.dim() != p_visual.dim() {
        return Err(Error::Shape(format!(
            "audio probabilities {:?} vs visual {:?}",
            p_audio.dim(),
            p_visual.dim()
        )));
    }
    if let Some(&bad) = p_audio
        .iter()
        .chain(p_visual.iter())
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::ProbabilityRange(bad));
    }
    Ok(p_audio * p_visual)
}
