//! Task heads and losses: the localization classifier with segment relevance,
//! attentive MMIL pooling for weakly-supervised parsing, and label smoothing.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;

use crate::data_io::{LocalizationLabels, ParsingLabels};
use crate::error::{Error, Result};
use crate::fusion::ClassifierParams;
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Supervision {
    Full,
    Weak,
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Supervision::Full => "full",
            Supervision::Weak => "weak",
        })
    }
}

impl FromStr for Supervision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "fully" => Ok(Supervision::Full),
            "weak" | "weakly" => Ok(Supervision::Weak),
            other => Err(Error::config("mode", format!("expected full or weak, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AveHeadParams {
    /// `2D → C` video category classifier.
    pub category: ClassifierParams,
    /// `2D → 1` per-segment relevance classifier.
    pub relevance: ClassifierParams,
}

impl AveHeadParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, dim: usize, num_classes: usize) -> Self {
        Self {
            category: ClassifierParams::init(store, rng, "head.category", 2 * dim, num_classes),
            relevance: ClassifierParams::init(store, rng, "head.relevance", 2 * dim, 1),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AveOutput {
    /// 1×C distribution over classes, background included.
    pub category: Var,
    /// N×1 relevance scores.
    pub relevance: Var,
}

pub fn ave_head(g: &mut Graph, r_audio: Var, r_visual: Var, p: &AveHeadParams) -> Result<AveOutput> {
    if g.shape(r_audio) != g.shape(r_visual) {
        return Err(Error::Shape(format!(
            "audio features {:?} vs visual {:?}",
            g.shape(r_audio),
            g.shape(r_visual)
        )));
    }
    let joint = g.concat_cols(&[r_audio, r_visual]);
    let pooled = g.mean_rows(joint);
    let logits = g.linear(pooled, p.category.w, p.category.b);
    let category = g.softmax_rows(logits, None)?;
    let rel = g.linear(joint, p.relevance.w, p.relevance.b);
    let relevance = g.sigmoid(rel);
    Ok(AveOutput { category, relevance })
}

/// Per-segment labels: the most likely event class where the segment is
/// relevant, background elsewhere.
pub fn ave_segment_labels(category: &Array2<f64>, relevance: &Array2<f64>, threshold: f64) -> Vec<usize> {
    let background = category.ncols() - 1;
    let event = (0..background)
        .max_by(|&a, &b| category[[0, a]].total_cmp(&category[[0, b]]).then(b.cmp(&a)))
        .unwrap_or(background);
    relevance
        .column(0)
        .iter()
        .map(|&r| if r >= threshold { event } else { background })
        .collect()
}

/// Bias-free temporal and modality attention projections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MmilParams {
    /// `2D → C` temporal attention logits.
    pub time: ParamId,
    /// `D → C` modality attention logits, shared by both modalities.
    pub modality: ParamId,
}

impl MmilParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, dim: usize, num_classes: usize) -> Self {
        Self {
            time: store.add("head.mmil.time.w", init::xavier(rng, 2 * dim, num_classes)),
            modality: store.add("head.mmil.modality.w", init::xavier(rng, dim, num_classes)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MmilOutput {
    /// 1×C video-level probabilities.
    pub audio: Var,
    pub visual: Var,
    pub global: Var,
    /// N×C, each column sums to 1.
    pub time_weights: Var,
    /// N×C audio share of the modality attention; the visual share is its complement.
    pub audio_weights: Var,
}

/// Attentive pooling from precomputed attention logits (each N×C).
pub fn mmil_combine(
    g: &mut Graph,
    p_audio: Var,
    p_visual: Var,
    time_logits: Var,
    audio_logits: Var,
    visual_logits: Var,
) -> Result<MmilOutput> {
    let shape = g.shape(p_audio);
    for v in [p_visual, time_logits, audio_logits, visual_logits] {
        if g.shape(v) != shape {
            return Err(Error::Shape(format!("pooling input {:?} vs {:?}", g.shape(v), shape)));
        }
    }
    let tl = g.transpose(time_logits);
    let tw = g.softmax_rows(tl, None)?;
    let time_weights = g.transpose(tw);
    // Two-way softmax over modalities.
    let diff = g.sub(audio_logits, visual_logits);
    let audio_weights = g.sigmoid(diff);
    let visual_weights = g.one_minus(audio_weights);

    let ta = g.mul(time_weights, p_audio);
    let audio = g.sum_rows(ta);
    let tv = g.mul(time_weights, p_visual);
    let visual = g.sum_rows(tv);
    let ma = g.mul(audio_weights, p_audio);
    let mv = g.mul(visual_weights, p_visual);
    let mixed = g.add(ma, mv);
    let tm = g.mul(time_weights, mixed);
    let global = g.sum_rows(tm);
    Ok(MmilOutput {
        audio,
        visual,
        global,
        time_weights,
        audio_weights,
    })
}

pub fn mmil_pool(
    g: &mut Graph,
    r_audio: Var,
    r_visual: Var,
    p_audio: Var,
    p_visual: Var,
    p: &MmilParams,
) -> Result<MmilOutput> {
    let joint = g.concat_cols(&[r_audio, r_visual]);
    let (wt, wm) = (g.param(p.time), g.param(p.modality));
    let time_logits = g.matmul(joint, wt);
    let audio_logits = g.matmul(r_audio, wm);
    let visual_logits = g.matmul(r_visual, wm);
    mmil_combine(g, p_audio, p_visual, time_logits, audio_logits, visual_logits)
}

/// `1 → 1-ε`, `0 → ε`, as a 1×C row.
pub fn smooth_labels(y: &[bool], epsilon: f64) -> Result<Array2<f64>> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::config(
            "train.label_smoothing",
            format!("{epsilon} is outside [0, 0.5)"),
        ));
    }
    Ok(Array2::from_shape_fn((1, y.len()), |(_, c)| {
        if y[c] {
            1.0 - epsilon
        } else {
            epsilon
        }
    }))
}

/// Mean binary cross-entropy between probabilities `p` and fixed targets.
pub fn binary_cross_entropy(g: &mut Graph, p: Var, target: &Array2<f64>) -> Result<Var> {
    if g.shape(p) != target.dim() {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs targets {:?}",
            g.shape(p),
            target.dim()
        )));
    }
    let n = target.len() as f64;
    let t = g.constant(target.clone());
    let one_minus_t = g.constant(target.mapv(|x| 1.0 - x));
    let lp = g.ln_floor(p, PROB_FLOOR);
    let q = g.one_minus(p);
    let lq = g.ln_floor(q, PROB_FLOOR);
    let a = g.mul(t, lp);
    let b = g.mul(one_minus_t, lq);
    let s = g.add(a, b);
    let total = g.sum_all(s);
    Ok(g.scale(total, -1.0 / n))
}

/// Sum of the audio, visual and global BCE terms against the smoothed
/// video-level label set.
pub fn parsing_loss(g: &mut Graph, out: &MmilOutput, labels: &ParsingLabels, epsilon: f64) -> Result<Var> {
    let target = smooth_labels(&labels.union(), epsilon)?;
    let a = binary_cross_entropy(g, out.audio, &target)?;
    let v = binary_cross_entropy(g, out.visual, &target)?;
    let gl = binary_cross_entropy(g, out.global, &target)?;
    let s = g.add(a, v);
    Ok(g.add(s, gl))
}

/// Category cross-entropy, plus mean relevance BCE under full supervision.
pub fn localization_loss(
    g: &mut Graph,
    out: &AveOutput,
    labels: &LocalizationLabels,
    mode: Supervision,
) -> Result<Var> {
    let c = g.cols(out.category);
    if c != labels.num_classes() {
        return Err(Error::Shape(format!(
            "{c} predicted classes vs {} labelled",
            labels.num_classes()
        )));
    }
    let onehot = g.constant(Array2::from_shape_fn((1, c), |(_, k)| {
        f64::from(u8::from(k == labels.category()))
    }));
    let lp = g.ln_floor(out.category, PROB_FLOOR);
    let picked = g.mul(onehot, lp);
    let s = g.sum_all(picked);
    let ce = g.scale(s, -1.0);
    match mode {
        Supervision::Weak => Ok(ce),
        Supervision::Full => {
            let rel = labels.relevance().ok_or_else(|| {
                Error::InvalidLabel("full supervision needs segment labels".into())
            })?;
            let target = Array2::from_shape_fn((rel.len(), 1), |(t, _)| f64::from(u8::from(rel[t])));
            let bce = binary_cross_entropy(g, out.relevance, &target)?;
            Ok(g.add(ce, bce))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entropy(p: f64) -> f64 {
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth_labels(&[true, false], 0.1).unwrap(), array![[0.9, 0.1]]);
        assert_eq!(smooth_labels(&[true, false], 0.0).unwrap(), array![[1.0, 0.0]]);
        assert!(smooth_labels(&[true], 0.5).is_err());
    }

    #[test]
    fn relevance_gates_the_category() {
        let cat = array![[0.1, 0.7, 0.05, 0.15]];
        let rel = array![[0.0], [0.0], [1.0], [1.0], [1.0], [1.0], [1.0], [1.0], [0.0], [0.0]];
        let labels = ave_segment_labels(&cat, &rel, 0.5);
        assert_eq!(labels, vec![3, 3, 1, 1, 1, 1, 1, 1, 3, 3]);
        let low = rel.mapv(|_| 0.2);
        assert!(ave_segment_labels(&cat, &low, 0.5).iter().all(|&c| c == 3));
    }

    #[test]
    fn ave_head_distribution_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let p = AveHeadParams::init(&mut store, &mut rng, 3, 5);
        let mut g = Graph::new(&store);
        let a = g.constant(Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.1));
        let v = g.constant(Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.2));
        let out = ave_head(&mut g, a, v, &p).unwrap();
        assert!((g.value(out.category).sum() - 1.0).abs() < 1e-12);
        assert_eq!(g.shape(out.relevance), (4, 1));
    }

    #[test]
    fn single_segment_uniform_modality_is_the_mean() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let pa = g.constant(array![[0.2, 0.9]]);
        let pv = g.constant(array![[0.6, 0.1]]);
        let z = g.constant(Array2::zeros((1, 2)));
        let out = mmil_combine(&mut g, pa, pv, z, z, z).unwrap();
        let got = g.value(out.global);
        assert!((got[[0, 0]] - 0.4).abs() < 1e-15);
        assert!((got[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_probability_is_a_fixed_point() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let pi = g.constant(Array2::from_elem((5, 3), 0.37));
        let tl = g.constant(Array2::from_shape_fn((5, 3), |(i, j)| (i as f64).sin() + j as f64));
        let al = g.constant(Array2::from_shape_fn((5, 3), |(i, j)| (i * j) as f64 * 0.3));
        let vl = g.constant(Array2::from_shape_fn((5, 3), |(i, j)| i as f64 - j as f64));
        let out = mmil_combine(&mut g, pi, pi, tl, al, vl).unwrap();
        for v in [out.audio, out.visual, out.global] {
            assert!(g.value(v).iter().all(|x| (x - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn pooling_matches_straight_line_evaluation() {
        let pa = array![[0.1, 0.8], [0.5, 0.3], [0.9, 0.6]];
        let pv = array![[0.4, 0.2], [0.7, 0.1], [0.05, 0.95]];
        let tl = array![[0.3, -1.0], [1.2, 0.4], [-0.5, 0.0]];
        let al = array![[0.2, 0.1], [-0.3, 0.8], [1.0, -1.0]];
        let vl = array![[0.0, 0.5], [0.6, -0.2], [0.1, 0.3]];
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let vars = [&pa, &pv, &tl, &al, &vl].map(|m| g.constant(m.clone()));
        let out = mmil_combine(&mut g, vars[0], vars[1], vars[2], vars[3], vars[4]).unwrap();
        for c in 0..2 {
            let z: f64 = (0..3).map(|t| f64::exp(tl[[t, c]])).sum();
            let mut expected = 0.0;
            for t in 0..3 {
                let wt = tl[[t, c]].exp() / z;
                let ea = al[[t, c]].exp();
                let ev = vl[[t, c]].exp();
                expected += wt * (ea * pa[[t, c]] + ev * pv[[t, c]]) / (ea + ev);
            }
            assert!((g.value(out.global)[[0, c]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn parsing_loss_minimum_is_the_target_entropy() {
        let labels = ParsingLabels::weak(vec![true, false], vec![false, false]).unwrap();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let target = g.constant(array![[0.9, 0.1]]);
        let out = MmilOutput {
            audio: target,
            visual: target,
            global: target,
            time_weights: target,
            audio_weights: target,
        };
        let loss = parsing_loss(&mut g, &out, &labels, 0.1).unwrap();
        let expected = 3.0 * entropy(0.1);
        assert!((g.value(loss)[[0, 0]] - expected).abs() < 1e-12);

        let perfect = g.constant(array![[1.0, 0.0]]);
        let out = MmilOutput {
            audio: perfect,
            visual: perfect,
            global: perfect,
            time_weights: perfect,
            audio_weights: perfect,
        };
        let loss = parsing_loss(&mut g, &out, &labels, 0.0).unwrap();
        assert!(g.value(loss)[[0, 0]].abs() < 1e-6);
    }

    #[test]
    fn localization_loss_cases() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let labels = LocalizationLabels::new(3, 0, Some(vec![2, 0, 0, 2])).unwrap();
        let out = AveOutput {
            category: g.constant(array![[1.0, 0.0, 0.0]]),
            relevance: g.constant(array![[0.0], [1.0], [1.0], [0.0]]),
        };
        let full = localization_loss(&mut g, &out, &labels, Supervision::Full).unwrap();
        assert!(g.value(full)[[0, 0]].abs() < 1e-6);

        let shuffled = LocalizationLabels::new(3, 0, Some(vec![0, 2, 2, 0])).unwrap();
        let soft = AveOutput {
            category: g.constant(array![[0.5, 0.3, 0.2]]),
            relevance: out.relevance,
        };
        let w1 = localization_loss(&mut g, &soft, &labels, Supervision::Weak).unwrap();
        let w2 = localization_loss(&mut g, &soft, &shuffled, Supervision::Weak).unwrap();
        assert_eq!(g.value(w1), g.value(w2));
        assert!((g.value(w1)[[0, 0]] + 0.5f64.ln()).abs() < 1e-15);
    }
}
