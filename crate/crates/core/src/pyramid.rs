//! Attentive feature pyramid: stacked units of parallel self / cross-modal
//! windowed attention, channel-wise gated fusion and a dilated residual
//! temporal convolution. Every unit's output is kept.

use rand::Rng;

use crate::attention::{
    post_attention_block, windowed_cross_modal_attention, windowed_self_attention,
    AttentionParams, PostAttentionParams,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::init;

/// Ablation switches of the pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PyramidSwitches {
    /// Keep only the last unit's output.
    pub last_only: bool,
    /// Every unit uses the last unit's window.
    pub uniform_windows: bool,
    /// Drop the temporal convolution block.
    pub disable_conv: bool,
    /// Replace the dilated residual block with a single dilated convolution.
    pub plain_conv: bool,
    /// One cross-modal projection triple for both directions.
    pub share_cma: bool,
}

impl Default for PyramidSwitches {
    fn default() -> Self {
        Self {
            last_only: false,
            uniform_windows: false,
            disable_conv: false,
            plain_conv: false,
            share_cma: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidConfig {
    pub num_units: usize,
    pub window_sizes: Vec<usize>,
    pub dim: usize,
    pub ffn_dim: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub switches: PyramidSwitches,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            num_units: 4,
            window_sizes: vec![1, 2, 4, 8],
            dim: 64,
            ffn_dim: 256,
            num_heads: 1,
            dropout: 0.1,
            switches: PyramidSwitches::default(),
        }
    }
}

impl PyramidConfig {
    /// Config with `num_units` units of radius `1, 2, 4, ...`.
    pub fn exponential(num_units: usize, dim: usize) -> Self {
        Self {
            num_units,
            window_sizes: (0..num_units).map(|l| 1 << l).collect(),
            dim,
            ffn_dim: 4 * dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_units == 0 {
            return Err(Error::config("model.num_units", "must be at least 1"));
        }
        if self.window_sizes.len() != self.num_units {
            return Err(Error::config(
                "model.window_sizes",
                format!(
                    "{} sizes given for {} units",
                    self.window_sizes.len(),
                    self.num_units
                ),
            ));
        }
        if !self.switches.uniform_windows
            && self.window_sizes.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::config(
                "model.window_sizes",
                "must be strictly increasing",
            ));
        }
        if self.dim == 0 || self.ffn_dim == 0 {
            return Err(Error::config("model.feature_dim", "must be positive"));
        }
        if self.num_heads == 0 || !self.dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(
                "model.num_heads",
                format!("must divide feature dim {}", self.dim),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Radii actually used by each unit, after the uniform-window switch.
    pub fn effective_windows(&self) -> Vec<usize> {
        if self.switches.uniform_windows {
            let last = *self.window_sizes.last().expect("validated");
            vec![last; self.num_units]
        } else {
            self.window_sizes.clone()
        }
    }

    /// Segments of context reaching unit `l` (0-based) from each side.
    pub fn receptive_radius(&self, unit: usize) -> usize {
        let per_unit = if self.switches.disable_conv { 1 } else { 2 };
        self.effective_windows()[..=unit]
            .iter()
            .map(|d| per_unit * d)
            .sum()
    }
}

/// Sigmoid channel gates over the concatenated self/cross attention outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateParams {
    pub w_sa: ParamId,
    pub b_sa: ParamId,
    pub w_cma: ParamId,
    pub b_cma: ParamId,
}

impl GateParams {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, dim: usize) -> Self {
        Self {
            w_sa: store.add(format!("{prefix}.w_sa"), init::xavier(rng, 2 * dim, dim)),
            b_sa: store.add(format!("{prefix}.b_sa"), init::zeros_row(dim)),
            w_cma: store.add(format!("{prefix}.w_cma"), init::xavier(rng, 2 * dim, dim)),
            b_cma: store.add(format!("{prefix}.b_cma"), init::zeros_row(dim)),
        }
    }
}

/// `σ(F_c W_sa + b_1) ⊙ F_sa + σ(F_c W_cma + b_2) ⊙ F_cma` with `F_c = [F_sa | F_cma]`.
pub fn channel_fuse(g: &mut Graph, f_sa: Var, f_cma: Var, p: &GateParams) -> Result<Var> {
    if g.shape(f_sa) != g.shape(f_cma) {
        return Err(Error::Shape(format!(
            "channel fusion of {:?} and {:?}",
            g.shape(f_sa),
            g.shape(f_cma)
        )));
    }
    let f_c = g.concat_cols(&[f_sa, f_cma]);
    let gate_sa = g.linear(f_c, p.w_sa, p.b_sa);
    let gate_sa = g.sigmoid(gate_sa);
    let gate_cma = g.linear(f_c, p.w_cma, p.b_cma);
    let gate_cma = g.sigmoid(gate_cma);
    let a = g.mul(gate_sa, f_sa);
    let b = g.mul(gate_cma, f_cma);
    Ok(g.add(a, b))
}

/// Kernel-3 dilated temporal convolution, optionally followed by the
/// 1×1 convolution and the residual path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub w_center: ParamId,
    pub w_past: ParamId,
    pub w_future: ParamId,
    pub b_conv: ParamId,
    /// 1×1 convolution and its bias; absent for the plain-convolution ablation.
    pub pointwise: Option<(ParamId, ParamId)>,
}

impl ConvParams {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        dim: usize,
        residual: bool,
    ) -> Self {
        let w_center = store.add(format!("{prefix}.w_center"), init::xavier(rng, dim, dim));
        let w_past = store.add(format!("{prefix}.w_past"), init::xavier(rng, dim, dim));
        let w_future = store.add(format!("{prefix}.w_future"), init::xavier(rng, dim, dim));
        let b_conv = store.add(format!("{prefix}.b_conv"), init::zeros_row(dim));
        let pointwise = residual.then(|| {
            (
                store.add(format!("{prefix}.v"), init::xavier(rng, dim, dim)),
                store.add(format!("{prefix}.b_v"), init::zeros_row(dim)),
            )
        });
        Self {
            w_center,
            w_past,
            w_future,
            b_conv,
            pointwise,
        }
    }
}

/// `ReLU(F_t W¹ + F_{t−d} W² + F_{t+d} W³ + b₃)` with zero taps past the edges.
fn dilated_conv(g: &mut Graph, f: Var, dilation: usize, p: &ConvParams) -> Var {
    let d = dilation as isize;
    let past = g.shift_rows(f, -d);
    let future = g.shift_rows(f, d);
    let (wc, wp, wf) = (g.param(p.w_center), g.param(p.w_past), g.param(p.w_future));
    let a = g.matmul(f, wc);
    let b = g.matmul(past, wp);
    let c = g.matmul(future, wf);
    let ab = g.add(a, b);
    let pre = g.add(ab, c);
    let bias = g.param(p.b_conv);
    let pre = g.add_row(pre, bias);
    g.relu(pre)
}

/// Dilated residual block: `F + (ReLU(conv₃(F)) V + b₄)`. With no pointwise
/// parameters this is the plain dilated convolution.
pub fn dilated_residual_block(g: &mut Graph, f: Var, dilation: usize, p: &ConvParams) -> Var {
    let hidden = dilated_conv(g, f, dilation, p);
    match p.pointwise {
        Some((v, b_v)) => {
            let out = g.linear(hidden, v, b_v);
            g.add(f, out)
        }
        None => hidden,
    }
}

/// One modality's half of a pyramid unit.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityUnitParams {
    pub self_attention: AttentionParams,
    pub gates: GateParams,
    pub post: PostAttentionParams,
    pub conv: Option<ConvParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidUnitParams {
    pub audio: ModalityUnitParams,
    pub visual: ModalityUnitParams,
    /// Cross-modal attention with audio queries.
    pub cma_audio: AttentionParams,
    /// Cross-modal attention with visual queries; the same ids as
    /// `cma_audio` when sharing is on.
    pub cma_visual: AttentionParams,
}

/// Per-modality list of unit outputs, each N×D.
#[derive(Clone, Debug)]
pub struct PyramidFeatures {
    pub audio: Vec<Var>,
    pub visual: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Pyramid {
    pub config: PyramidConfig,
    pub units: Vec<PyramidUnitParams>,
}

impl Pyramid {
    pub fn init(store: &mut ParamStore, rng: &mut impl Rng, config: PyramidConfig) -> Result<Self> {
        config.validate()?;
        let sw = config.switches;
        let dim = config.dim;
        let mut units = Vec::with_capacity(config.num_units);
        for l in 0..config.num_units {
            let mut modality = |store: &mut ParamStore, name: &str| -> Result<ModalityUnitParams> {
                let prefix = format!("pyramid.{l}.{name}");
                Ok(ModalityUnitParams {
                    self_attention: AttentionParams::init(
                        store,
                        rng,
                        &format!("{prefix}.sa"),
                        dim,
                        config.num_heads,
                    )?,
                    gates: GateParams::init(store, rng, &format!("{prefix}.gate"), dim),
                    post: PostAttentionParams::init(
                        store,
                        rng,
                        &format!("{prefix}.post"),
                        dim,
                        config.ffn_dim,
                        config.dropout,
                    ),
                    conv: (!sw.disable_conv).then(|| {
                        ConvParams::init(store, rng, &format!("{prefix}.conv"), dim, !sw.plain_conv)
                    }),
                })
            };
            let audio = modality(store, "audio")?;
            let visual = modality(store, "visual")?;
            let (cma_audio, cma_visual) = if sw.share_cma {
                let shared = AttentionParams::init(
                    store,
                    rng,
                    &format!("pyramid.{l}.cma"),
                    dim,
                    config.num_heads,
                )?;
                (shared.clone(), shared)
            } else {
                (
                    AttentionParams::init(
                        store,
                        rng,
                        &format!("pyramid.{l}.cma_audio"),
                        dim,
                        config.num_heads,
                    )?,
                    AttentionParams::init(
                        store,
                        rng,
                        &format!("pyramid.{l}.cma_visual"),
                        dim,
                        config.num_heads,
                    )?,
                )
            };
            units.push(PyramidUnitParams {
                audio,
                visual,
                cma_audio,
                cma_visual,
            });
        }
        Ok(Self { config, units })
    }

    /// Number of distinct cross-modal query/key/value triples.
    pub fn cma_triples(&self) -> usize {
        let mut ids: Vec<ParamId> = self
            .units
            .iter()
            .flat_map(|u| [u.cma_audio.w_q, u.cma_visual.w_q])
            .collect();
        ids.sort();
        ids.dedup();
        ids.len()
    }

    fn modality_half(
        &self,
        g: &mut Graph,
        own: Var,
        other: Var,
        radius: usize,
        p: &ModalityUnitParams,
        cma: &AttentionParams,
    ) -> Result<Var> {
        let sa = windowed_self_attention(g, own, radius, &p.self_attention)?;
        let cross = windowed_cross_modal_attention(g, own, other, radius, cma)?;
        let fused = channel_fuse(g, sa, cross, &p.gates)?;
        let out = post_attention_block(g, own, fused, &p.post)?;
        Ok(match &p.conv {
            Some(conv) => dilated_residual_block(g, out, radius, conv),
            None => out,
        })
    }

    /// Unit `l`: both attention kinds read the same inputs (the previous
    /// unit's outputs); the convolution dilation equals the window radius.
    pub fn unit_forward(&self, g: &mut Graph, l: usize, audio: Var, visual: Var) -> Result<(Var, Var)> {
        if g.rows(audio) != g.rows(visual) {
            return Err(Error::Shape(format!(
                "audio has {} segments, visual {}",
                g.rows(audio),
                g.rows(visual)
            )));
        }
        let radius = self.config.effective_windows()[l];
        let unit = &self.units[l];
        let a = self.modality_half(g, audio, visual, radius, &unit.audio, &unit.cma_audio)?;
        let v = self.modality_half(g, visual, audio, radius, &unit.visual, &unit.cma_visual)?;
        Ok((a, v))
    }

    /// Every unit's output in order; a single-level list with `last_only`.
    pub fn forward(&self, g: &mut Graph, audio: Var, visual: Var) -> Result<PyramidFeatures> {
        let mut feats = PyramidFeatures {
            audio: Vec::with_capacity(self.units.len()),
            visual: Vec::with_capacity(self.units.len()),
        };
        let (mut a, mut v) = (audio, visual);
        for l in 0..self.units.len() {
            (a, v) = self.unit_forward(g, l, a, v)?;
            feats.audio.push(a);
            feats.visual.push(v);
        }
        if self.config.switches.last_only {
            feats.audio.drain(..feats.audio.len() - 1);
            feats.visual.drain(..feats.visual.len() - 1);
        }
        Ok(feats)
    }
}
