//! Experiment configuration as flat `key=value` text with section prefixes.
//!
//! ```text
//! task=avvp
//! seed=7
//! data.train_dir=data/train
//! model.window_sizes=1,2,4,8
//! train.lr=0.0001
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Unset training keys
//! take the task's protocol defaults.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data_io::{Dataset, Task};
use crate::error::{Error, Result};
use crate::fusion::FusionSwitches;
use crate::model::ModelConfig;
use crate::pyramid::PyramidConfig;
use crate::train::TrainConfig;

/// Ablation variants accepted by `--variant` and `ablate`.
pub const VARIANTS: [&str; 7] = [
    "last",
    "unpyramid",
    "no-conv",
    "no-residual",
    "no-ula",
    "no-sf",
    "no-share",
];

/// Canonical variant name, accepting the table-style aliases.
pub fn canonical_variant(name: &str) -> Result<&'static str> {
    let name = match name {
        "mm-pyramid-last" => "last",
        "mm-unpyramid" => "unpyramid",
        "full" | "mm-pyramid" => return Ok("full"),
        other => other,
    };
    VARIANTS
        .iter()
        .copied()
        .find(|v| *v == name)
        .ok_or_else(|| Error::UnknownVariant(name.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Feature and class sizes; inferred from the training data when unset.
    pub audio_dim: Option<usize>,
    pub visual_dim: Option<usize>,
    pub num_classes: Option<usize>,
    pub pyramid: PyramidConfig,
    pub fusion: FusionSwitches,
    pub train: TrainConfig,
    /// Longest event counted in the short-event report.
    pub short_event_max: usize,
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            seed: 0,
            train_dir: None,
            test_dir: None,
            output_dir: PathBuf::from("out"),
            audio_dim: None,
            visual_dim: None,
            num_classes: None,
            pyramid: PyramidConfig::default(),
            fusion: FusionSwitches::default(),
            train: TrainConfig::for_task(task),
            short_event_max: 3,
        }
    }

    pub fn task(&self) -> Task {
        self.train.task
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected key=value"))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(Error::config(k, "set twice"));
            }
        }
        let task: Task = match entries.remove("task") {
            Some(t) => t.parse()?,
            None => return Err(Error::config("task", "missing")),
        };
        let mut cfg = Self::for_task(task);
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Set one key; `task` is fixed at parse time.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
            }
        }
        let p = &mut self.pyramid;
        let sw = &mut p.switches;
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = num(key, value)?;
                t.seed = self.seed;
            }
            "mode" => t.mode = value.parse()?,
            "data.train_dir" => self.train_dir = Some(PathBuf::from(value)),
            "data.test_dir" => self.test_dir = Some(PathBuf::from(value)),
            "output.dir" => self.output_dir = PathBuf::from(value),
            "model.audio_dim" => self.audio_dim = Some(num(key, value)?),
            "model.visual_dim" => self.visual_dim = Some(num(key, value)?),
            "model.num_classes" => self.num_classes = Some(num(key, value)?),
            "model.feature_dim" => p.dim = num(key, value)?,
            "model.num_units" => p.num_units = num(key, value)?,
            "model.window_sizes" => {
                p.window_sizes = value
                    .split(',')
                    .map(|x| num(key, x.trim()))
                    .collect::<Result<_>>()?
            }
            "model.num_heads" => p.num_heads = num(key, value)?,
            "model.ffn_dim" => p.ffn_dim = num(key, value)?,
            "model.dropout" => p.dropout = num(key, value)?,
            "model.last_only" => sw.last_only = flag(key, value)?,
            "model.uniform_windows" => sw.uniform_windows = flag(key, value)?,
            "model.disable_conv" => sw.disable_conv = flag(key, value)?,
            "model.plain_conv" => sw.plain_conv = flag(key, value)?,
            "model.share_cma" => sw.share_cma = flag(key, value)?,
            "model.disable_ula" => self.fusion.disable_ula = flag(key, value)?,
            "model.disable_sf" => self.fusion.disable_sf = flag(key, value)?,
            "train.lr" => t.lr = num(key, value)?,
            "train.lr_decay_factor" => t.lr_decay_factor = num(key, value)?,
            "train.lr_decay_every" => t.lr_decay_every = num(key, value)?,
            "train.epochs" => t.epochs = num(key, value)?,
            "train.batch_size" => t.batch_size = num(key, value)?,
            "train.label_smoothing" => t.label_smoothing = num(key, value)?,
            "metrics.threshold" => t.threshold = num(key, value)?,
            "metrics.short_event_max" => self.short_event_max = num(key, value)?,
            "task" => return Err(Error::config(key, "cannot be changed after parsing")),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid.validate()?;
        self.train.validate()?;
        if self.short_event_max == 0 {
            return Err(Error::config("metrics.short_event_max", "must be positive"));
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn apply_variant(&mut self, name: &str) -> Result<()> {
        let sw = &mut self.pyramid.switches;
        match canonical_variant(name)? {
            "full" => {}
            "last" => sw.last_only = true,
            "unpyramid" => sw.uniform_windows = true,
            "no-conv" => sw.disable_conv = true,
            "no-residual" => sw.plain_conv = true,
            "no-ula" => self.fusion.disable_ula = true,
            "no-sf" => self.fusion.disable_sf = true,
            "no-share" => sw.share_cma = false,
            _ => unreachable!("canonical names are listed above"),
        }
        Ok(())
    }

    /// Fill unset sizes from a dataset, then check they agree with it.
    pub fn resolve_sizes(&mut self, data: &Dataset) -> Result<()> {
        let (a, v) = data
            .feature_dims()
            .ok_or_else(|| Error::config("data.train_dir", "dataset is empty"))?;
        let c = data.num_classes().expect("non-empty");
        if data.task() != Some(self.task()) {
            return Err(Error::config(
                "task",
                format!("configured for {}, data is labelled for {}", self.task(), data.task().expect("non-empty")),
            ));
        }
        for (field, slot, found) in [
            ("model.audio_dim", &mut self.audio_dim, a),
            ("model.visual_dim", &mut self.visual_dim, v),
            ("model.num_classes", &mut self.num_classes, c),
        ] {
            match *slot {
                None => *slot = Some(found),
                Some(x) if x != found => {
                    return Err(Error::config(field, format!("configured {x}, data has {found}")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let need = |v: Option<usize>, field: &str| v.ok_or_else(|| Error::config(field, "unresolved"));
        let cfg = ModelConfig {
            task: self.task(),
            audio_dim: need(self.audio_dim, "model.audio_dim")?,
            visual_dim: need(self.visual_dim, "model.visual_dim")?,
            num_classes: need(self.num_classes, "model.num_classes")?,
            pyramid: self.pyramid.clone(),
            fusion: self.fusion,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Every key in a fixed order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn Display| {
            writeln!(s, "{k}={v}").expect("writing to a String");
        };
        let p = &self.pyramid;
        let t = &self.train;
        put("task", &self.task().flag());
        put("mode", &t.mode);
        put("seed", &self.seed);
        if let Some(d) = &self.train_dir {
            put("data.train_dir", &d.display());
        }
        if let Some(d) = &self.test_dir {
            put("data.test_dir", &d.display());
        }
        put("output.dir", &self.output_dir.display());
        for (k, v) in [
            ("model.audio_dim", self.audio_dim),
            ("model.visual_dim", self.visual_dim),
            ("model.num_classes", self.num_classes),
        ] {
            if let Some(v) = v {
                put(k, &v);
            }
        }
        put("model.feature_dim", &p.dim);
        put("model.num_units", &p.num_units);
        let windows: Vec<String> = p.window_sizes.iter().map(|w| w.to_string()).collect();
        put("model.window_sizes", &windows.join(","));
        put("model.num_heads", &p.num_heads);
        put("model.ffn_dim", &p.ffn_dim);
        put("model.dropout", &p.dropout);
        put("model.last_only", &p.switches.last_only);
        put("model.uniform_windows", &p.switches.uniform_windows);
        put("model.disable_conv", &p.switches.disable_conv);
        put("model.plain_conv", &p.switches.plain_conv);
        put("model.share_cma", &p.switches.share_cma);
        put("model.disable_ula", &self.fusion.disable_ula);
        put("model.disable_sf", &self.fusion.disable_sf);
        put("train.lr", &t.lr);
        put("train.lr_decay_factor", &t.lr_decay_factor);
        put("train.lr_decay_every", &t.lr_decay_every);
        put("train.epochs", &t.epochs);
        put("train.batch_size", &t.batch_size);
        put("train.label_smoothing", &t.label_smoothing);
        put("metrics.threshold", &t.threshold);
        put("metrics.short_event_max", &self.short_event_max);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::Supervision;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = ExperimentConfig::for_task(Task::Parsing);
        cfg.set_seed(9);
        cfg.train_dir = Some("a/b".into());
        cfg.num_classes = Some(4);
        cfg.pyramid.dropout = 0.25;
        cfg.train.lr = 3e-4;
        cfg.apply_variant("no-share").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.pyramid, cfg.pyramid);
        assert_eq!(back.train.lr, 3e-4);
    }

    #[test]
    fn defaults_follow_the_task() {
        let ave = ExperimentConfig::parse("task=ave\n").unwrap();
        assert_eq!(ave.train.lr, 2e-5);
        assert_eq!(ave.train.mode, Supervision::Full);
        let avvp = ExperimentConfig::parse("task=avvp\n# comment\n\ntrain.epochs=3\n").unwrap();
        assert_eq!(avvp.train.lr, 1e-4);
        assert_eq!(avvp.train.epochs, 3);
    }

    #[test]
    fn errors_name_the_field() {
        for (text, field) in [
            ("task=avvp\ntrain.lr=-1\n", "train.lr"),
            ("task=avvp\nmodel.window_sizes=4,2,1,8\n", "model.window_sizes"),
            ("task=avvp\nmodel.bogus=1\n", "model.bogus"),
            ("task=avvp\ntrain.epochs=x\n", "train.epochs"),
            ("seed=1\n", "task"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(
                matches!(&err, Error::Config { field: f, .. } if f == field),
                "{text:?} gave {err}"
            );
        }
    }

    #[test]
    fn variants_set_their_switch() {
        let mut c = ExperimentConfig::for_task(Task::Parsing);
        c.apply_variant("mm-unpyramid").unwrap();
        assert!(c.pyramid.switches.uniform_windows);
        c.apply_variant("mm-pyramid-last").unwrap();
        assert!(c.pyramid.switches.last_only);
        assert!(matches!(c.apply_variant("bogus"), Err(Error::UnknownVariant(_))));
    }
}
