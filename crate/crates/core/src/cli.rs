//! Command-line entry points.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{canonical_variant, ExperimentConfig};
use crate::data_io::{
    generate_synthetic, read_label_file, write_atomic, write_label_file, Dataset, LabelKind,
    LabelSet, SyntheticSpec, Task,
};
use crate::error::{Error, Result};
use crate::heads::Supervision;
use crate::model::{Inspection, MmPyramid};
use crate::train::{evaluate, score_labels, train, Evaluation};

pub const CHECKPOINT_FILE: &str = "checkpoint.mmpc";
pub const CONFIG_FILE: &str = "config.cfg";
pub const LOG_FILE: &str = "train.log";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "mmpyramid", version, about = "Multimodal pyramid attention for audio-visual events")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, config snapshot and log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        mode: Option<Supervision>,
        #[arg(long)]
        variant: Option<String>,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset, or a prediction file against gold labels.
    Eval {
        #[arg(long, conflicts_with_all = ["predictions", "gold"], requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, requires = "gold")]
        predictions: Option<PathBuf>,
        #[arg(long, requires = "predictions")]
        gold: Option<PathBuf>,
        /// Restrict event-level scores to events of at most this many segments.
        #[arg(long)]
        max_event_len: Option<usize>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the full model and each ablation variant.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Variant names, comma separated or repeated.
        #[arg(long, value_delimiter = ',')]
        variant: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-video timelines of predictions vs ground truth and fusion weights.
    Plot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Video ids, comma separated or repeated.
        #[arg(long = "video", value_delimiter = ',', required = true)]
        videos: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic dataset.
    Generate {
        #[arg(long, default_value = "avvp")]
        task: Task,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        num_videos: usize,
        /// Put the last this-many videos in `<out>/test`, the rest in `<out>/train`.
        #[arg(long)]
        test_videos: Option<usize>,
        #[arg(long, default_value_t = 10)]
        segments: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingPath(_) | Error::Config { .. } | Error::UnknownVariant(_) => 2,
        _ => 1,
    }
}

/// One-line diagnostic: `error: <kind>: <message>`.
pub fn error_line(err: &Error) -> String {
    format!("error: {}: {}", err.kind(), err.to_string().replace('\n', " "))
}

pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write) -> Result<()> {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => return emit(out, &e.to_string()),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid");
            return Err(Error::config("arguments", first.trim_start_matches("error: ")));
        }
    };
    match cli.command {
        Command::Train {
            config,
            seed,
            task,
            mode,
            variant,
            out: dir,
        } => {
            let cfg = load_config(&config, seed, task, mode, variant.as_deref(), dir)?;
            cmd_train(cfg, out)
        }
        Command::Eval {
            checkpoint,
            data,
            predictions,
            gold,
            max_event_len,
            out: dest,
        } => {
            let report = match (checkpoint, predictions, gold) {
                (Some(ck), _, _) => {
                    let data = data.expect("clap requires --data");
                    eval_checkpoint(&ck, &data, max_event_len)?
                }
                (None, Some(p), Some(g)) => {
                    let preds = read_label_file(&p)?;
                    let gold = read_label_file(&g)?;
                    render_evaluation(&score_labels(&preds, &gold, max_event_len)?)
                }
                _ => {
                    return Err(Error::config(
                        "arguments",
                        "eval needs --checkpoint with --data, or --predictions with --gold",
                    ))
                }
            };
            match dest {
                Some(path) => write_atomic(&path, report.as_bytes()),
                None => emit(out, &report),
            }
        }
        Command::Ablate {
            config,
            variant,
            seed,
            out: dir,
        } => {
            let cfg = load_config(&config, seed, None, None, None, dir)?;
            cmd_ablate(cfg, &variant, out)
        }
        Command::Plot {
            checkpoint,
            data,
            videos,
            out: dir,
        } => cmd_plot(&checkpoint, &data, &videos, &dir, out),
        Command::Generate {
            task,
            seed,
            num_videos,
            test_videos,
            segments,
            dim,
            classes,
            noise,
            out: dir,
        } => {
            let spec = SyntheticSpec {
                task,
                seed,
                num_videos,
                num_segments: segments,
                feature_dim: dim,
                num_classes: classes,
                noise_std: noise,
                lengths: SyntheticSpec::default()
                    .lengths
                    .into_iter()
                    .filter(|b| b.min_len <= segments)
                    .map(|mut b| {
                        b.max_len = b.max_len.min(segments);
                        b
                    })
                    .collect(),
                min_events: 1,
                max_events: if task == Task::Localization { 1 } else { classes.min(3) },
                ..SyntheticSpec::default()
            };
            let data = Dataset::new(generate_synthetic(&spec)?);
            match test_videos {
                Some(k) => {
                    let (train, test) = data.split_at(num_videos.saturating_sub(k));
                    train.save(&dir.join("train"))?;
                    test.save(&dir.join("test"))?;
                }
                None => data.save(&dir)?,
            }
            emit(out, &format!("wrote {num_videos} videos to {}\n", dir.display()))
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    task: Option<Task>,
    mode: Option<Supervision>,
    variant: Option<&str>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig> {
    let mut text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let has_task = text
        .lines()
        .any(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == "task"));
    if let Some(t) = task {
        if has_task {
            let cfg = ExperimentConfig::parse(&text)?;
            if cfg.task() != t {
                return Err(Error::config(
                    "task",
                    format!("--task {} contradicts the config file ({})", t.flag(), cfg.task().flag()),
                ));
            }
        } else {
            text = format!("task={}\n{text}", t.flag());
        }
    }
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(m) = mode {
        cfg.train.mode = m;
    }
    if let Some(v) = variant {
        cfg.apply_variant(v)?;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    let dir = cfg
        .train_dir
        .as_ref()
        .ok_or_else(|| Error::config("data.train_dir", "missing"))?;
    let train = Dataset::load(dir)?;
    let test = cfg.test_dir.as_deref().map(Dataset::load).transpose()?;
    Ok((train, test))
}

/// Train one configuration; returns the model and its log lines.
fn fit(cfg: &mut ExperimentConfig, train_set: &Dataset, val: Option<&Dataset>) -> Result<(MmPyramid, String)> {
    cfg.resolve_sizes(train_set)?;
    let mut model = MmPyramid::new(cfg.model_config()?, cfg.seed)?;
    let mut log = String::new();
    train(&mut model, train_set, val, &cfg.train_config(), |e| {
        log.push_str(&e.to_json());
        log.push('\n');
    })?;
    Ok((model, log))
}

fn cmd_train(mut cfg: ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let (train_set, test_set) = load_data(&cfg)?;
    let (model, log) = fit(&mut cfg, &train_set, test_set.as_ref())?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &cfg, &model)?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    write_atomic(&dir.join(LOG_FILE), log.as_bytes())?;
    let mut summary = format!("trained {} epochs, seed {}\n", cfg.train.epochs, cfg.seed);
    if let Some(test) = &test_set {
        let report = render_evaluation(&evaluate(&model, test, cfg.train.threshold, None)?);
        write_atomic(&dir.join(REPORT_FILE), report.as_bytes())?;
        summary.push_str(&report);
    }
    emit(out, &summary)
}

fn eval_checkpoint(path: &Path, data: &Path, max_event_len: Option<usize>) -> Result<String> {
    let (cfg, model) = load_checkpoint(path)?;
    let data = Dataset::load(data)?;
    Ok(render_evaluation(&evaluate(
        &model,
        &data,
        cfg.train.threshold,
        max_event_len,
    )?))
}

pub fn render_evaluation(e: &Evaluation) -> String {
    match e {
        Evaluation::Parsing(r) => r.to_string(),
        Evaluation::Localization { accuracy } => format!("accuracy={accuracy:.6}\n"),
    }
}

fn cmd_ablate(cfg: ExperimentConfig, variants: &[String], out: &mut dyn Write) -> Result<()> {
    let mut names = vec!["full"];
    for v in variants {
        let c = canonical_variant(v)?;
        if !names.contains(&c) {
            names.push(c);
        }
    }
    let (train_set, test_set) = load_data(&cfg)?;
    let test = test_set.as_ref().unwrap_or(&train_set);
    let parsing = cfg.task() == Task::Parsing;
    let mut table = String::from(if parsing {
        "variant\tparams\tcma_triples\tcma_params\tsegment_type_av\tevent_type_av\tshort_event_type_av\n"
    } else {
        "variant\tparams\tcma_triples\tcma_params\taccuracy\n"
    });
    let mut cma = Vec::new();
    for name in &names {
        let mut c = cfg.clone();
        c.apply_variant(name)?;
        let (model, _) = fit(&mut c, &train_set, None)?;
        let scores = match evaluate(&model, test, c.train.threshold, None)? {
            Evaluation::Parsing(r) => {
                let short = evaluate(&model, test, c.train.threshold, Some(c.short_event_max))?;
                let Evaluation::Parsing(s) = short else {
                    unreachable!("same task")
                };
                format!(
                    "{:.4}\t{:.4}\t{:.4}",
                    r.segment_type_av, r.event_type_av, s.event_type_av
                )
            }
            Evaluation::Localization { accuracy } => format!("{accuracy:.2}"),
        };
        writeln!(
            table,
            "{name}\t{}\t{}\t{}\t{scores}",
            model.num_parameters(),
            model.pyramid.cma_triples(),
            model.cma_parameters()
        )
        .expect("writing to a String");
        cma.push((*name, model.cma_parameters()));
    }
    if let Some((_, separate)) = cma.iter().find(|(n, _)| *n == "no-share") {
        let shared = cma[0].1;
        writeln!(
            table,
            "\nsharing\tcma_params\nshared\t{shared}\nseparate\t{separate}"
        )
        .expect("writing to a String");
    }
    if let Some(dir) = Some(&cfg.output_dir).filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("ablation.tsv"), table.as_bytes())?;
    }
    emit(out, &table)
}

fn bits(row: impl Iterator<Item = bool>) -> String {
    row.map(|b| if b { '#' } else { '.' }).collect()
}

/// Text timeline and fusion-weight panel for one video.
pub fn render_text(video_id: &str, ins: &Inspection, pred: &LabelSet, gold: &LabelSet) -> String {
    let mut s = String::new();
    let n = ins.audio_weights.nrows();
    writeln!(s, "video={video_id}\nsegments={n}").expect("string");
    match (&pred.kind, &gold.kind) {
        (LabelKind::Parsing(p), LabelKind::Parsing(g)) => {
            let (ps, gs) = (p.segments().expect("predictions carry segments"), g.segments());
            for (track, pm, gm) in [
                ("audio", ps.audio().clone(), gs.map(|x| x.audio().clone())),
                ("visual", ps.visual().clone(), gs.map(|x| x.visual().clone())),
                ("audio_visual", ps.audio_visual(), gs.map(|x| x.audio_visual())),
            ] {
                for c in 0..pm.ncols() {
                    writeln!(s, "{track}\tclass {c}\tpred\t{}", bits(pm.column(c).iter().copied())).expect("string");
                    if let Some(gm) = &gm {
                        writeln!(s, "{track}\tclass {c}\tgold\t{}", bits(gm.column(c).iter().copied())).expect("string");
                    }
                }
            }
        }
        (LabelKind::Localization(p), LabelKind::Localization(g)) => {
            let show = |v: Option<&[usize]>| {
                v.map(|x| x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "))
                    .unwrap_or_default()
            };
            writeln!(s, "pred\t{}", show(p.segments())).expect("string");
            writeln!(s, "gold\t{}", show(g.segments())).expect("string");
        }
        _ => {}
    }
    for (name, w) in [("audio", &ins.audio_weights), ("visual", &ins.visual_weights)] {
        for t in 0..n {
            let vals: Vec<String> = w.row(t).iter().map(|x| format!("{x:.4}")).collect();
            writeln!(s, "fusion\t{name}\tsegment {t}\t{}", vals.join(" ")).expect("string");
        }
    }
    s
}

/// SVG with one timeline row per text row and a heat strip per fusion unit.
pub fn render_svg(text: &str, ins: &Inspection) -> String {
    const CELL: usize = 16;
    const LABEL: usize = 200;
    let timelines: Vec<(&str, &str)> = text
        .lines()
        .filter(|l| !l.starts_with("fusion") && l.contains('\t'))
        .filter_map(|l| l.rsplit_once('\t'))
        .collect();
    let n = ins.audio_weights.nrows();
    let units = ins.audio_weights.ncols();
    let rows = timelines.len() + 2 * units;
    let (w, h) = (LABEL + n * CELL + 10, rows * CELL + 10);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"monospace\" font-size=\"11\">\n"
    );
    for (r, (label, row)) in timelines.iter().enumerate() {
        let y = 5 + r * CELL;
        writeln!(s, "<text x=\"2\" y=\"{}\">{}</text>", y + 12, label.replace('\t', " ")).expect("string");
        for (t, ch) in row.split(' ').flat_map(|x| x.chars()).enumerate().take(n) {
            let fill = if ch == '#' { "#333" } else { "#eee" };
            writeln!(
                s,
                "<rect x=\"{}\" y=\"{y}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
                LABEL + t * CELL,
                CELL - 1,
                CELL - 1
            )
            .expect("string");
        }
    }
    for (m, (name, weights)) in [("audio", &ins.audio_weights), ("visual", &ins.visual_weights)]
        .iter()
        .enumerate()
    {
        for l in 0..units {
            let y = 5 + (timelines.len() + m * units + l) * CELL;
            writeln!(s, "<text x=\"2\" y=\"{}\">fusion {name} unit {l}</text>", y + 12).expect("string");
            for t in 0..n {
                writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{y}\" width=\"{}\" height=\"{}\" fill=\"#1f77b4\" fill-opacity=\"{:.4}\"/>",
                    LABEL + t * CELL,
                    CELL - 1,
                    CELL - 1,
                    weights[[t, l]]
                )
                .expect("string");
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn cmd_plot(checkpoint: &Path, data: &Path, ids: &[String], dir: &Path, out: &mut dyn Write) -> Result<()> {
    let (cfg, model) = load_checkpoint(checkpoint)?;
    let data = Dataset::load(data)?;
    let videos = ids
        .iter()
        .map(|id| data.get(id).ok_or_else(|| Error::UnknownVideo(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut preds = Vec::new();
    for v in videos {
        let ins = model.inspect(v)?;
        let pred = ins.prediction.to_labels(&v.id, cfg.train.threshold)?;
        let text = render_text(&v.id, &ins, &pred, &v.labels);
        write_atomic(&dir.join(format!("{}.txt", v.id)), text.as_bytes())?;
        write_atomic(&dir.join(format!("{}.svg", v.id)), render_svg(&text, &ins).as_bytes())?;
        preds.push(pred);
    }
    write_label_file(&dir.join("predictions.lbl"), &preds)?;
    emit(out, &format!("wrote {} plots to {}\n", preds.len(), dir.display()))
}
