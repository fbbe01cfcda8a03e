//! The `seatrack` command line: one subcommand per pipeline stage, each
//! writing its outputs and a [`RunManifest`] into `--out`.
//!
//! Failures print a single `error kind=<tag> msg=<text>` line to stderr and
//! exit nonzero (2 for usage errors, 1 otherwise).

pub mod manifest;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ais::{self, PatternSpec, SchemaConfig, Trajectory};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, evaluate, Report, ReportEntry, ReportFormat};
use crate::geo::GeoPoint;
use crate::models::{AnyModel, ModelKind, ModelSpec, Trainable};
use crate::nn::{AdamConfig, Checkpoint, Matrix};
use crate::seq2seq::Aggregation;
use crate::synth::{self, SynthConfig};
use crate::training::{self, CrossValConfig, TrainConfig};
use crate::windowing::{self, kfold_split, segment_all, DEFAULT_VAL_FRACTION};

pub use manifest::{RunManifest, MANIFEST_FILE};

pub const TRAJECTORIES_FILE: &str = "trajectories.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.txt";

#[derive(Parser, Debug)]
#[command(
    name = "seatrack",
    version,
    about = "Vessel trajectory prediction from AIS tracks",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse an AIS table into labeled, resampled trajectories.
    Prepare(PrepareArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a trajectory file or one of its folds.
    Evaluate(EvaluateArgs),
    /// K-fold study over a grid of models.
    Crossval(CrossvalArgs),
    /// Forecast from one input sequence.
    Predict(PredictArgs),
    /// Generate the synthetic branching two-route scenario.
    Synth(SynthArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_agg(s: &str) -> std::result::Result<Aggregation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug, Clone)]
pub struct PrepareArgs {
    /// AIS table (CSV or other delimiter, see --schema).
    #[arg(long)]
    pub input: PathBuf,
    /// key=value column mapping; defaults to the Danish Maritime Authority layout.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Origin and destination polygons; first block is the origin.
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    #[arg(long, default_value_t = 15.0)]
    pub delta_min: f64,
    #[arg(long, default_value_t = ais::DEFAULT_GAP_SEC)]
    pub gap_sec: f64,
    /// Keep only reports with this ship type.
    #[arg(long)]
    pub ship_type: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Input length in steps.
    #[arg(long, default_value_t = 12)]
    pub ell: usize,
    /// Forecast horizon in steps.
    #[arg(long, default_value_t = 12)]
    pub h: usize,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 3000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 200)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ArchArgs {
    /// LSTM hidden size.
    #[arg(long, default_value_t = 64)]
    pub q: usize,
    /// MLP hidden width.
    #[arg(long, default_value_t = crate::baselines::DEFAULT_MLP_HIDDEN)]
    pub hidden: usize,
    /// Number of motion patterns; inferred from the labels when omitted.
    #[arg(long)]
    pub patterns: Option<usize>,
    /// Feed ground-truth previous states to the decoder while training.
    #[arg(long)]
    pub teacher_forcing: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Trajectory file written by `prepare`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    #[arg(long, value_parser = parse_agg)]
    pub agg: Option<Aggregation>,
    #[arg(long)]
    pub labeled: bool,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Evaluate only the trajectories of this fold (split with --folds, --seed).
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Width of the distance bins in mae_vs_distance.dat.
    #[arg(long, default_value_t = 5.0)]
    pub bin_nmi: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated model kinds.
    #[arg(long, value_delimiter = ',', default_value = "linear,mlp,encdec", value_parser = parse_kind)]
    pub model: Vec<ModelKind>,
    /// Comma-separated aggregations, applied to encdec.
    #[arg(long, value_delimiter = ',', default_value = "attn", value_parser = parse_agg)]
    pub agg: Vec<Aggregation>,
    /// Also run the labeled variant of every model.
    #[arg(long)]
    pub labeled: bool,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Comma-separated subset of folds to run.
    #[arg(long, value_delimiter = ',')]
    pub only_folds: Vec<usize>,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 5.0)]
    pub bin_nmi: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `lat lon` per line, oldest first, exactly ell rows.
    #[arg(long)]
    pub input: PathBuf,
    /// Motion pattern index for labeled models.
    #[arg(long)]
    pub label: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Vessels per route.
    #[arg(long, default_value_t = 60)]
    pub per_route: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub speed_min: f64,
    #[arg(long, default_value_t = 14.0)]
    pub speed_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub cross_track_sd: f64,
    /// Crossing vessels that match no pattern.
    #[arg(long, default_value_t = 4)]
    pub decoys: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process entry point; returns the exit code.
pub fn main_entry() -> i32 {
    let argv: Vec<String> = std::env::args_os()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let stdout = std::io::stdout();
    match run(&argv, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

/// The one-line form of an error printed on failure.
pub fn error_line(e: &Error) -> String {
    let msg: Vec<String> = e.to_string().lines().map(|l| l.trim().to_string()).collect();
    format!("error kind={} msg={}", e.kind(), msg.join(" "))
}

/// Parses `argv` (without the program name) and runs the command.
pub fn run<W: Write>(argv: &[String], stdout: &mut W) -> Result<()> {
    let full = std::iter::once("seatrack".to_string()).chain(argv.iter().cloned());
    let cli = match Cli::try_parse_from(full) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(stdout, "{e}").map_err(stdout_err)?;
                return Ok(());
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return Err(Error::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a, argv, stdout),
        Command::Train(a) => cmd_train(a, argv, stdout),
        Command::Evaluate(a) => cmd_evaluate(a, argv, stdout),
        Command::Crossval(a) => cmd_crossval(a, argv, stdout),
        Command::Predict(a) => cmd_predict(a, argv, stdout),
        Command::Synth(a) => cmd_synth(a, argv, stdout),
        Command::Replay(a) => cmd_replay(a, stdout),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn make_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("--{name} must be positive, got {v}")))
    }
}

fn window_check(w: &WindowArgs) -> Result<()> {
    if w.ell == 0 || w.h == 0 {
        return Err(Error::InvalidInput(format!(
            "--ell and --h must be at least 1 (got {}, {})",
            w.ell, w.h
        )));
    }
    Ok(())
}

fn train_config(o: &OptimArgs) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        max_epochs: o.epochs,
        batch_size: o.batch,
        adam: AdamConfig::with_lr(o.lr),
        patience: o.patience,
        seed: o.seed,
        ..Default::default()
    };
    cfg.adam.validate()?;
    cfg.validate()?;
    Ok(cfg)
}

/// Pattern count from `--patterns` or the largest label, checked against
/// every label present.
fn resolve_patterns(trajs: &[Trajectory], given: Option<usize>) -> Result<usize> {
    let inferred = trajs.iter().filter_map(|t| t.label).max().map_or(0, |m| m + 1);
    match given {
        Some(p) if p < inferred => Err(Error::ConfigMismatch(format!(
            "--patterns {p} but the data contains label {}",
            inferred - 1
        ))),
        Some(p) => Ok(p),
        None => Ok(inferred),
    }
}

fn require_labels(trajs: &[Trajectory]) -> Result<()> {
    if let Some(t) = trajs.iter().find(|t| t.label.is_none()) {
        return Err(Error::ConfigMismatch(format!(
            "labeled model requested but trajectory {} has no label",
            t.id
        )));
    }
    Ok(())
}

fn pick<'a>(trajs: &'a [Trajectory], ids: &[u64]) -> Vec<&'a Trajectory> {
    let set: BTreeSet<u64> = ids.iter().copied().collect();
    trajs.iter().filter(|t| set.contains(&t.id)).collect()
}

/// Step size of resampled trajectories in minutes, from the first pair of
/// consecutive timestamps.
fn infer_delta_min(trajs: &[&Trajectory]) -> f64 {
    trajs
        .iter()
        .find(|t| t.len() >= 2)
        .map(|t| (t.times[1] - t.times[0]) / 60.0)
        .filter(|d| *d > 0.0)
        .unwrap_or(15.0)
}

fn write_reports(dir: &Path, report: &Report) -> Result<()> {
    for f in ReportFormat::ALL {
        write_file(&dir.join(f.file_name()), emit_report(report, f)?)?;
    }
    Ok(())
}

fn record_window_optim(m: &mut RunManifest, w: &WindowArgs, o: &OptimArgs) {
    m.set("ell", w.ell);
    m.set("h", w.h);
    m.set("epochs", o.epochs);
    m.set("batch", o.batch);
    m.set("lr", o.lr);
    m.set("patience", o.patience);
    m.seed = Some(o.seed);
}

fn cmd_prepare<W: Write>(a: &PrepareArgs, argv: &[String], stdout: &mut W) -> Result<()> {
    positive("delta-min", a.delta_min)?;
    positive("gap-sec", a.gap_sec)?;
    let schema = match &a.schema {
        Some(p) => SchemaConfig::from_kv(&read_text(p)?)?,
        None => SchemaConfig::default(),
    };
    let patterns = a
        .polygons
        .as_ref()
        .map(|p| PatternSpec::parse(&read_text(p)?, &p.display().to_string()))
        .transpose()?;
    let bytes = std::fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let parsed = if bytes.iter().all(u8::is_ascii_whitespace) {
        eprintln!("warning: {} is empty", a.input.display());
        ais::ParseOutcome::default()
    } else {
        ais::parse_records(bytes.as_slice(), &schema)?
    };
    let (trajs, stats) = ais::prepare(
        &parsed.records,
        a.gap_sec,
        a.ship_type.as_deref(),
        patterns.as_ref(),
        a.delta_min * 60.0,
    )?;
    if trajs.is_empty() {
        eprintln!("warning: no trajectories survived preparation");
    }

    make_out_dir(&a.out)?;
    ais::save_trajectories(&a.out.join(TRAJECTORIES_FILE), &trajs)?;
    let mut s = format!(
        "records={}\ndropped_rows={}\ntracks={}\nunmatched={}\ntoo_short={}\ntrajectories={}\n",
        stats.records, parsed.dropped, stats.tracks, stats.unmatched, stats.too_short, stats.kept
    );
    if let Some(spec) = &patterns {
        for (j, n) in stats.per_pattern.iter().enumerate() {
            s.push_str(&format!("pattern.{j}={} {n}\n", spec.pattern_name(j)));
        }
    }
    write_file(&a.out.join("prepare_stats.txt"), &s)?;

    let mut m = RunManifest::new("prepare", argv);
    m.add_input(&a.input)?;
    if let Some(p) = &a.schema {
        m.add_input(p)?;
    }
    if let Some(p) = &a.polygons {
        m.add_input(p)?;
    }
    m.set("delta_min", a.delta_min);
    m.set("gap_sec", a.gap_sec);
    m.set("ship_type", a.ship_type.as_deref().unwrap_or(""));
    for line in schema.to_kv().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.set(&format!("schema.{k}"), v);
        }
    }
    m.save(&a.out)?;

    writeln!(
        stdout,
        "{} records ({} dropped), {} tracks, {} trajectories kept",
        stats.records, parsed.dropped, stats.tracks, stats.kept
    )
    .map_err(stdout_err)?;
    if let Some(spec) = &patterns {
        for (j, n) in stats.per_pattern.iter().enumerate() {
            writeln!(stdout, "pattern {}: {n}", spec.pattern_name(j)).map_err(stdout_err)?;
        }
        writeln!(stdout, "unmatched: {}", stats.unmatched).map_err(stdout_err)?;
    }
    Ok(())
}

fn cmd_train<W: Write>(a: &TrainArgs, argv: &[String], stdout: &mut W) -> Result<()> {
    window_check(&a.window)?;
    let tcfg = train_config(&a.optim)?;
    if a.model != ModelKind::EncDec && (a.agg.is_some() || a.arch.teacher_forcing) {
        return Err(Error::ConfigMismatch(format!(
            "--agg and --teacher-forcing apply to encdec, not {}",
            a.model
        )));
    }
    let trajs = ais::load_trajectories(&a.input)?;
    let patterns = resolve_patterns(&trajs, a.arch.patterns)?;
    if a.labeled {
        require_labels(&trajs)?;
    }
    let spec = ModelSpec {
        ell: a.window.ell,
        h: a.window.h,
        q: a.arch.q,
        hidden: a.arch.hidden,
        teacher_forcing: a.arch.teacher_forcing,
        ..ModelSpec::new(a.model, a.labeled, patterns).with_aggregation(a.agg.unwrap_or(Aggregation::Attn))
    };
    let ids: Vec<u64> = trajs.iter().map(|t| t.id).collect();
    let (tr_ids, va_ids) = windowing::validation_split(&ids, DEFAULT_VAL_FRACTION, tcfg.seed)?;
    let (tr, va) = (pick(&trajs, &tr_ids), pick(&trajs, &va_ids));
    let st = training::standardizer_for(&tr)?;
    let train_s = segment_all(tr.iter().copied(), spec.ell, spec.h, &st, patterns)?;
    let val_s = segment_all(va.iter().copied(), spec.ell, spec.h, &st, patterns)?;
    if train_s.is_empty() || val_s.is_empty() {
        return Err(Error::TooShort(format!(
            "no {} windows of length {} (train {}, validation {})",
            if train_s.is_empty() { "training" } else { "validation" },
            spec.ell + spec.h,
            train_s.len(),
            val_s.len()
        )));
    }
    let mut model = spec.build(tcfg.seed)?;
    let rep = training::train(&mut model, &train_s, &val_s, &tcfg)?;

    make_out_dir(&a.out)?;
    model
        .to_checkpoint(&spec, &st, tcfg.adam)
        .save(&a.out.join(CHECKPOINT_FILE))?;
    write_file(&a.out.join("train_report.txt"), rep.to_text())?;
    let mut m = RunManifest::new("train", argv);
    m.add_input(&a.input)?;
    for (k, v) in spec.to_meta() {
        m.set(&k, v);
    }
    record_window_optim(&mut m, &a.window, &a.optim);
    m.set("val_fraction", DEFAULT_VAL_FRACTION);
    m.set("train_windows", train_s.len());
    m.set("val_windows", val_s.len());
    m.save(&a.out)?;
    writeln!(
        stdout,
        "{}: {} epochs, best epoch {}, validation loss {:.6} (initial {:.6})",
        spec.display_name(),
        rep.epochs_run(),
        rep.best_epoch,
        rep.best_val_loss,
        rep.initial_val_loss
    )
    .map_err(stdout_err)
}

fn cmd_evaluate<W: Write>(a: &EvaluateArgs, argv: &[String], stdout: &mut W) -> Result<()> {
    positive("bin-nmi", a.bin_nmi)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (spec, st, model) = AnyModel::from_checkpoint(&ck)?;
    let trajs = ais::load_trajectories(&a.input)?;
    let selected: Vec<&Trajectory> = match a.fold {
        Some(k) => {
            if k >= a.folds {
                return Err(Error::Index {
                    index: k,
                    len: a.folds,
                });
            }
            let ids: Vec<u64> = trajs.iter().map(|t| t.id).collect();
            pick(&trajs, &kfold_split(&ids, a.folds, a.seed)?.fold_members(k))
        }
        None => trajs.iter().collect(),
    };
    if spec.labeled {
        let owned: Vec<Trajectory> = selected.iter().map(|t| (*t).clone()).collect();
        require_labels(&owned)?;
    }
    if let Some(l) = selected.iter().filter_map(|t| t.label).find(|l| *l >= spec.patterns) {
        return Err(Error::ConfigMismatch(format!(
            "label {l} exceeds the model's {} patterns",
            spec.patterns
        )));
    }
    let samples = segment_all(selected.iter().copied(), spec.ell, spec.h, &st, spec.patterns)?;
    let name = spec.display_name();
    let eval = evaluate(&model, &samples, &st, &name, a.fold)?;
    let delta_min = infer_delta_min(&selected);
    let owned: Vec<Trajectory> = selected.iter().map(|t| (*t).clone()).collect();
    let report = Report {
        entries: vec![ReportEntry {
            base: name.split(" (").next().unwrap_or_default().to_string(),
            labeled: spec.labeled,
            folds: vec![eval.clone()],
            failures: Vec::new(),
        }],
        delta_min,
        columns: Report::default_columns(spec.h, delta_min),
        distance_origin: training::start_centroid(&owned),
        bin_nmi: a.bin_nmi,
    };

    make_out_dir(&a.out)?;
    write_reports(&a.out, &report)?;
    let mut m = RunManifest::new("evaluate", argv);
    m.add_input(&a.checkpoint)?;
    m.add_input(&a.input)?;
    m.set("folds", a.folds);
    m.set("fold", a.fold.map_or("all".to_string(), |k| k.to_string()));
    m.set("bin_nmi", a.bin_nmi);
    m.set("delta_min", delta_min);
    m.seed = Some(a.seed);
    m.save(&a.out)?;
    writeln!(
        stdout,
        "{name}: {} samples, final-horizon MAE {:.4} nmi",
        eval.n_samples,
        eval.mae_per_horizon.last().copied().unwrap_or(f64::NAN)
    )
    .map_err(stdout_err)
}

/// The model grid of a cross-validation run, unlabeled before labeled.
pub fn model_grid(
    kinds: &[ModelKind],
    aggs: &[Aggregation],
    with_labeled: bool,
    patterns: usize,
) -> Vec<ModelSpec> {
    let mut seen = Vec::new();
    let mut specs = Vec::new();
    for k in kinds {
        if seen.contains(k) {
            continue;
        }
        seen.push(*k);
        let variants: Vec<Option<Aggregation>> = if *k == ModelKind::EncDec {
            let mut a: Vec<Aggregation> = Vec::new();
            for g in aggs {
                if !a.contains(g) {
                    a.push(*g);
                }
            }
            a.into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        for v in variants {
            for labeled in [false, true] {
                if labeled && !with_labeled {
                    continue;
                }
                let s = ModelSpec::new(*k, labeled, patterns);
                specs.push(match v {
                    Some(g) => s.with_aggregation(g),
                    None => s,
                });
            }
        }
    }
    specs
}

fn cmd_crossval<W: Write>(a: &CrossvalArgs, argv: &[String], stdout: &mut W) -> Result<()> {
    window_check(&a.window)?;
    positive("bin-nmi", a.bin_nmi)?;
    let tcfg = train_config(&a.optim)?;
    if a.arch.teacher_forcing && !a.model.contains(&ModelKind::EncDec) {
        return Err(Error::ConfigMismatch(
            "--teacher-forcing needs encdec in --model".into(),
        ));
    }
    let trajs = ais::load_trajectories(&a.input)?;
    let patterns = resolve_patterns(&trajs, a.arch.patterns)?;
    if a.labeled {
        require_labels(&trajs)?;
    }
    let specs: Vec<ModelSpec> = model_grid(&a.model, &a.agg, a.labeled, patterns)
        .into_iter()
        .map(|s| ModelSpec {
            ell: a.window.ell,
            h: a.window.h,
            q: a.arch.q,
            hidden: a.arch.hidden,
            teacher_forcing: a.arch.teacher_forcing && s.kind == ModelKind::EncDec,
            ..s
        })
        .collect();
    let mut cfg = CrossValConfig::new(a.folds, a.window.ell, a.window.h, patterns, tcfg);
    if !a.only_folds.is_empty() {
        cfg.only_folds = Some(a.only_folds.clone());
    }
    let res = training::cross_validate(&trajs, &specs, &cfg)?;
    let all: Vec<&Trajectory> = trajs.iter().collect();
    let delta_min = infer_delta_min(&all);
    let report = Report {
        entries: res.entries.clone(),
        delta_min,
        columns: Report::default_columns(a.window.h, delta_min),
        distance_origin: res.start_centroid,
        bin_nmi: a.bin_nmi,
    };

    make_out_dir(&a.out)?;
    write_reports(&a.out, &report)?;
    let mut runs = String::new();
    for r in &res.runs {
        let t = &r.train_report;
        runs.push_str(&format!(
            "model={} fold={} epochs={} best_epoch={} best_val_loss={:.9} initial_val_loss={:.9} stopped_early={} test_samples={}\n",
            specs[r.spec_index].display_name().replace(' ', "_"),
            r.fold,
            t.epochs_run(),
            t.best_epoch,
            t.best_val_loss,
            t.initial_val_loss,
            t.stopped_early,
            r.eval.n_samples
        ));
    }
    write_file(&a.out.join("runs.txt"), &runs)?;
    let mut m = RunManifest::new("crossval", argv);
    m.add_input(&a.input)?;
    m.set("models", specs.iter().map(|s| s.display_name()).collect::<Vec<_>>().join(";"));
    m.set("folds", a.folds);
    m.set("only_folds", a.only_folds.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","));
    m.set("patterns", patterns);
    m.set("q", a.arch.q);
    m.set("hidden", a.arch.hidden);
    m.set("teacher_forcing", a.arch.teacher_forcing);
    record_window_optim(&mut m, &a.window, &a.optim);
    m.set("val_fraction", cfg.val_fraction);
    m.set("bin_nmi", a.bin_nmi);
    m.save(&a.out)?;

    stdout
        .write_all(&emit_report(&report, ReportFormat::Table)?)
        .map_err(stdout_err)?;
    if res.runs.is_empty() {
        let why: Vec<String> = res
            .entries
            .iter()
            .flat_map(|e| e.failures.iter().map(|(_, m)| m.clone()))
            .collect();
        return Err(Error::InvalidInput(format!("every run failed: {}", why.join("; "))));
    }
    Ok(())
}

/// Reads `lat lon` (or `lat,lon`) rows, skipping blanks and `#` comments.
pub fn parse_sequence(text: &str, source: &str) -> Result<Vec<GeoPoint>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let [lat, lon] = f[..] else {
            return Err(Error::parse(source, i + 1, "expected `lat lon`"));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::parse(source, i + 1, e.to_string()))
        };
        let p = GeoPoint::new(num(lat)?, num(lon)?)
            .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

fn cmd_predict<W: Write>(a: &PredictArgs, argv: &[String], stdout: &mut W) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (spec, st, model) = AnyModel::from_checkpoint(&ck)?;
    let seq = parse_sequence(&read_text(&a.input)?, &a.input.display().to_string())?;
    if seq.len() != spec.ell {
        return Err(Error::InvalidInput(format!(
            "model expects {} input rows, {} has {}",
            spec.ell,
            a.input.display(),
            seq.len()
        )));
    }
    let psi = match (spec.labeled, a.label) {
        (true, Some(l)) => Some(windowing::one_hot(l, spec.patterns)?),
        (true, None) => {
            return Err(Error::ConfigMismatch(
                "labeled model needs --label".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::ConfigMismatch(
                "--label given for an unlabeled model".into(),
            ))
        }
        (false, None) => None,
    };
    let flat: Vec<f64> = seq.iter().flat_map(|p| st.apply(*p)).collect();
    let x = Matrix::from_vec(spec.ell, spec.d, flat)?;
    let y = model.predict(&x, psi.as_deref())?;
    let mut text = String::new();
    for r in 0..y.rows() {
        let p = st.invert([y.get(r, 0), y.get(r, 1)]);
        text.push_str(&format!("{:.6} {:.6}\n", p.lat, p.lon));
    }

    make_out_dir(&a.out)?;
    write_file(&a.out.join(PREDICTIONS_FILE), &text)?;
    let mut m = RunManifest::new("predict", argv);
    m.add_input(&a.checkpoint)?;
    m.add_input(&a.input)?;
    m.set("label", a.label.map_or("-".to_string(), |l| l.to_string()));
    m.set("ell", spec.ell);
    m.set("h", spec.h);
    m.save(&a.out)?;
    stdout.write_all(text.as_bytes()).map_err(stdout_err)
}

fn cmd_synth<W: Write>(a: &SynthArgs, argv: &[String], stdout: &mut W) -> Result<()> {
    let cfg = SynthConfig {
        per_route: a.per_route,
        seed: a.seed,
        speed_kn: (a.speed_min, a.speed_max),
        cross_track_sd_nmi: a.cross_track_sd,
        decoys: a.decoys,
        ..Default::default()
    };
    let ds = synth::generate(&cfg)?;
    make_out_dir(&a.out)?;
    let csv_path = a.out.join("ais.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    synth::write_dma_csv(std::io::BufWriter::new(file), &ds.records)?;
    write_file(&a.out.join("polygons.txt"), ds.patterns.to_text())?;
    let mut m = RunManifest::new("synth", argv);
    m.set("per_route", cfg.per_route);
    m.set("speed_kn", format!("{},{}", cfg.speed_kn.0, cfg.speed_kn.1));
    m.set("cross_track_sd_nmi", cfg.cross_track_sd_nmi);
    m.set("jitter_nmi", cfg.jitter_nmi);
    m.set(
        "report_interval_sec",
        format!("{},{}", cfg.report_interval_sec.0, cfg.report_interval_sec.1),
    );
    m.set("decoys", cfg.decoys);
    m.seed = Some(cfg.seed);
    m.save(&a.out)?;
    writeln!(
        stdout,
        "{} reports from {} vessels ({} per route, {} decoys)",
        ds.records.len(),
        ds.truth.len(),
        cfg.per_route,
        cfg.decoys
    )
    .map_err(stdout_err)
}

/// `argv` with the value of `--out` replaced.
fn with_out(argv: &[String], out: &Path) -> Result<Vec<String>> {
    let mut v = argv.to_vec();
    let new = out.display().to_string();
    let mut found = false;
    let mut i = 0;
    while i < v.len() {
        if v[i] == "--out" && i + 1 < v.len() {
            v[i + 1] = new.clone();
            found = true;
            i += 1;
        } else if v[i].starts_with("--out=") {
            v[i] = format!("--out={new}");
            found = true;
        }
        i += 1;
    }
    if !found {
        return Err(Error::InvalidInput("recorded command has no --out".into()));
    }
    Ok(v)
}

fn cmd_replay<W: Write>(a: &ReplayArgs, stdout: &mut W) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    if m.argv.first().map(String::as_str) == Some("replay") {
        return Err(Error::InvalidInput("cannot replay a replay".into()));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest written by version {}, running {}",
            m.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    m.verify_inputs()?;
    let argv = match &a.out {
        Some(o) => with_out(&m.argv, o)?,
        None => m.argv.clone(),
    };
    run(&argv, stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let e = run(&args("train --input x --model mlp --out o --bogus 1"), &mut Vec::new()).unwrap_err();
        assert_eq!(e.kind(), "usage");
        assert!(!error_line(&e).contains('\n'));
    }

    #[test]
    fn alternate_spellings_rejected() {
        for bad in ["--deltamin", "--delta_min", "--epoch"] {
            let e = run(&args(&format!("prepare --input x --out o {bad} 5")), &mut Vec::new())
                .unwrap_err();
            assert_eq!(e.kind(), "usage", "{bad}");
        }
    }

    #[test]
    fn help_is_not_an_error() {
        let mut out = Vec::new();
        run(&args("--help"), &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("crossval"));
    }

    #[test]
    fn agg_on_baseline_rejected_before_reading_input() {
        let e = run(
            &args("train --input /nonexistent --model mlp --agg max --out o"),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert_eq!(e.kind(), "config_mismatch");
    }

    #[test]
    fn patience_contradiction_rejected() {
        let e = run(
            &args("train --input /nonexistent --model mlp --epochs 10 --patience 10 --out o"),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert_eq!(e.kind(), "invalid_input");
    }

    #[test]
    fn grid_order_and_dedup() {
        let g = model_grid(
            &[ModelKind::Linear, ModelKind::EncDec, ModelKind::Linear],
            &[Aggregation::Max, Aggregation::Attn, Aggregation::Max],
            true,
            2,
        );
        let names: Vec<String> = g.iter().map(|s| s.display_name()).collect();
        assert_eq!(
            names,
            [
                "Linear (unlabeled)",
                "Linear (labeled)",
                "EncDec-MAX (unlabeled)",
                "EncDec-MAX (labeled)",
                "EncDec-ATTN (unlabeled)",
                "EncDec-ATTN (labeled)"
            ]
        );
        assert_eq!(model_grid(&[ModelKind::Mlp], &[Aggregation::Attn], false, 0).len(), 1);
    }

    #[test]
    fn sequence_parsing() {
        let s = parse_sequence("# x\n55.1 10.2\n\n55.2,10.3\n", "s").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1], GeoPoint { lat: 55.2, lon: 10.3 });
        assert_eq!(parse_sequence("55.1\n", "s").unwrap_err().kind(), "parse");
        assert_eq!(parse_sequence("95 0\n", "s").unwrap_err().kind(), "parse");
    }

    #[test]
    fn out_substitution() {
        let v = with_out(&args("crossval --out a --folds 2"), Path::new("b")).unwrap();
        assert_eq!(v, args("crossval --out b --folds 2"));
        let v = with_out(&args("synth --out=a"), Path::new("b")).unwrap();
        assert_eq!(v, args("synth --out=b"));
        assert!(with_out(&args("synth"), Path::new("b")).is_err());
    }
}
