//! The `alsfrs` command: one subcommand per stage plus `pipeline`.
//!
//! Stages communicate only through files under `output_dir`, so any stage can
//! be re-run from persisted artifacts. Every file is written to a temporary
//! name and renamed into place, and each stage directory receives a
//! `run_manifest.txt` with the config hash, seed and input digests.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::augment::{write_merge_decisions, MergeSummary};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::featurize::{read_feature_table, write_feature_table, write_relevance};
use crate::harness::{
    evaluate, write_importance, write_metrics, write_predictions, write_selection_report, Bundle,
    DataVariant, Datasets, QuestionModel,
};
use crate::ingest::{
    assemble_cohort, read_sensors, read_static, read_visits, write_sensors, write_static,
    write_visits, Cohort,
};
use crate::kv::Document;
use crate::pipeline;
use crate::sync::{cohort_followup_profile, read_windows, write_audit, write_followup_profile, write_windows};
use crate::synth::generate;
use crate::types::QuestionId;

#[derive(Parser, Debug)]
#[command(name = "alsfrs", version, about = "ALSFRS-R sub-score progression pipeline")]
pub struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; changes wall time only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Score raw predictions instead of rounded ones.
    #[arg(long, global = true)]
    raw_metrics: bool,
    #[arg(long, global = true, value_name = "DIR")]
    input_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Generate a synthetic cohort into the input directory.
    Synth,
    /// Validate the input tables and store normalized copies.
    Ingest,
    /// Align clinician visits with sensor coverage and cut windows.
    Align,
    /// Decide self-assessment merges and cut merged-timeline windows.
    Augment,
    /// Build feature tables.
    Extract,
    /// Report feature relevance on the training patients.
    SelectFeatures,
    /// Nested cross-validation, model selection and final fits.
    Train,
    /// Score the trained bundle on held-out patients.
    Evaluate,
    /// Apply the trained bundle to a feature table.
    Predict {
        #[arg(long, value_name = "FILE")]
        features: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Per-question feature importance of the trained bundle.
    Report,
    /// Run every stage in order.
    Pipeline,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Stage<'a> {
    name: &'static str,
    dir: PathBuf,
    cfg: &'a PipelineConfig,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

impl<'a> Stage<'a> {
    fn new(name: &'static str, dir: PathBuf, cfg: &'a PipelineConfig) -> Self {
        log::info!("stage {name} -> {}", dir.display());
        Stage {
            name,
            dir,
            cfg,
            inputs: vec![],
            outputs: vec![],
        }
    }

    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push((path.display().to_string(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    fn write(&mut self, file: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        write_atomic(&self.dir.join(file), &buf)?;
        self.outputs.push((file.to_string(), sha256_hex(&buf)));
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let mut d = Document::new();
        d.push("stage", self.name);
        d.push("version", env!("CARGO_PKG_VERSION"));
        d.push("config_sha256", self.cfg.hash());
        d.push("seed", self.cfg.seed);
        for (i, (p, h)) in self.inputs.iter().enumerate() {
            d.push(format!("input.{i}.path"), p);
            d.push(format!("input.{i}.sha256"), h);
        }
        for (i, (p, h)) in self.outputs.iter().enumerate() {
            d.push(format!("output.{i}.file"), p);
            d.push(format!("output.{i}.sha256"), h);
        }
        write_atomic(&self.dir.join("run_manifest.txt"), d.to_string().as_bytes())
    }
}

fn out_dir(cfg: &PipelineConfig, stage: &str) -> PathBuf {
    cfg.output_dir.join(stage)
}

fn read_cohort(stage: &mut Stage, dir: &Path) -> Result<Cohort> {
    let label = |f: &str| dir.join(f).display().to_string();
    let s = stage.read(&dir.join("static.csv"))?;
    let v = stage.read(&dir.join("visits.csv"))?;
    let x = stage.read(&dir.join("sensors.csv"))?;
    assemble_cohort(
        read_static(&s[..], &label("static.csv"))?,
        read_visits(&v[..], &label("visits.csv"))?,
        read_sensors(&x[..], &label("sensors.csv"))?,
        &label("visits.csv"),
        &label("sensors.csv"),
    )
}

fn load_datasets(stage: &mut Stage, cfg: &PipelineConfig) -> Result<Datasets> {
    let dir = out_dir(cfg, "extract");
    let mut ds = Datasets::default();
    let mut variants = cfg.data_variants();
    if !variants.contains(&DataVariant::Clinical) {
        variants.insert(0, DataVariant::Clinical);
    }
    for mode in cfg.feature_modes() {
        for &v in &variants {
            let path = dir.join(pipeline::feature_file_name((mode, v)));
            let bytes = stage.read(&path)?;
            let table = read_feature_table(&bytes[..])
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
            ds.tables.insert((mode, v), table);
        }
    }
    Ok(ds)
}

fn load_bundle(stage: &mut Stage, cfg: &PipelineConfig) -> Result<Bundle> {
    let dir = out_dir(cfg, "train");
    let mut bundle = Bundle::default();
    for q in QuestionId::all() {
        let path = dir.join(Bundle::file_name(q));
        let bytes = stage.read(&path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::InvalidInput(format!("{}: not UTF-8", path.display())))?;
        let (got, model) = QuestionModel::from_document(&Document::parse(&text)?)?;
        if got != q {
            return Err(Error::InvalidInput(format!("{} holds a model for {got}", path.display())));
        }
        bundle.models[q.slot()] = model;
    }
    Ok(bundle)
}

fn write_split(stage: &mut Stage, train: &[String], holdout: &[String]) -> Result<()> {
    stage.write("split.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let rows = train
            .iter()
            .map(|p| (p, "train"))
            .chain(holdout.iter().map(|p| (p, "holdout")));
        w.write_record(["patient_id", "set"]).map_err(crate::ingest::csv_err)?;
        for (p, s) in rows {
            w.write_record([p.as_str(), s]).map_err(crate::ingest::csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<split>", e))
    })
}

fn run_synth(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("synth", cfg.input_dir.clone(), cfg);
    let cohort = generate(&cfg.synth_config()?)?;
    let files = cohort.to_csv()?;
    st.write("static.csv", |b| Ok(b.extend_from_slice(&files.static_csv)))?;
    st.write("visits.csv", |b| Ok(b.extend_from_slice(&files.visits_csv)))?;
    st.write("sensors.csv", |b| Ok(b.extend_from_slice(&files.sensors_csv)))?;
    st.write("manifest.json", |b| Ok(b.extend_from_slice(cohort.manifest.to_json().as_bytes())))?;
    st.finish()
}

fn run_ingest(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("ingest", out_dir(cfg, "ingest"), cfg);
    let cohort = read_cohort(&mut st, &cfg.input_dir)?;
    st.write("static.csv", |b| write_static(b, &cohort.statics))?;
    st.write("visits.csv", |b| write_visits(b, &cohort.visits))?;
    st.write("sensors.csv", |b| write_sensors(b, &cohort.sensors))?;
    st.finish()
}

fn ingested(st: &mut Stage, cfg: &PipelineConfig) -> Result<Cohort> {
    read_cohort(st, &out_dir(cfg, "ingest"))
}

fn run_align(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("align", out_dir(cfg, "align"), cfg);
    let cohort = ingested(&mut st, cfg)?;
    let (aligned, windows) = pipeline::clinical_windows(&cohort, cfg);
    st.write("audit.csv", |b| write_audit(b, &aligned))?;
    st.write("followup_profile.csv", |b| {
        write_followup_profile(b, &cohort_followup_profile(&aligned))
    })?;
    st.write("windows.csv", |b| write_windows(b, &windows))?;
    st.finish()
}

fn run_augment(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("augment", out_dir(cfg, "augment"), cfg);
    let cohort = ingested(&mut st, cfg)?;
    let (decisions, windows) = pipeline::augmentation(&cohort, cfg)?;
    let summary = MergeSummary::of(&decisions);
    st.write("merge_decisions.csv", |b| write_merge_decisions(b, &decisions))?;
    st.write("windows.csv", |b| write_windows(b, &windows))?;
    st.write("summary.txt", |b| {
        let mut d = Document::new();
        d.push("pairs", decisions.len());
        d.push("testable", summary.testable);
        d.push("merged", summary.merged);
        d.push(
            "merge_rate",
            summary.merge_rate().map(|r| r.to_string()).unwrap_or_default(),
        );
        b.extend_from_slice(d.to_string().as_bytes());
        Ok(())
    })?;
    st.finish()
}

fn run_extract(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("extract", out_dir(cfg, "extract"), cfg);
    let cohort = ingested(&mut st, cfg)?;
    let path = out_dir(cfg, "align").join("windows.csv");
    let clinical = read_windows(&st.read(&path)?[..], &path.display().to_string())?;
    let augmented = if cfg.data_variants().contains(&DataVariant::Augmented) {
        let path = out_dir(cfg, "augment").join("windows.csv");
        Some(read_windows(&st.read(&path)?[..], &path.display().to_string())?)
    } else {
        None
    };
    let ds = pipeline::extract(&cohort, &clinical, augmented.as_deref(), cfg)?;
    for (&key, table) in &ds.tables {
        st.write(&pipeline::feature_file_name(key), |b| write_feature_table(b, table))?;
    }
    st.finish()
}

fn run_select(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("select-features", out_dir(cfg, "select"), cfg);
    let ds = load_datasets(&mut st, cfg)?;
    let (train, holdout) = pipeline::split(&ds, cfg)?;
    for (&key, table) in &ds.tables {
        let report = pipeline::relevance_report(table, &train, cfg);
        let name = format!("relevance_{}_{}.csv", key.0.as_str(), key.1.as_str());
        st.write(&name, |b| write_relevance(b, &report))?;
    }
    write_split(&mut st, &train, &holdout)?;
    st.finish()
}

fn run_train(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("train", out_dir(cfg, "train"), cfg);
    let ds = load_datasets(&mut st, cfg)?;
    let (train, holdout) = pipeline::split(&ds, cfg)?;
    let (report, bundle) = pipeline::train(&ds, &train, cfg)?;
    for q in QuestionId::all() {
        let doc = bundle.get(q).to_document(q);
        st.write(&Bundle::file_name(q), |b| Ok(b.extend_from_slice(doc.to_string().as_bytes())))?;
    }
    st.write("selection_report.csv", |b| write_selection_report(b, &report))?;
    write_split(&mut st, &train, &holdout)?;
    st.finish()
}

fn run_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("evaluate", out_dir(cfg, "evaluate"), cfg);
    let bundle = load_bundle(&mut st, cfg)?;
    let ds = load_datasets(&mut st, cfg)?;
    let (_, holdout) = pipeline::split(&ds, cfg)?;
    let eval = evaluate(&bundle, &ds, &holdout, cfg.metric_mode)?;
    st.write("metrics.csv", |b| write_metrics(b, &eval))?;
    st.write("predictions.csv", |b| write_predictions(b, &eval))?;
    st.finish()
}

fn run_predict(cfg: &PipelineConfig, features: &Path, out: Option<&Path>) -> Result<()> {
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir(cfg, "predict").join("predictions.csv"));
    let dir = out.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut st = Stage::new("predict", dir, cfg);
    let bundle = load_bundle(&mut st, cfg)?;
    let bytes = st.read(features)?;
    let table = read_feature_table(&bytes[..])
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", features.display())))?;
    let patients: Vec<String> = {
        let mut p: Vec<String> = table.rows.iter().map(|r| r.patient_id.clone()).collect();
        p.sort();
        p.dedup();
        p
    };
    let mut ds = Datasets::default();
    for mode in cfg.feature_modes() {
        ds.tables.insert((mode, DataVariant::Clinical), table.clone());
    }
    let eval = evaluate(&bundle, &ds, &patients, cfg.metric_mode)?;
    let name = out
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("predictions.csv")
        .to_string();
    st.write(&name, |b| write_predictions(b, &eval))?;
    st.finish()
}

fn run_report(cfg: &PipelineConfig) -> Result<()> {
    let mut st = Stage::new("report", out_dir(cfg, "report"), cfg);
    let bundle = load_bundle(&mut st, cfg)?;
    st.write("importance.csv", |b| write_importance(b, &bundle))?;
    st.finish()
}

fn run_pipeline(cfg: &PipelineConfig) -> Result<()> {
    if cfg.synth.enabled {
        run_synth(cfg)?;
    }
    run_ingest(cfg)?;
    run_align(cfg)?;
    run_augment(cfg)?;
    run_extract(cfg)?;
    run_select(cfg)?;
    run_train(cfg)?;
    run_evaluate(cfg)?;
    run_report(cfg)
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut doc = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Document::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Document::new(),
    };
    for pair in &cli.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        doc.set(k.trim(), v.trim());
    }
    if let Some(s) = cli.seed {
        doc.set("seed", s);
    }
    if cli.raw_metrics {
        doc.set("metric_mode", "raw");
    }
    if let Some(p) = &cli.input_dir {
        doc.set("input_dir", p.display());
    }
    if let Some(p) = &cli.output_dir {
        doc.set("output_dir", p.display());
    }
    PipelineConfig::from_document(&doc)
}

fn dispatch(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    match &cli.command {
        Command::Synth => run_synth(cfg),
        Command::Ingest => run_ingest(cfg),
        Command::Align => run_align(cfg),
        Command::Augment => run_augment(cfg),
        Command::Extract => run_extract(cfg),
        Command::SelectFeatures => run_select(cfg),
        Command::Train => run_train(cfg),
        Command::Evaluate => run_evaluate(cfg),
        Command::Predict { features, out } => run_predict(cfg, features, out.as_deref()),
        Command::Report => run_report(cfg),
        Command::Pipeline => run_pipeline(cfg),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, &cfg))
}

/// One machine-parseable line describing a failure.
pub fn error_line(e: &Error) -> String {
    let reason = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error code={} kind={} reason=\"{reason}\"", e.exit_code(), e.kind())
}

/// Runs the command line `args` (program name first) and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.kind().to_string();
            eprintln!("error code=1 kind=usage reason=\"{msg}\"");
            eprintln!("{}", e.render());
            return 1;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}
