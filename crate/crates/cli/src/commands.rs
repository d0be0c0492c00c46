use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hetsed::config::{format_pipeline_config, load_pipeline_config, to_toml};
use hetsed::eval::{
    format_report_csv, format_report_markdown, mpauc, psds1, Detector, MetricReport, ReportRow,
    SebbDetector, ThresholdDetector,
};
use hetsed::ingest::{format_events_tsv, generate_synthetic_corpus, EvalKind, SyntheticCorpus};
use hetsed::model::{load_checkpoint, save_checkpoint, ModelConfig, ToyModel};
use hetsed::postproc::{format_sebb_tsv, parse_sebb_tsv, tune_sebb};
use hetsed::pseudo::PseudoStore;
use hetsed::train::{
    arm_slug, base_model_config, build_pseudo_store, initial_model, report_from_dir, run_ablation,
    run_pipeline, run_stage, system_posteriors, write_pipeline_outputs, AblationFlag, PipelineConfig,
};
use hetsed::types::{EventList, Stage};
use hetsed::{Error, Result};

use crate::{Cli, Command, Common, OUTPUT_ROOT_ENV};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes to `path`, or to stdout when `None`.
fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => std::io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn default_out(command: &str) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(command)
}

struct Setup {
    cfg: PipelineConfig,
    corpus: SyntheticCorpus,
}

/// Loads and resolves the experiment config, applies overrides, logs it and
/// regenerates the corpus.
fn setup(common: &Common, jobs: usize) -> Result<Setup> {
    let mut cfg = match &common.config {
        Some(path) => load_pipeline_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.corpus.seed = seed;
    }
    cfg.jobs = jobs;
    let cfg = cfg.resolved()?;
    log::info!("seed {}", cfg.seed);
    log::info!("resolved configuration:\n{}", format_pipeline_config(&cfg)?);
    let corpus = generate_synthetic_corpus(&cfg.corpus)?;
    Ok(Setup { cfg, corpus })
}

fn load_model(path: &Path) -> Result<ToyModel> {
    let (config, params) = load_checkpoint::<ModelConfig>(path)?;
    ToyModel::from_params(config, params)
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<ToyModel>> {
    paths.iter().map(|p| load_model(p)).collect()
}

fn split_file(name: &str) -> String {
    format!("{}.tsv", name.replace(|c: char| !c.is_ascii_alphanumeric() && c != '_', "_"))
}

fn synth_data(common: &Common) -> Result<()> {
    let Setup { corpus, .. } = setup(common, 1)?;
    let out = common.out.clone().unwrap_or_else(|| default_out("synth-data"));
    let config = to_toml(&corpus.config)?;
    write_file(&out.join("corpus.toml"), config)?;
    let mut train: Vec<EventList> = corpus.train_events.values().cloned().collect();
    train.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    write_file(&out.join("events").join("train.tsv"), format_events_tsv(&train, &corpus.vocab))?;
    for (prefix, splits) in [("val", &corpus.val), ("test", &corpus.test)] {
        for split in splits.iter() {
            let file = format!("{prefix}_{}", split_file(&split.name));
            write_file(&out.join("events").join(file), format_events_tsv(&split.references, &corpus.vocab))?;
        }
    }
    let hash = corpus.content_hash();
    let manifest = serde_json::json!({
        "content_hash": hash,
        "train_clips": corpus.train.iter().map(Vec::len).collect::<Vec<_>>(),
        "classes": corpus.vocab.names().collect::<Vec<_>>(),
    });
    write_file(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json") + "\n")?;
    emit(None, &format!("{hash}\n"))
}

fn train(common: &Common, jobs: usize, stage: Stage, member: Option<usize>, init: Option<&Path>, pseudo: Option<&Path>) -> Result<()> {
    let Setup { cfg, corpus } = setup(common, jobs)?;
    let init = match init {
        Some(path) => load_model(path)?,
        None if stage.step() == 1 => initial_model(&cfg, &base_model_config(&cfg, &corpus), member)?,
        None => return Err(Error::Config(format!("{stage} starts from a checkpoint; pass --init"))),
    };
    let store = pseudo.map(|dir| PseudoStore::load(dir, &corpus.vocab)).transpose()?;
    let run = run_stage(&cfg, &corpus, stage, &init, member, store.as_ref())?;
    let out = common.out.clone().unwrap_or_else(|| default_out("train"));
    let name = member.map_or("distilled".to_string(), |k| format!("member{k}"));
    let dir = out.join(stage.name());
    save_checkpoint(&dir.join(format!("{name}.ckpt")), &run.model.config, &run.model.params)?;
    write_file(&dir.join(format!("{name}.log.jsonl")), run.log_jsonl())?;
    log::info!("best epoch {} score {}", run.best.epoch, run.best.score);
    Ok(())
}

fn pseudo_label(common: &Common, checkpoints: &[PathBuf]) -> Result<()> {
    let Setup { cfg, corpus } = setup(common, 1)?;
    let store = build_pseudo_store(&cfg, &corpus, &load_models(checkpoints)?)?;
    let out = common.out.clone().unwrap_or_else(|| default_out("pseudo-label"));
    store.save(&out, &corpus.vocab)?;
    log::info!("{} clips, content hash {}", store.len(), store.content_hash());
    Ok(())
}

fn postproc_tune(common: &Common, checkpoints: &[PathBuf]) -> Result<()> {
    let Setup { cfg, corpus } = setup(common, 1)?;
    let val = corpus
        .val_split(EvalKind::DesedReal)
        .ok_or_else(|| Error::Data("no real-DESED validation split".into()))?;
    let posts = system_posteriors(&load_models(checkpoints)?, &val.clips, corpus.config.output_hop())?;
    let params = tune_sebb(&posts, &val.references, &cfg.eval.psds)?;
    emit(common.out.as_deref(), &format_sebb_tsv(&params, &corpus.vocab)?)
}

fn evaluate(common: &Common, checkpoints: &[PathBuf], sebb: Option<&Path>, name: &str) -> Result<()> {
    let Setup { cfg, corpus } = setup(common, 1)?;
    let models = load_models(checkpoints)?;
    let hop = corpus.config.output_hop();
    let split = |kind| corpus.test_split(kind).ok_or_else(|| Error::Data(format!("no {kind:?} test split")));
    let detector: Box<dyn Detector> = match sebb {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Box::new(SebbDetector {
                params: parse_sebb_tsv(&text, &corpus.vocab)?,
            })
        }
        None => Box::new(ThresholdDetector::new(cfg.eval.median_window)),
    };
    let desed = split(EvalKind::DesedReal)?;
    let posts = system_posteriors(&models, &desed.clips, hop)?;
    let psds = psds1(&posts, &desed.references, &cfg.eval.psds, detector.as_ref())?;
    let maestro = split(EvalKind::Maestro)?;
    let posts = system_posteriors(&models, &maestro.clips, hop)?;
    let classes: Vec<usize> = corpus.vocab.maestro_range().collect();
    let tagging = mpauc(&posts, &maestro.references, &classes, &cfg.eval.mpauc)?;
    let row = ReportRow {
        system: name.to_string(),
        stage: "-".into(),
        metrics: MetricReport::new(Some(psds), Some(tagging)),
    };
    emit(common.out.as_deref(), &format_report_csv(&[row])?)
}

fn pipeline(common: &Common, jobs: usize) -> Result<()> {
    let Setup { cfg, corpus } = setup(common, jobs)?;
    let result = run_pipeline(&cfg, &corpus)?;
    let out = common.out.clone().unwrap_or_else(|| default_out("pipeline"));
    write_pipeline_outputs(&result, &corpus, &out)?;
    emit(None, &format_report_markdown(&result.report))
}

fn ablate(common: &Common, jobs: usize, flags: &[String], all: bool) -> Result<()> {
    let mut arms: Vec<Vec<AblationFlag>> = flags
        .iter()
        .map(|f| f.parse().map(|flag| vec![flag]))
        .collect::<Result<_>>()?;
    if all {
        arms.extend(AblationFlag::ALL.iter().map(|f| vec![*f]));
    }
    let Setup { cfg, corpus } = setup(common, jobs)?;
    let results = run_ablation(&cfg, &arms, Some(&corpus), jobs)?;
    let out = common.out.clone().unwrap_or_else(|| default_out("ablate"));
    for arm in &results {
        write_pipeline_outputs(&arm.result, &corpus, &out.join(arm_slug(&arm.flags)))?;
    }
    let rows: Vec<ReportRow> = results.into_iter().map(|a| a.row).collect();
    write_file(&out.join("ablation.csv"), format_report_csv(&rows)?)?;
    let table = format_report_markdown(&rows);
    write_file(&out.join("ablation.md"), &table)?;
    emit(None, &table)
}

fn report(run: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_pipeline_config(&run.join(hetsed::train::pipeline::CONFIG_FILE))?.resolved()?;
    let corpus = generate_synthetic_corpus(&cfg.corpus)?;
    let rows = report_from_dir(&cfg, &corpus, run)?;
    emit(out, &format_report_csv(&rows)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs = cli.jobs.max(1);
    match &cli.command {
        Command::SynthData(c) => synth_data(c),
        Command::Train {
            common,
            stage,
            member,
            init,
            pseudo,
        } => train(common, jobs, *stage, *member, init.as_deref(), pseudo.as_deref()),
        Command::PseudoLabel { common, checkpoints } => pseudo_label(common, checkpoints),
        Command::PostprocTune { common, checkpoints } => postproc_tune(common, checkpoints),
        Command::Evaluate {
            common,
            checkpoints,
            sebb,
            name,
        } => evaluate(common, checkpoints, sebb.as_deref(), name),
        Command::Pipeline(c) => pipeline(c, jobs),
        Command::Ablate {
            common,
            flags,
            all_flags,
        } => ablate(common, jobs, flags, *all_flags),
        Command::Report { run, out } => report(run, out.as_deref()),
    }
}
