//! Two iterations of two stages: an ensemble trained in the first
//! iteration, its fused predictions as pseudo-labels, and a distilled model
//! trained in the second.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{
    format_report_csv, format_report_markdown, mpauc, psds1, Detector, MetricReport, ReportRow,
    SebbDetector, ThresholdDetector,
};
use crate::ingest::synth::EvalKind;
use crate::ingest::{BatchComposition, CorpusConfig, SyntheticCorpus};
use crate::model::{load_checkpoint, save_checkpoint, AlignMethod, ModelConfig, ToyModel};
use crate::postproc::{format_sebb_tsv, tune_sebb, SebbParams};
use crate::pseudo::{fuse_models, PseudoPolicy, PseudoStore};
use crate::train::ablation::AblationFlag;
use crate::train::config::StageConfig;
use crate::train::prepare::{input_statistics, prepare_training_sets};
use crate::train::stage::{predict, train_stage, Coverage, EvalOptions, SelectionRecord, StageData, StageRun};
use crate::types::{ClipRecord, Posteriorgram, Stage};

/// One ensemble member of the first iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub seed: u64,
    pub align: AlignMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSet {
    #[serde(rename = "I1_S1")]
    pub i1s1: StageConfig,
    #[serde(rename = "I1_S2")]
    pub i1s2: StageConfig,
    #[serde(rename = "I2_S1")]
    pub i2s1: StageConfig,
    #[serde(rename = "I2_S2")]
    pub i2s2: StageConfig,
}

/// Batch scale and schedule of the desk-sized recipe.
pub const DESK_BATCH_SCALE: f64 = 0.125;
pub const DESK_STEPS_PER_EPOCH: usize = 8;

impl Default for StageSet {
    fn default() -> Self {
        StageSet::desk()
    }
}

impl StageSet {
    /// Full-size presets.
    pub fn presets() -> Self {
        StageSet {
            i1s1: StageConfig::preset(Stage::I1S1),
            i1s2: StageConfig::preset(Stage::I1S2),
            i2s1: StageConfig::preset(Stage::I2S1),
            i2s2: StageConfig::preset(Stage::I2S2),
        }
    }

    /// Presets with batches scaled by [`DESK_BATCH_SCALE`], more steps per
    /// epoch, and a longer first stage for the re-initialized model of the
    /// second iteration.
    pub fn desk() -> Self {
        let mut set = StageSet::presets();
        for (stage, epochs) in Stage::ALL.into_iter().zip([10, 10, 20, 10]) {
            let s = set.get_mut(stage);
            s.batch = s.batch.scaled(DESK_BATCH_SCALE);
            s.steps_per_epoch = DESK_STEPS_PER_EPOCH;
            s.epochs = epochs;
        }
        set
    }

    pub fn get(&self, stage: Stage) -> &StageConfig {
        match stage {
            Stage::I1S1 => &self.i1s1,
            Stage::I1S2 => &self.i1s2,
            Stage::I2S1 => &self.i2s1,
            Stage::I2S2 => &self.i2s2,
        }
    }

    pub fn get_mut(&mut self, stage: Stage) -> &mut StageConfig {
        match stage {
            Stage::I1S1 => &mut self.i1s1,
            Stage::I1S2 => &mut self.i1s2,
            Stage::I2S1 => &mut self.i2s1,
            Stage::I2S2 => &mut self.i2s2,
        }
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut StageConfig)) {
        for s in Stage::ALL {
            f(self.get_mut(s));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// 1 stops after the first iteration.
    pub iterations: u8,
    pub corpus: CorpusConfig,
    /// Architecture; geometry and class counts are taken from the corpus.
    pub model: ModelConfig,
    pub ensemble: Vec<MemberSpec>,
    pub stages: StageSet,
    pub flags: Vec<AblationFlag>,
    pub eval: EvalOptions,
    /// Report PSDS1 with class-wise tuned SEBB instead of median filtering
    /// and thresholding.
    pub tune_sebb: bool,
    /// Worker threads for ensemble members.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            iterations: 2,
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            ensemble: vec![
                MemberSpec {
                    seed: 1,
                    align: AlignMethod::NearestExact,
                },
                MemberSpec {
                    seed: 2,
                    align: AlignMethod::LinearInterpolation,
                },
                MemberSpec {
                    seed: 3,
                    align: AlignMethod::AdaptiveAvgPool,
                },
            ],
            stages: StageSet::default(),
            flags: Vec::new(),
            eval: EvalOptions::default(),
            tune_sebb: false,
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    /// Minimal sizes for smoke runs: a few clips, one step per stage.
    pub fn smoke() -> Self {
        let mut stages = StageSet::presets();
        for stage in Stage::ALL {
            let s = stages.get_mut(stage);
            s.epochs = 1;
            s.steps_per_epoch = 2;
            s.batch = BatchComposition([1, 1, 1, 1, 2]);
        }
        PipelineConfig {
            corpus: CorpusConfig {
                n_train: [4, 4, 4, 4, 6],
                n_val: 4,
                n_test: 4,
                n_bins: 8,
                input_frames: 20,
                output_frames: 10,
                n_desed_classes: 2,
                n_maestro_classes: 2,
                clip_seconds: 2.0,
                event_rate: 3.0,
                ..CorpusConfig::default()
            },
            model: ModelConfig {
                cnn_channels: [2, 2],
                cnn_dim: 3,
                emb_dim: 3,
                emb_kernel: 4,
                emb_stride: 2,
                emb_layers: 2,
                hidden: 3,
                ..ModelConfig::default()
            },
            stages,
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.iterations) {
            return Err(Error::Config(format!("iterations must be 1 or 2, got {}", self.iterations)));
        }
        if self.ensemble.is_empty() {
            return Err(Error::Config("the ensemble needs at least one member".into()));
        }
        self.corpus.validate()?;
        for s in Stage::ALL {
            self.stages.get(s).validate()?;
        }
        self.eval.psds.validate()?;
        if self.corpus.input_frames % 2 != 0 || self.corpus.input_frames / 2 != self.corpus.output_frames {
            return Err(Error::Config(format!(
                "the model halves {} input frames; the corpus labels {} output frames",
                self.corpus.input_frames, self.corpus.output_frames
            )));
        }
        Ok(())
    }

    /// Copy with the ablation flags applied and the model geometry taken
    /// from the corpus.
    pub fn resolved(&self) -> Result<PipelineConfig> {
        let mut cfg = self.clone();
        for flag in &self.flags {
            flag.apply(&mut cfg);
        }
        cfg.flags.clear();
        let c = &cfg.corpus;
        cfg.model.n_bins = c.n_bins;
        cfg.model.input_frames = c.input_frames;
        cfg.model.n_desed_classes = c.n_desed_classes;
        cfg.model.n_classes = c.n_desed_classes + c.n_maestro_classes;
        let separate = Stage::ALL.iter().any(|&s| cfg.stages.get(s).separate_rnn);
        cfg.model.separate_rnn |= separate;
        let model_flag = cfg.model.separate_rnn;
        cfg.stages.for_each_mut(|s| s.separate_rnn = model_flag);
        cfg.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn coverage(&self) -> Coverage {
        Coverage::of(&self.stages.i1s1)
    }

    /// Pseudo-label policy read from the first stage of the second iteration.
    pub fn pseudo_policy(&self) -> PseudoPolicy {
        PseudoPolicy {
            hard: self.stages.i2s1.hard_pseudo,
            all_classes: self.stages.i2s1.pseudo_all_classes,
        }
    }
}

/// Seed of one training run, derived from the global seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug)]
pub struct MemberRuns {
    pub spec: MemberSpec,
    pub s1: StageRun,
    pub s2: StageRun,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub config: PipelineConfig,
    pub members: Vec<MemberRuns>,
    pub pseudo: Option<PseudoStore>,
    pub i2s1: Option<StageRun>,
    pub i2s2: Option<StageRun>,
    pub report: Vec<ReportRow>,
    /// Tuned SEBB parameters per report row, when tuning is on.
    pub sebb: Vec<(String, Vec<SebbParams>)>,
}

impl PipelineResult {
    /// Best validation record of every stage, in pipeline order, per member
    /// for the first iteration.
    pub fn stage_scores(&self) -> Vec<(Stage, Vec<SelectionRecord>)> {
        let mut out = vec![
            (Stage::I1S1, self.members.iter().map(|m| m.s1.best).collect()),
            (Stage::I1S2, self.members.iter().map(|m| m.s2.best).collect()),
        ];
        if let (Some(a), Some(b)) = (&self.i2s1, &self.i2s2) {
            out.push((Stage::I2S1, vec![a.best]));
            out.push((Stage::I2S2, vec![b.best]));
        }
        out
    }

    pub fn ensemble(&self) -> Vec<ToyModel> {
        self.members.iter().map(|m| m.s2.model.clone()).collect()
    }
}

fn stage_data<'a>(corpus: &'a SyntheticCorpus, train: &'a [Vec<ClipRecord>; 5]) -> StageData<'a> {
    StageData {
        train,
        val: &corpus.val,
        vocab: &corpus.vocab,
        frame_hop: corpus.config.output_hop(),
    }
}

fn member_label(member: Option<usize>) -> String {
    member.map_or("distilled".into(), |k| format!("member{k}"))
}

/// Model architecture of a resolved config with the corpus input statistics.
pub fn base_model_config(cfg: &PipelineConfig, corpus: &SyntheticCorpus) -> ModelConfig {
    let (mean, std) = input_statistics(corpus);
    ModelConfig {
        input_mean: mean,
        input_std: std,
        ..cfg.model.clone()
    }
}

/// Freshly initialized model of ensemble member `member`, or of the
/// distilled second-iteration model when `None`.
pub fn initial_model(cfg: &PipelineConfig, base: &ModelConfig, member: Option<usize>) -> Result<ToyModel> {
    match member {
        Some(k) => {
            let spec = cfg
                .ensemble
                .get(k)
                .ok_or_else(|| Error::Config(format!("no ensemble member {k}")))?;
            ToyModel::new(ModelConfig {
                align: spec.align,
                init_seed: spec.seed,
                ..base.clone()
            })
        }
        None => {
            let mut model = ToyModel::new(ModelConfig {
                align: cfg.ensemble[0].align,
                ..base.clone()
            })?;
            model.reinit_trainable(derive_seed(cfg.seed, "I2/init"))?;
            Ok(model)
        }
    }
}

/// Training seed of one stage run.
pub fn stage_seed(cfg: &PipelineConfig, stage: Stage, member: Option<usize>) -> u64 {
    let label = format!("{}/{stage}", member_label(member));
    match member.and_then(|k| cfg.ensemble.get(k)) {
        Some(spec) => derive_seed(cfg.seed ^ spec.seed, &label),
        None => derive_seed(cfg.seed, &label),
    }
}

/// Trains one stage of a resolved config from `init`.
pub fn run_stage(
    cfg: &PipelineConfig,
    corpus: &SyntheticCorpus,
    stage: Stage,
    init: &ToyModel,
    member: Option<usize>,
    pseudo: Option<&PseudoStore>,
) -> Result<StageRun> {
    let stage_cfg = cfg.stages.get(stage);
    if stage_cfg.use_pseudo_loss && pseudo.is_none() {
        return Err(Error::Config(format!("{stage} uses the pseudo-label loss but no pseudo-labels were given")));
    }
    let sets = prepare_training_sets(corpus, stage_cfg, pseudo)?;
    log::info!("{stage} {}", member_label(member));
    train_stage(
        init,
        stage,
        stage_cfg,
        &stage_data(corpus, &sets),
        &cfg.eval,
        stage_seed(cfg, stage, member),
    )
}

fn train_member(cfg: &PipelineConfig, corpus: &SyntheticCorpus, base: &ModelConfig, k: usize) -> Result<MemberRuns> {
    let init = initial_model(cfg, base, Some(k))?;
    let s1 = run_stage(cfg, corpus, Stage::I1S1, &init, Some(k), None)?;
    let s2 = run_stage(cfg, corpus, Stage::I1S2, &s1.model, Some(k), None)?;
    Ok(MemberRuns {
        spec: cfg.ensemble[k],
        s1,
        s2,
    })
}

/// Fuses the ensemble on every training clip.
pub fn build_pseudo_store(cfg: &PipelineConfig, corpus: &SyntheticCorpus, ensemble: &[ToyModel]) -> Result<PseudoStore> {
    PseudoStore::build(
        ensemble,
        corpus.all_train_clips(),
        cfg.pseudo_policy(),
        corpus.config.output_hop(),
    )
}

/// Runs `f` over `0..n` on up to `jobs` threads; results keep index order.
pub fn parallel_map<T: Send>(
    n: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| s.spawn(move || (j..n).step_by(jobs).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every index ran")).collect()
}

pub fn run_pipeline(config: &PipelineConfig, corpus: &SyntheticCorpus) -> Result<PipelineResult> {
    let cfg = config.resolved()?;
    if corpus.config != cfg.corpus {
        return Err(Error::Config("corpus does not match the pipeline corpus config".into()));
    }
    let base = base_model_config(&cfg, corpus);
    log::info!("pipeline seed {} with {} ensemble members", cfg.seed, cfg.ensemble.len());
    let members = parallel_map(cfg.ensemble.len(), cfg.jobs, |k| train_member(&cfg, corpus, &base, k))?;

    let (mut pseudo, mut i2s1, mut i2s2) = (None, None, None);
    if cfg.iterations == 2 {
        let ensemble: Vec<ToyModel> = members.iter().map(|m| m.s2.model.clone()).collect();
        let store = build_pseudo_store(&cfg, corpus, &ensemble)?;
        let init = initial_model(&cfg, &base, None)?;
        let a = run_stage(&cfg, corpus, Stage::I2S1, &init, None, Some(&store))?;
        let b = run_stage(&cfg, corpus, Stage::I2S2, &a.model, None, Some(&store))?;
        pseudo = Some(store);
        i2s1 = Some(a);
        i2s2 = Some(b);
    }

    let systems = report_systems(
        &members.iter().map(|m| (m.s1.model.clone(), m.s2.model.clone())).collect::<Vec<_>>(),
        i2s1.as_ref().map(|r| r.model.clone()),
        i2s2.as_ref().map(|r| r.model.clone()),
    );
    let (report, sebb) = evaluate_systems(&cfg, corpus, &systems)?;
    Ok(PipelineResult {
        config: cfg,
        members,
        pseudo,
        i2s1,
        i2s2,
        report,
        sebb,
    })
}

/// A reported system: one model, or a fused ensemble.
pub struct System {
    pub name: String,
    pub stage: Stage,
    pub models: Vec<ToyModel>,
}

fn report_systems(
    members: &[(ToyModel, ToyModel)],
    i2s1: Option<ToyModel>,
    i2s2: Option<ToyModel>,
) -> Vec<System> {
    let mut out = Vec::new();
    for (k, (s1, s2)) in members.iter().enumerate() {
        out.push(System {
            name: format!("member{k}"),
            stage: Stage::I1S1,
            models: vec![s1.clone()],
        });
        out.push(System {
            name: format!("member{k}"),
            stage: Stage::I1S2,
            models: vec![s2.clone()],
        });
    }
    out.push(System {
        name: "ensemble".into(),
        stage: Stage::I1S2,
        models: members.iter().map(|m| m.1.clone()).collect(),
    });
    for (stage, model) in [(Stage::I2S1, i2s1), (Stage::I2S2, i2s2)] {
        if let Some(m) = model {
            out.push(System {
                name: "distilled".into(),
                stage,
                models: vec![m],
            });
        }
    }
    out
}

/// Posteriorgrams of a model or of the logit-mean fusion of several.
pub fn system_posteriors(models: &[ToyModel], clips: &[ClipRecord], frame_hop: f64) -> Result<Vec<Posteriorgram>> {
    if models.len() == 1 {
        return predict(&models[0], clips, frame_hop);
    }
    clips
        .iter()
        .map(|c| Posteriorgram::new(c.clip_id.clone(), fuse_models(models, &c.features, false)?, frame_hop))
        .collect()
}

/// Test-split metrics of every system. PSDS1 is measured on the real-DESED
/// test split, mpAUC on the MAESTRO test split.
pub fn evaluate_systems(
    cfg: &PipelineConfig,
    corpus: &SyntheticCorpus,
    systems: &[System],
) -> Result<(Vec<ReportRow>, Vec<(String, Vec<SebbParams>)>)> {
    let hop = corpus.config.output_hop();
    let coverage = cfg.coverage();
    let split = |kind| {
        corpus
            .test_split(kind)
            .ok_or_else(|| Error::Data(format!("no {kind:?} test split")))
    };
    let mut rows = Vec::new();
    let mut tuned = Vec::new();
    for sys in systems {
        let label = format!("{}_{}", sys.name, sys.stage);
        let psds = if coverage.desed {
            let test = split(EvalKind::DesedReal)?;
            let posts = system_posteriors(&sys.models, &test.clips, hop)?;
            let detector: Box<dyn Detector> = if cfg.tune_sebb {
                let val = corpus
                    .val_split(EvalKind::DesedReal)
                    .ok_or_else(|| Error::Data("no real-DESED validation split".into()))?;
                let val_posts = system_posteriors(&sys.models, &val.clips, hop)?;
                let params = tune_sebb(&val_posts, &val.references, &cfg.eval.psds)?;
                tuned.push((label.clone(), params.clone()));
                Box::new(SebbDetector { params })
            } else {
                Box::new(ThresholdDetector::new(cfg.eval.median_window))
            };
            Some(psds1(&posts, &test.references, &cfg.eval.psds, detector.as_ref())?)
        } else {
            None
        };
        let tagging = if coverage.maestro {
            let test = split(EvalKind::Maestro)?;
            let posts = system_posteriors(&sys.models, &test.clips, hop)?;
            let classes: Vec<usize> = corpus.vocab.maestro_range().collect();
            Some(mpauc(&posts, &test.references, &classes, &cfg.eval.mpauc)?)
        } else {
            None
        };
        rows.push(ReportRow {
            system: sys.name.clone(),
            stage: sys.stage.to_string(),
            metrics: MetricReport::new(psds, tagging),
        });
    }
    Ok((rows, tuned))
}

pub const REPORT_CSV: &str = "report.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const PSEUDO_DIR: &str = "pseudo";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn checkpoint_path(dir: &Path, stage: Stage, name: &str) -> PathBuf {
    dir.join(stage.name()).join(format!("{name}.ckpt"))
}

fn save_run(dir: &Path, stage: Stage, name: &str, run: &StageRun) -> Result<()> {
    save_checkpoint(&checkpoint_path(dir, stage, name), &run.model.config, &run.model.params)?;
    write(&dir.join(stage.name()).join(format!("{name}.log.jsonl")), run.log_jsonl())?;
    let history = serde_json::to_string_pretty(&run.history).expect("records serialize");
    write(&dir.join(stage.name()).join(format!("{name}.selection.json")), history)
}

/// Persists checkpoints, logs, the pseudo-label store, tuned SEBB
/// parameters, the resolved configuration and the report.
pub fn write_pipeline_outputs(result: &PipelineResult, corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    write(&dir.join(CONFIG_FILE), crate::config::format_pipeline_config(&result.config)?)?;
    for (k, m) in result.members.iter().enumerate() {
        save_run(dir, Stage::I1S1, &format!("member{k}"), &m.s1)?;
        save_run(dir, Stage::I1S2, &format!("member{k}"), &m.s2)?;
    }
    if let Some(store) = &result.pseudo {
        store.save(&dir.join(PSEUDO_DIR), &corpus.vocab)?;
    }
    if let Some(run) = &result.i2s1 {
        save_run(dir, Stage::I2S1, "distilled", run)?;
    }
    if let Some(run) = &result.i2s2 {
        save_run(dir, Stage::I2S2, "distilled", run)?;
    }
    for (label, params) in &result.sebb {
        write(&dir.join("sebb").join(format!("{label}.tsv")), format_sebb_tsv(params, &corpus.vocab)?)?;
    }
    write(&dir.join(REPORT_CSV), format_report_csv(&result.report)?)?;
    write(&dir.join("report.md"), format_report_markdown(&result.report))
}

fn load_model(path: &Path) -> Result<ToyModel> {
    let (config, params) = load_checkpoint::<ModelConfig>(path)?;
    ToyModel::from_params(config, params)
}

/// Re-evaluates the checkpoints of a finished pipeline run directory.
pub fn report_from_dir(cfg: &PipelineConfig, corpus: &SyntheticCorpus, dir: &Path) -> Result<Vec<ReportRow>> {
    let mut members = Vec::new();
    for k in 0..cfg.ensemble.len() {
        let name = format!("member{k}");
        members.push((
            load_model(&checkpoint_path(dir, Stage::I1S1, &name))?,
            load_model(&checkpoint_path(dir, Stage::I1S2, &name))?,
        ));
    }
    let (i2s1, i2s2) = if cfg.iterations == 2 {
        (
            Some(load_model(&checkpoint_path(dir, Stage::I2S1, "distilled"))?),
            Some(load_model(&checkpoint_path(dir, Stage::I2S2, "distilled"))?),
        )
    } else {
        (None, None)
    };
    let systems = report_systems(&members, i2s1, i2s2);
    Ok(evaluate_systems(cfg, corpus, &systems)?.0)
}
