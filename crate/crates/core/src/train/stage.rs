//! One training stage: batches, augmentation, losses, optimizer and teacher
//! updates, and per-epoch validation for model selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::augment::augment_batch;
use crate::error::{Error, Result};
use crate::eval::{mpauc, psds1, MpaucParams, PsdsParams, ThresholdDetector};
use crate::ingest::synth::{EvalKind, EvalSplit};
use crate::ingest::{sample_batch, BatchComposition, EpochState};
use crate::model::tape::sigmoid;
use crate::model::{is_embedder_param, Tape, ToyModel};
use crate::postproc::DEFAULT_MEDIAN_WINDOW;
use crate::train::config::StageConfig;
use crate::train::loss::{IctPair, LossContext, LossTerms, LossWeights, SslOptions};
use crate::train::optim::{ema_decay_at, ema_update, AdamW};
use crate::types::{ClipRecord, Posteriorgram, Stage, Subset};
use crate::vocab::ClassVocabulary;

/// Validation metrics of one epoch; `score` is their exact sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub epoch: usize,
    pub psds1_synth: f64,
    pub psds1_real: f64,
    pub mpauc: f64,
    pub score: f64,
}

impl SelectionRecord {
    pub fn new(epoch: usize, psds1_synth: f64, psds1_real: f64, mpauc: f64) -> Self {
        SelectionRecord {
            epoch,
            psds1_synth,
            psds1_real,
            mpauc,
            score: psds1_synth + psds1_real + mpauc,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.score.to_bits() == (self.psds1_synth + self.psds1_real + self.mpauc).to_bits()
    }
}

/// Metric settings shared by validation and test evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub psds: PsdsParams,
    pub mpauc: MpaucParams,
    pub median_window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            psds: PsdsParams::default(),
            mpauc: MpaucParams::default(),
            median_window: DEFAULT_MEDIAN_WINDOW,
        }
    }
}

/// Which datasets a run was trained on; metrics of the other are absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coverage {
    pub desed: bool,
    pub maestro: bool,
}

impl Coverage {
    pub fn of(cfg: &StageConfig) -> Self {
        Coverage {
            desed: !cfg.train_maestro_only,
            maestro: !cfg.train_desed_only,
        }
    }
}

/// Clip-level posteriorgrams of a model.
pub fn predict(model: &ToyModel, clips: &[ClipRecord], frame_hop: f64) -> Result<Vec<Posteriorgram>> {
    clips
        .iter()
        .map(|c| {
            let (logits, _) = model.infer(&c.features)?;
            Posteriorgram::new(c.clip_id.clone(), logits.mapv(sigmoid), frame_hop)
        })
        .collect()
}

fn split<'a>(splits: &'a [EvalSplit], kind: EvalKind) -> Result<&'a EvalSplit> {
    splits
        .iter()
        .find(|s| s.kind == kind)
        .ok_or_else(|| Error::Data(format!("no {kind:?} evaluation split")))
}

/// Median-filter PSDS1 on both DESED validation splits and mpAUC over the
/// MAESTRO classes; uncovered datasets contribute 0.
pub fn validation_record(
    model: &ToyModel,
    val: &[EvalSplit],
    vocab: &ClassVocabulary,
    opts: &EvalOptions,
    coverage: Coverage,
    frame_hop: f64,
    epoch: usize,
) -> Result<SelectionRecord> {
    let detector = ThresholdDetector::new(opts.median_window);
    let psds_of = |kind| -> Result<f64> {
        if !coverage.desed {
            return Ok(0.0);
        }
        let s = split(val, kind)?;
        psds1(&predict(model, &s.clips, frame_hop)?, &s.references, &opts.psds, &detector)
    };
    let synth = psds_of(EvalKind::DesedSynth)?;
    let real = psds_of(EvalKind::DesedReal)?;
    let tagging = if coverage.maestro {
        let s = split(val, EvalKind::Maestro)?;
        let classes: Vec<usize> = vocab.maestro_range().collect();
        mpauc(&predict(model, &s.clips, frame_hop)?, &s.references, &classes, &opts.mpauc)?
    } else {
        0.0
    };
    Ok(SelectionRecord::new(epoch, synth, real, tagging))
}

/// Training inputs of one stage.
pub struct StageData<'a> {
    /// Prepared clips per subset, in [`Subset::ALL`] order.
    pub train: &'a [Vec<ClipRecord>; 5],
    pub val: &'a [EvalSplit],
    pub vocab: &'a ClassVocabulary,
    /// Output frame hop in seconds.
    pub frame_hop: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub steps: usize,
    /// Mean over the epoch's steps.
    pub losses: LossTerms,
    pub selection: SelectionRecord,
}

#[derive(Clone, Debug)]
pub struct StageRun {
    pub model: ToyModel,
    pub best: SelectionRecord,
    pub history: Vec<SelectionRecord>,
    pub log: Vec<EpochLog>,
}

impl StageRun {
    /// Training log as line-delimited JSON.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("log serializes") + "\n")
            .collect()
    }
}

/// Batch composition with the subsets excluded by the dataset flags zeroed.
pub fn effective_composition(cfg: &StageConfig) -> BatchComposition {
    let mut counts = cfg.batch.0;
    for s in Subset::ALL {
        let maestro = s == Subset::MaestroStrong;
        if (cfg.train_desed_only && maestro) || (cfg.train_maestro_only && !maestro) {
            counts[s.index()] = 0;
        }
    }
    BatchComposition(counts)
}

fn ict_pairs<R: Rng>(batch: &[ClipRecord], alpha: f64, rng: &mut R) -> Result<Vec<IctPair>> {
    let pool: Vec<usize> = (0..batch.len())
        .filter(|&i| batch[i].subset == Subset::DesedUnlabeled)
        .collect();
    if pool.len() < 2 {
        return Ok(Vec::new());
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("ict_alpha: {e}")))?;
    let mut partners = pool.clone();
    partners.shuffle(rng);
    Ok(pool
        .iter()
        .zip(partners)
        .map(|(&left, right)| IctPair {
            left,
            right,
            lambda: beta.sample(rng),
        })
        .collect())
}

fn add_terms(acc: &mut LossTerms, t: &LossTerms) {
    acc.strong += t.strong;
    acc.weak += t.weak;
    acc.pseudo += t.pseudo;
    acc.mt += t.mt;
    acc.ict += t.ict;
    acc.total += t.total;
}

fn scale_terms(t: &mut LossTerms, k: f64) {
    for v in [&mut t.strong, &mut t.weak, &mut t.pseudo, &mut t.mt, &mut t.ict, &mut t.total] {
        *v *= k;
    }
}

/// Trains `init` for one stage and returns the checkpoint with the highest
/// validation selection score (the initial model included, earliest wins
/// ties).
pub fn train_stage(
    init: &ToyModel,
    stage: Stage,
    cfg: &StageConfig,
    data: &StageData,
    opts: &EvalOptions,
    seed: u64,
) -> Result<StageRun> {
    cfg.validate()?;
    let coverage = Coverage::of(cfg);
    let frozen = cfg.embedder_frozen;
    let trainable = move |n: &str| !(frozen && is_embedder_param(n));
    let mut student = init.clone();
    let mut teacher = init.clone();
    let mut opt = AdamW::new(&student, cfg, &trainable);
    let composition = effective_composition(cfg);

    let validate = |m: &ToyModel, epoch| {
        validation_record(m, data.val, data.vocab, opts, coverage, data.frame_hop, epoch)
    };
    let first = validate(&student, 0)?;
    let mut history = vec![first];
    let mut best = (first, student.clone());
    let mut log = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = EpochState::new(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let weights = LossWeights {
        strong: cfg.w_strong,
        weak: cfg.w_weak,
        pseudo: if cfg.use_pseudo_loss { cfg.w_pseudo } else { 0.0 },
        mt: cfg.w_mt,
        ict: cfg.w_ict,
    };
    let ssl = SslOptions {
        on_maestro: cfg.ssl_on_maestro,
        class_mask: cfg.ssl_class_mask,
    };
    let mut global_step = 0;
    for epoch in 1..=cfg.epochs {
        let mut epoch_terms = LossTerms::default();
        for step in 0..cfg.steps_per_epoch {
            let context = |e: Error| match e {
                Error::Numerical(msg) => {
                    Error::Numerical(format!("{stage} epoch {epoch} step {step}: {msg}"))
                }
                other => other,
            };
            let batch = sample_batch(data.train, &composition, &mut sampler)?;
            let normalize = |f: &ndarray::Array2<f64>| student.normalize(f);
            let batch = augment_batch(&batch, &cfg.augment, stage, data.vocab, &normalize, &mut rng)?;
            let pairs = ict_pairs(&batch, cfg.ict_alpha, &mut rng)?;
            let ctx = LossContext {
                student: &student,
                teacher: &teacher,
                vocab: data.vocab,
                weights,
                ssl,
                use_pseudo: cfg.use_pseudo_loss,
            };
            let mut tape = Tape::new();
            let bound = student.bind(&mut tape, &trainable);
            let (loss, terms) = ctx.record(&mut tape, &bound, &batch, &pairs).map_err(context)?;
            let grads = tape.backward(loss);
            let grads: Vec<Option<Vec<f64>>> = bound
                .vars
                .iter()
                .map(|v| grads.get(*v).map(<[f64]>::to_vec))
                .collect();
            opt.step(&mut student.params, &grads).map_err(context)?;
            ema_update(&mut teacher.params, &student.params, ema_decay_at(cfg.ema_decay, global_step))?;
            global_step += 1;
            add_terms(&mut epoch_terms, &terms);
        }
        scale_terms(&mut epoch_terms, 1.0 / cfg.steps_per_epoch as f64);
        let record = validate(&student, epoch)?;
        log::info!(
            "{stage} epoch {epoch}: loss {:.4} score {:.4}",
            epoch_terms.total,
            record.score
        );
        if record.score > best.0.score {
            best = (record, student.clone());
        }
        history.push(record);
        log.push(EpochLog {
            stage,
            epoch,
            steps: cfg.steps_per_epoch,
            losses: epoch_terms,
            selection: record,
        });
    }
    Ok(StageRun {
        model: best.1,
        best: best.0,
        history,
        log,
    })
}
