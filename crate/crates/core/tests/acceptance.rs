//! End-to-end acceptance checks. Each criterion prints one line,
//! `criterion N <name> PASS|FAIL <detail>`; the process fails if any does.
//! Pass criterion numbers as arguments to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hetsed::eval::{
    format_report_markdown, mpauc_soft, psds1, rank_score, MpaucParams, PsdsParams, ReportRow,
    ThresholdDetector,
};
use hetsed::ingest::{
    generate_synthetic_corpus, sample_batch, BatchComposition, CorpusConfig, EpochState, SoftSegment,
};
use hetsed::model::{align_sequence, gradient_check, AlignMethod, ModelConfig, ToyModel};
use hetsed::postproc::{abs_grid, rel_grid, sebb_row, step_grid, SebbParams};
use hetsed::pseudo::{PseudoPolicy, PseudoStore};
use hetsed::train::loss::{IctPair, LossContext, LossWeights, SslOptions};
use hetsed::train::{
    prepare_training_sets, run_ablation, run_pipeline, write_pipeline_outputs, AblationFlag,
    PipelineConfig, PipelineResult, SelectionRecord, StageConfig,
};
use hetsed::types::{
    Event, EventList, FrameLabelGrid, Origin, Posteriorgram, Stage, Subset, WeakLabels,
};
use hetsed::vocab::{map_frame_labels, map_weak_labels, ClassMapping, ClassVocabulary};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let corpus = generate_synthetic_corpus(&CorpusConfig {
        n_train: [2, 2, 2, 2, 3],
        n_val: 2,
        n_test: 2,
        n_bins: 16,
        input_frames: 40,
        output_frames: 20,
        n_desed_classes: 3,
        n_maestro_classes: 3,
        event_rate: 3.0,
        ..CorpusConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let config = ModelConfig {
        n_bins: 16,
        input_frames: 40,
        n_classes: 6,
        n_desed_classes: 3,
        cnn_channels: [2, 3],
        cnn_dim: 4,
        emb_dim: 3,
        emb_kernel: 6,
        emb_stride: 3,
        emb_layers: 2,
        hidden: 4,
        separate_rnn: true,
        ..ModelConfig::default()
    };
    let student = ToyModel::new(config.clone()).map_err(|e| e.to_string())?;
    let teacher = ToyModel::new(ModelConfig { init_seed: 99, ..config }).map_err(|e| e.to_string())?;
    let store = PseudoStore::build(
        &[teacher.clone()],
        corpus.all_train_clips(),
        PseudoPolicy::default(),
        corpus.config.output_hop(),
    )
    .map_err(|e| e.to_string())?;
    let stage = StageConfig {
        use_pseudo_loss: true,
        ..StageConfig::preset(Stage::I2S1)
    };
    let sets = prepare_training_sets(&corpus, &stage, Some(&store)).map_err(|e| e.to_string())?;
    let mut batch = Vec::new();
    for subset in Subset::ALL {
        let n = if subset == Subset::DesedUnlabeled { 2 } else { 1 };
        for clip in &sets[subset.index()][..n] {
            let mut clip = clip.clone();
            clip.features = student.normalize(&clip.features).map_err(|e| e.to_string())?;
            batch.push(clip);
        }
    }
    let pairs = [IctPair {
        left: 4,
        right: 5,
        lambda: 0.3,
    }];
    let ctx = LossContext {
        student: &student,
        teacher: &teacher,
        vocab: &corpus.vocab,
        weights: LossWeights {
            strong: 1.0,
            weak: 0.5,
            pseudo: 1.0,
            mt: 40.0,
            ict: 10.0,
        },
        ssl: SslOptions {
            on_maestro: true,
            class_mask: false,
        },
        use_pseudo: true,
    };
    let start = Instant::now();
    let report = gradient_check(
        &student,
        &|_| true,
        |tape, bound| ctx.record(tape, bound, &batch, &pairs).map(|(loss, _)| loss),
        1,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let detail = format!(
        "max rel error {:.2e} over {} values of {} tensors, {}",
        report.max_rel_error,
        report.n_checked(),
        report.names.len(),
        secs(elapsed)
    );
    ensure!(report.n_checked() == student.params.n_values(), "not every value checked: {detail}");
    ensure!(report.max_rel_error <= 1e-4, "{detail}; worst {:?}", report.worst);
    ensure!(elapsed < Duration::from_secs(60), "too slow: {detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------

const ORACLE_HOP: f64 = 0.5;
const ORACLE_FRAMES: usize = 20;

/// Length of `[a, b)` inside the union of `intervals`, by enumerating the
/// elementary pieces between all endpoints.
fn oracle_overlap(a: f64, b: f64, intervals: &[(f64, f64)]) -> f64 {
    let mut cuts = vec![a, b];
    for &(s, e) in intervals {
        for p in [s, e] {
            if p > a && p < b {
                cuts.push(p);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if intervals.iter().any(|&(s, e)| s < mid && mid < e) {
            total += w[1] - w[0];
        }
    }
    total
}

fn oracle_detections(row: &[f64], threshold: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &v) in row.iter().chain(std::iter::once(&f64::NEG_INFINITY)).enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s as f64 * ORACLE_HOP, t as f64 * ORACLE_HOP));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// PSDS by direct enumeration: per class and threshold, count DTC failures
/// and GTC hits clip by clip; the ROC staircase only changes at integer
/// false-positive counts, so integrate over those.
fn oracle_psds(posts: &[Posteriorgram], refs: &[EventList], p: &PsdsParams) -> f64 {
    let hours = posts.len() as f64 * ORACLE_FRAMES as f64 * ORACLE_HOP / 3600.0;
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = refs.iter().flat_map(|l| l.events.iter().map(|e| e.class)).collect();
        c.sort();
        c.dedup();
        c
    };
    let thresholds: Vec<f64> = (0..p.n_thresholds)
        .map(|i| (i as f64 + 0.5) / p.n_thresholds as f64)
        .collect();
    // (false positives, tpr) per class and threshold
    let mut curves: Vec<Vec<(usize, f64)>> = Vec::new();
    for &c in &classes {
        let mut curve = Vec::new();
        for &th in &thresholds {
            let (mut fp, mut hits, mut n_ref) = (0usize, 0usize, 0usize);
            for post in posts {
                let gt: Vec<(f64, f64)> = refs
                    .iter()
                    .filter(|l| l.clip_id == post.clip_id)
                    .flat_map(|l| l.events.iter())
                    .filter(|e| e.class == c)
                    .map(|e| (e.onset, e.offset))
                    .collect();
                let row: Vec<f64> = post.scores.row(c).to_vec();
                let mut valid = Vec::new();
                for (s, e) in oracle_detections(&row, th) {
                    if oracle_overlap(s, e, &gt) >= p.dtc_threshold * (e - s) {
                        valid.push((s, e));
                    } else {
                        fp += 1;
                    }
                }
                for &(s, e) in &gt {
                    n_ref += 1;
                    if oracle_overlap(s, e, &valid) >= p.gtc_threshold * (e - s) {
                        hits += 1;
                    }
                }
            }
            curve.push((fp, hits as f64 / n_ref as f64));
        }
        curves.push(curve);
    }
    let step = 1.0 / hours;
    let mut area = 0.0;
    let mut k = 0usize;
    while (k as f64) * step < p.max_efpr {
        let lo = k as f64 * step;
        let hi = ((k + 1) as f64 * step).min(p.max_efpr);
        let values: Vec<f64> = curves
            .iter()
            .map(|curve| {
                curve
                    .iter()
                    .filter(|(fp, _)| *fp <= k)
                    .map(|&(_, tpr)| tpr)
                    .fold(0.0, f64::max)
            })
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        area += (mean - p.alpha_st * std) * (hi - lo);
        k += 1;
    }
    (area / p.max_efpr).clamp(0.0, 1.0)
}

fn random_scenario(rng: &mut ChaCha8Rng) -> (Vec<Posteriorgram>, Vec<EventList>) {
    let duration = ORACLE_FRAMES as f64 * ORACLE_HOP;
    loop {
        let n_classes = rng.gen_range(1..=3);
        let n_clips = rng.gen_range(1..=5);
        let mut posts = Vec::new();
        let mut refs = Vec::new();
        for k in 0..n_clips {
            let id = format!("clip{k}");
            let mut events = Vec::new();
            for _ in 0..rng.gen_range(0..=4) {
                let onset = rng.gen_range(0.0..duration - 0.5);
                let offset = rng.gen_range(onset + 0.3..=duration);
                events.push(Event::new(onset, offset, rng.gen_range(0..n_classes)));
            }
            let mut scores = Array2::zeros((n_classes, ORACLE_FRAMES));
            for ((c, t), v) in scores.indexed_iter_mut() {
                let center = (t as f64 + 0.5) * ORACLE_HOP;
                let active = events.iter().any(|e: &Event| e.class == c && e.onset <= center && center < e.offset);
                *v = if active { 0.4 + 0.6 * rng.gen::<f64>() } else { 0.7 * rng.gen::<f64>() };
            }
            posts.push(Posteriorgram::new(id.clone(), scores, ORACLE_HOP).unwrap());
            refs.push(EventList { clip_id: id, events });
        }
        if refs.iter().any(|l| !l.events.is_empty()) {
            return (posts, refs);
        }
    }
}

fn psds_oracle_equivalence() -> Outcome {
    let params = PsdsParams::default();
    ensure!(params.n_thresholds == 50, "expected 50 thresholds");
    let detector = ThresholdDetector::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut nontrivial = 0;
    let scenarios = 200;
    for i in 0..scenarios {
        let (posts, refs) = random_scenario(&mut rng);
        let got = psds1(&posts, &refs, &params, &detector).map_err(|e| format!("scenario {i}: {e}"))?;
        let want = oracle_psds(&posts, &refs, &params);
        if want > 0.0 && want < 1.0 {
            nontrivial += 1;
        }
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-9, "scenario {i}: psds {got} vs oracle {want}");
    }

    let mut scores = Array2::zeros((2, ORACLE_FRAMES));
    scores.slice_mut(ndarray::s![0, 2..8]).fill(1.0);
    scores.slice_mut(ndarray::s![1, 10..19]).fill(1.0);
    let post = Posteriorgram::new("p", scores, ORACLE_HOP).unwrap();
    let refs = vec![EventList {
        clip_id: "p".into(),
        events: vec![Event::new(1.0, 4.0, 0), Event::new(5.0, 9.5, 1)],
    }];
    let perfect = psds1(&[post.clone()], &refs, &params, &detector).map_err(|e| e.to_string())?;
    let mut silent = post;
    silent.scores.fill(0.0);
    let empty = psds1(&[silent], &refs, &params, &detector).map_err(|e| e.to_string())?;
    ensure!(perfect == 1.0, "perfect detector scored {perfect}");
    ensure!(empty == 0.0, "empty detector scored {empty}");
    Ok(format!(
        "{scenarios} scenarios ({nontrivial} strictly inside (0,1)), max |diff| {worst:.1e}; perfect 1.0, empty 0.0"
    ))
}

// ---------------------------------------------------------------------------

fn segment_posts(scores: &[Vec<f64>]) -> Vec<Posteriorgram> {
    scores
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let arr = Array2::from_shape_vec((1, row.len()), row.clone()).unwrap();
            Posteriorgram::new(format!("c{k}"), arr, 1.0).unwrap()
        })
        .collect()
}

fn segment_refs(labels: &[Vec<bool>]) -> Vec<SoftSegment> {
    let mut out = Vec::new();
    for (k, row) in labels.iter().enumerate() {
        for (t, &l) in row.iter().enumerate() {
            out.push(SoftSegment {
                clip_id: format!("c{k}"),
                onset: t as f64,
                offset: t as f64 + 1.0,
                class: 0,
                confidence: if l { 1.0 } else { 0.0 },
            });
        }
    }
    out
}

fn mpauc_properties() -> Outcome {
    let params = MpaucParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (clips, len) = (100, 100);
    let labels: Vec<Vec<bool>> = (0..clips).map(|_| (0..len).map(|_| rng.gen_bool(0.5)).collect()).collect();
    let refs = segment_refs(&labels);

    let perfect: Vec<Vec<f64>> = labels
        .iter()
        .map(|r| r.iter().map(|&l| if l { 0.9 } else { 0.1 }).collect())
        .collect();
    let p = mpauc_soft(&segment_posts(&perfect), &refs, &[0], &params).map_err(|e| e.to_string())?;
    ensure!(p == 1.0, "perfect separation gave {p}");

    let random: Vec<Vec<f64>> = (0..clips).map(|_| (0..len).map(|_| rng.gen::<f64>()).collect()).collect();
    let chance = mpauc_soft(&segment_posts(&random), &refs, &[0], &params).map_err(|e| e.to_string())?;
    ensure!((chance - 0.5).abs() <= 0.05, "chance level {chance}");

    let informative: Vec<Vec<f64>> = labels
        .iter()
        .map(|r| r.iter().map(|&l| (0.6 * rng.gen::<f64>() + if l { 0.4 } else { 0.0 }).min(1.0)).collect())
        .collect();
    let base = mpauc_soft(&segment_posts(&informative), &refs, &[0], &params).map_err(|e| e.to_string())?;
    let transforms: [(&str, fn(f64) -> f64); 3] = [
        ("cube", |v| v * v * v),
        ("sqrt", f64::sqrt),
        ("logistic", |v| 1.0 / (1.0 + (-8.0 * (v - 0.5)).exp())),
    ];
    for (name, f) in transforms {
        let mapped: Vec<Vec<f64>> = informative.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect();
        let m = mpauc_soft(&segment_posts(&mapped), &refs, &[0], &params).map_err(|e| e.to_string())?;
        ensure!(m.to_bits() == base.to_bits(), "{name} transform changed mpAUC {base} -> {m}");
    }
    Ok(format!(
        "perfect 1.0; chance {chance:.4} on {} segments; cube/sqrt/logistic invariant at {base:.4}",
        clips * len
    ))
}

// ---------------------------------------------------------------------------

struct TrendRun {
    seed: u64,
    result: PipelineResult,
    elapsed: Duration,
}

const TREND_SEEDS: [u64; 3] = [0, 1, 2];

/// Desk-sized pipelines for the fixed seeds, shared by the selection-record
/// and trend criteria.
fn trend_runs() -> &'static Result<Vec<TrendRun>, String> {
    static RUNS: OnceLock<Result<Vec<TrendRun>, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        TREND_SEEDS
            .iter()
            .map(|&seed| {
                let start = Instant::now();
                let mut cfg = PipelineConfig::default();
                cfg.seed = seed;
                cfg.corpus.seed = seed;
                let corpus = generate_synthetic_corpus(&cfg.corpus).map_err(|e| e.to_string())?;
                let result = run_pipeline(&cfg, &corpus).map_err(|e| format!("seed {seed}: {e}"))?;
                Ok(TrendRun {
                    seed,
                    result,
                    elapsed: start.elapsed(),
                })
            })
            .collect()
    })
}

fn all_records(result: &PipelineResult) -> Vec<SelectionRecord> {
    let mut out = Vec::new();
    for m in &result.members {
        out.extend(&m.s1.history);
        out.extend(&m.s2.history);
    }
    for run in [&result.i2s1, &result.i2s2].into_iter().flatten() {
        out.extend(&run.history);
    }
    out
}

fn rank_score_exact() -> Outcome {
    let s = rank_score(0.548, 0.750);
    ensure!(s == 1.298, "0.750 + 0.548 = {s:?}");
    let runs = trend_runs().as_ref().map_err(Clone::clone)?;
    let mut n = 0;
    for run in runs {
        for r in all_records(&run.result) {
            n += 1;
            ensure!(r.is_consistent(), "seed {} record {:?} is not its exact sum", run.seed, r);
            ensure!(
                r.score.to_bits() == (r.psds1_synth + r.psds1_real + r.mpauc).to_bits(),
                "seed {} epoch {} score differs from the sum",
                run.seed,
                r.epoch
            );
        }
    }
    let stored = determinism_runs().as_ref().map_err(Clone::clone)?;
    let mut m = 0;
    for file in files_under(&stored.0).iter().filter(|p| p.to_string_lossy().ends_with(".selection.json")) {
        let records: Vec<SelectionRecord> =
            serde_json::from_str(&fs::read_to_string(file).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for r in records {
            m += 1;
            ensure!(r.is_consistent(), "stored record in {} is not its exact sum", file.display());
        }
    }
    Ok(format!("0.750 + 0.548 == 1.298 exactly; {n} in-memory and {m} stored selection records consistent"))
}

// ---------------------------------------------------------------------------

fn alignment_closed_forms() -> Outcome {
    let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
    let pooled = align_sequence(&row(&[1.0, 2.0, 3.0, 4.0]), 2, AlignMethod::AdaptiveAvgPool).map_err(|e| e.to_string())?;
    ensure!(pooled.row(0).to_vec() == vec![1.5, 3.5], "avg-pool gave {pooled:?}");
    let (a, b) = (0.3, -1.7);
    let near = align_sequence(&row(&[a, b]), 4, AlignMethod::NearestExact).map_err(|e| e.to_string())?;
    ensure!(near.row(0).to_vec() == vec![a, a, b, b], "nearest-exact gave {near:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for method in AlignMethod::ALL {
        for _ in 0..1000 {
            let len_in = rng.gen_range(1..40);
            let len_out = rng.gen_range(1..40);
            let dims = rng.gen_range(1..4);
            let x = Array2::from_shape_fn((dims, len_in), |_| rng.gen_range(-1.0..1.0));
            let y = Array2::from_shape_fn((dims, len_in), |_| rng.gen_range(-1.0..1.0));
            let (al, be) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let lhs = align_sequence(&(&x * al + &y * be), len_out, method).map_err(|e| e.to_string())?;
            let rhs = align_sequence(&x, len_out, method).map_err(|e| e.to_string())? * al
                + align_sequence(&y, len_out, method).map_err(|e| e.to_string())? * be;
            let diff = (&lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            worst = worst.max(diff);
            ensure!(diff <= 1e-12, "{method:?} not linear: {diff:e}");
        }
    }
    Ok(format!("avg-pool and nearest-exact closed forms; linearity over 1000 vectors per method, max dev {worst:.1e}"))
}

// ---------------------------------------------------------------------------

fn batch_composition() -> Outcome {
    let corpus = generate_synthetic_corpus(&CorpusConfig::default()).map_err(|e| e.to_string())?;
    for (comp, expect) in [
        (BatchComposition::STAGE1, [12, 10, 10, 20, 20]),
        (BatchComposition::STAGE2, [56, 40, 40, 72, 72]),
    ] {
        let mut state = EpochState::new(3);
        for b in 0..100 {
            let batch = sample_batch(&corpus.train, &comp, &mut state).map_err(|e| e.to_string())?;
            let mut counts = [0usize; 5];
            for clip in &batch {
                counts[clip.subset.index()] += 1;
            }
            ensure!(counts == expect, "batch {b} of {expect:?} had {counts:?}");
        }
    }
    Ok("(12,10,10,20,20) and (56,40,40,72,72) exact over 100 batches each".into())
}

// ---------------------------------------------------------------------------

fn class_mapping() -> Outcome {
    let vocab = ClassVocabulary::dcase2024();
    let mapping = ClassMapping::dcase2024(&vocab).map_err(|e| e.to_string())?;
    let idx = |n: &str| vocab.index_of(n).ok_or(format!("no class {n}"));
    let (speech, talking) = (idx("Speech")?, idx("people talking")?);
    let (dishes, cutlery) = (idx("Dishes")?, idx("cutlery and dishes")?);
    let frames = 50;

    let mut maestro = FrameLabelGrid::zeros(vocab.len(), frames);
    maestro.loss_mask = vocab.native_mask(Origin::Maestro);
    for t in 10..=20 {
        maestro.targets[[talking, t]] = 0.7;
    }
    let mapped = map_frame_labels(&maestro, &mapping, Origin::Maestro).map_err(|e| e.to_string())?;
    for t in 0..frames {
        let want = if (10..=20).contains(&t) { 0.7 } else { 0.0 };
        ensure!(mapped.targets[[speech, t]] == want, "Speech frame {t}: {}", mapped.targets[[speech, t]]);
    }
    ensure!(mapped.loss_mask[speech], "Speech not added to the MAESTRO clip's mask");

    let mut desed = FrameLabelGrid::zeros(vocab.len(), frames);
    desed.loss_mask = vocab.native_mask(Origin::Desed);
    for t in 5..15 {
        desed.targets[[dishes, t]] = 1.0;
    }
    let mapped = map_frame_labels(&desed, &mapping, Origin::Desed).map_err(|e| e.to_string())?;
    for t in 0..frames {
        let want = if (5..15).contains(&t) { 1.0 } else { 0.0 };
        ensure!(mapped.targets[[cutlery, t]] == want, "cutlery frame {t}: {}", mapped.targets[[cutlery, t]]);
    }
    ensure!(mapped.loss_mask[cutlery], "cutlery not added to the DESED clip's mask");

    let mut weak_m = WeakLabels {
        targets: vec![0.0; vocab.len()],
        loss_mask: vocab.native_mask(Origin::Maestro),
    };
    weak_m.targets[talking] = 0.7;
    let w = map_weak_labels(&weak_m, &mapping, Origin::Maestro).map_err(|e| e.to_string())?;
    ensure!(w.targets[speech] == 0.7 && w.loss_mask[speech], "weak MAESTRO->DESED copy failed: {:?}", w.targets);
    let mut weak_d = WeakLabels {
        targets: vec![0.0; vocab.len()],
        loss_mask: vocab.native_mask(Origin::Desed),
    };
    weak_d.targets[dishes] = 1.0;
    let w = map_weak_labels(&weak_d, &mapping, Origin::Desed).map_err(|e| e.to_string())?;
    ensure!(w.targets[cutlery] == 1.0 && w.loss_mask[cutlery], "weak DESED->MAESTRO set-to-1 failed: {:?}", w.targets);
    Ok("confidence copy MAESTRO->DESED and set-to-1 DESED->MAESTRO, strong and weak".into())
}

// ---------------------------------------------------------------------------

fn sebb_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for hop in [0.2, 0.1, 0.05] {
        for &step in &step_grid() {
            let p = SebbParams::new(step, 2.0, 0.2);
            let l = p.filter_frames(hop).map_err(|e| e.to_string())?;
            let n = (10.0 / hop).round() as usize;
            for _ in 0..20 {
                let len = rng.gen_range(l..n / 2);
                let a = rng.gen_range(0..n - len);
                let b = a + len;
                let row: Vec<f64> = (0..n).map(|t| if (a..b).contains(&t) { 1.0 } else { 0.0 }).collect();
                let events = sebb_row(&row, 0, hop, &p).map_err(|e| e.to_string())?;
                ensure!(events.len() == 1, "hop {hop} L {l} pulse {a}..{b}: {} events", events.len());
                let (on, off) = (events[0].onset / hop, events[0].offset / hop);
                let tol = (l / 2) as f64 + 1e-9;
                ensure!(
                    (on - a as f64).abs() <= tol && (off - b as f64).abs() <= tol,
                    "hop {hop} L {l} pulse {a}..{b} recovered as {on}..{off}"
                );
                cases += 1;
            }
        }
    }

    let mut two = vec![0.0; 50];
    two[5..15].fill(0.9);
    two[15..20].fill(0.5);
    two[20..30].fill(0.9);
    for (rel, abs, merged) in [
        (1.8, 0.6, true),
        (3.25, 0.6, true),
        (1.5, 0.5, true),
        (1.5, 0.15, true),
        (1.75, 0.55, false),
        (1.5, 0.6, false),
        (1.79, 0.51, false),
    ] {
        let events = sebb_row(&two, 0, 0.2, &SebbParams::new(0.4, rel, abs)).map_err(|e| e.to_string())?;
        let want = if merged { 1 } else { 2 };
        ensure!(events.len() == want, "rel {rel} abs {abs}: {} events, expected {want}", events.len());
    }

    let expect = |lo: f64, hi: f64| -> Vec<f64> { (0..8).map(|i| lo + (hi - lo) * i as f64 / 7.0).collect() };
    for (name, grid, lo, hi) in [
        ("step", step_grid(), 0.38, 0.66),
        ("rel", rel_grid(), 1.5, 3.25),
        ("abs", abs_grid(), 0.15, 0.325),
    ] {
        ensure!(grid.len() == 8, "{name} grid has {} points", grid.len());
        ensure!(grid[0] == lo && grid[7] == hi, "{name} grid endpoints {:?}", (grid[0], grid[7]));
        for (g, e) in grid.iter().zip(expect(lo, hi)) {
            ensure!((g - e).abs() <= 1e-15, "{name} grid value {g} vs {e}");
        }
    }
    Ok(format!("{cases} pulses within L/2; 7 merge/split cases; grids exact"))
}

// ---------------------------------------------------------------------------

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn test_psds(rows: &[ReportRow], system: &str, stage: Stage) -> Option<f64> {
    rows.iter()
        .find(|r| r.system == system && r.stage == stage.to_string())
        .and_then(|r| r.metrics.psds1)
}

fn end_to_end_trend() -> Outcome {
    let runs = trend_runs().as_ref().map_err(Clone::clone)?;
    let mut pooled: BTreeMap<Stage, Vec<f64>> = BTreeMap::new();
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for run in runs {
        for (stage, records) in run.result.stage_scores() {
            pooled.entry(stage).or_default().extend(records.iter().map(|r| r.score));
        }
        let rows = &run.result.report;
        let best_member = (0..run.result.members.len())
            .filter_map(|k| test_psds(rows, &format!("member{k}"), Stage::I1S2))
            .fold(f64::MIN, f64::max);
        let ensemble = test_psds(rows, "ensemble", Stage::I1S2).unwrap_or(f64::NAN);
        notes.push(format!(
            "seed {}: ensemble {ensemble:.3} vs best member {best_member:.3}, {}",
            run.seed,
            secs(run.elapsed)
        ));
        if !(ensemble >= best_member) {
            failures.push(format!("seed {} ensemble PSDS1 {ensemble} < best member {best_member}", run.seed));
        }
        if run.elapsed >= Duration::from_secs(600) {
            failures.push(format!("seed {} took {}", run.seed, secs(run.elapsed)));
        }
    }
    let medians: Vec<(Stage, f64)> = Stage::ALL.iter().map(|s| (*s, median(pooled[s].clone()))).collect();
    for w in medians.windows(2) {
        if w[1].1 < w[0].1 {
            failures.push(format!("median {} {:.3} < {} {:.3}", w[1].0, w[1].1, w[0].0, w[0].1));
        }
    }
    let trend = medians
        .iter()
        .map(|(s, m)| format!("{s} {m:.3}"))
        .collect::<Vec<_>>()
        .join(" -> ");
    let detail = format!("median validation rank score {trend}; {}", notes.join("; "));
    ensure!(failures.is_empty(), "{}; {detail}", failures.join("; "));
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        if let Ok(entries) = fs::read_dir(&d) {
            for e in entries.flatten() {
                let p = e.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p);
                }
            }
        }
    }
    out.sort();
    out
}

fn determinism_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 5;
    cfg.corpus.seed = 5;
    cfg.jobs = 2;
    cfg.tune_sebb = true;
    cfg.stages.for_each_mut(|s| s.epochs = 2);
    cfg
}

/// Two runs of one config into separate directories.
fn determinism_runs() -> &'static Result<(PathBuf, PathBuf), String> {
    static RUNS: OnceLock<Result<(PathBuf, PathBuf), String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = std::env::temp_dir().join(format!("hetsed-acceptance-{}", std::process::id()));
        let dirs = (root.join("a"), root.join("b"));
        for dir in [&dirs.0, &dirs.1] {
            let cfg = determinism_config();
            let corpus = generate_synthetic_corpus(&cfg.corpus).map_err(|e| e.to_string())?;
            let result = run_pipeline(&cfg, &corpus).map_err(|e| e.to_string())?;
            write_pipeline_outputs(&result, &corpus, dir).map_err(|e| e.to_string())?;
        }
        Ok(dirs)
    })
}

fn determinism() -> Outcome {
    let (a, b) = determinism_runs().as_ref().map_err(Clone::clone)?;
    let fa = files_under(a);
    let fb = files_under(b);
    let rel = |root: &Path, v: &[PathBuf]| -> Vec<PathBuf> {
        v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect()
    };
    ensure!(rel(a, &fa) == rel(b, &fb), "runs produced different file sets");
    let checkpoints = fa.iter().filter(|p| p.extension().is_some_and(|e| e == "ckpt")).count();
    let csvs = fa.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    ensure!(checkpoints >= 4 && csvs >= 1, "expected checkpoints and a report, found {checkpoints} and {csvs}");
    for (x, y) in fa.iter().zip(&fb) {
        let (bx, by) = (fs::read(x).map_err(|e| e.to_string())?, fs::read(y).map_err(|e| e.to_string())?);
        ensure!(bx == by, "{} differs between runs", x.strip_prefix(a).unwrap().display());
    }
    Ok(format!("{} files identical ({checkpoints} checkpoints, {csvs} CSV), two threads per run", fa.len()))
}

// ---------------------------------------------------------------------------

fn ablation_harness() -> Outcome {
    let base = PipelineConfig::smoke();
    let arms: Vec<Vec<AblationFlag>> = AblationFlag::ALL.iter().map(|f| vec![*f]).collect();
    let start = Instant::now();
    let results = run_ablation(&base, &arms, None, 1).map_err(|e| e.to_string())?;
    ensure!(results.len() == arms.len() + 1, "{} rows for {} arms", results.len(), arms.len() + 1);
    let rows: Vec<ReportRow> = results.iter().map(|a| a.row.clone()).collect();
    for r in &rows {
        ensure!(r.metrics.psds1.is_some() || r.metrics.mpauc.is_some(), "{} has no metric", r.system);
    }
    let by = |name: &str| rows.iter().find(|r| r.system == name).cloned();
    let no_maestro = by("-MAESTRO").ok_or("no -MAESTRO row")?;
    ensure!(no_maestro.metrics.mpauc.is_none() && no_maestro.metrics.psds1.is_some(), "-MAESTRO row {:?}", no_maestro.metrics);
    let no_desed = by("-DESED").ok_or("no -DESED row")?;
    ensure!(no_desed.metrics.psds1.is_none() && no_desed.metrics.mpauc.is_some(), "-DESED row {:?}", no_desed.metrics);
    let table = format_report_markdown(&rows);
    for line in table.lines() {
        println!("    {line}");
    }
    Ok(format!("{} arms ran in {}; table above", rows.len(), secs(start.elapsed())))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "gradient check", gradient_correctness),
        (2, "PSDS1 oracle", psds_oracle_equivalence),
        (3, "mpAUC properties", mpauc_properties),
        (4, "rank score", rank_score_exact),
        (5, "alignment", alignment_closed_forms),
        (6, "batch composition", batch_composition),
        (7, "class mapping", class_mapping),
        (8, "SEBB", sebb_contract),
        (9, "end-to-end trend", end_to_end_trend),
        (10, "determinism", determinism),
        (11, "ablation harness", ablation_harness),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name:<20} PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} {name:<20} FAIL  {detail}");
            }
        }
    }
    if let Ok((a, _)) = determinism_runs() {
        let _ = fs::remove_dir_all(a.parent().unwrap());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
