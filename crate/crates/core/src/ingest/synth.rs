//! Desk-scale stand-in for the DESED and MAESTRO training data.
//!
//! Every class is backed by a spectral prototype (a frequency-localized energy
//! bump with a class-specific temporal envelope). Events are placed at random
//! over background noise and the labels are derived from the event lists with
//! the same rasterization rules used for real annotation files, so a corpus
//! written to disk and loaded back produces identical clip records.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::tsv::SoftSegment;
use crate::types::{ClipRecord, Event, EventList, FrameLabelGrid, Origin, Subset, WeakLabels};
use crate::vocab::{ClassMapping, ClassVocabulary};

/// Length of a MAESTRO soft-label segment in seconds.
pub const SEGMENT_SECONDS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Training clips per subset, in [`Subset::ALL`] order.
    pub n_train: [usize; 5],
    pub n_val: usize,
    pub n_test: usize,
    pub clip_seconds: f64,
    pub n_bins: usize,
    pub input_frames: usize,
    pub output_frames: usize,
    pub n_desed_classes: usize,
    pub n_maestro_classes: usize,
    /// Mean number of events per clip.
    pub event_rate: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: [48, 40, 48, 48, 96],
            n_val: 24,
            n_test: 24,
            clip_seconds: 10.0,
            n_bins: 32,
            input_frames: 100,
            output_frames: 50,
            n_desed_classes: 5,
            n_maestro_classes: 4,
            event_rate: 2.0,
            noise_level: 0.1,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_desed_classes == 0 || self.n_maestro_classes == 0 {
            return Err(Error::Config(
                "corpus needs classes in both datasets".into(),
            ));
        }
        if self.n_train.iter().all(|&n| n == 0) || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Config("corpus needs clips in every split".into()));
        }
        if self.n_bins == 0 || self.input_frames == 0 || self.output_frames == 0 {
            return Err(Error::Config("feature geometry must be positive".into()));
        }
        if !(self.clip_seconds > 0.0) || !(self.event_rate >= 0.0) || !(self.noise_level >= 0.0) {
            return Err(Error::Config(
                "duration, event rate and noise must be valid".into(),
            ));
        }
        Ok(())
    }

    pub fn output_hop(&self) -> f64 {
        self.clip_seconds / self.output_frames as f64
    }

    pub fn input_hop(&self) -> f64 {
        self.clip_seconds / self.input_frames as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalKind {
    DesedSynth,
    DesedReal,
    Maestro,
}

impl EvalKind {
    pub fn origin(self) -> Origin {
        match self {
            EvalKind::Maestro => Origin::Maestro,
            _ => Origin::Desed,
        }
    }

    fn subset(self) -> Subset {
        match self {
            EvalKind::DesedSynth => Subset::DesedSynthStrong,
            EvalKind::DesedReal => Subset::DesedRealStrong,
            EvalKind::Maestro => Subset::MaestroStrong,
        }
    }
}

/// A held-out split with ground-truth events.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSplit {
    pub name: String,
    pub kind: EvalKind,
    pub clips: Vec<ClipRecord>,
    pub references: Vec<EventList>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub config: CorpusConfig,
    pub vocab: ClassVocabulary,
    pub mapping: ClassMapping,
    /// Training clips per subset, in [`Subset::ALL`] order.
    pub train: [Vec<ClipRecord>; 5],
    /// Ground-truth events of every training clip, by clip id.
    pub train_events: HashMap<String, EventList>,
    pub val: Vec<EvalSplit>,
    pub test: Vec<EvalSplit>,
}

impl SyntheticCorpus {
    pub fn subset(&self, subset: Subset) -> &[ClipRecord] {
        &self.train[subset.index()]
    }

    pub fn val_split(&self, kind: EvalKind) -> Option<&EvalSplit> {
        self.val.iter().find(|s| s.kind == kind)
    }

    pub fn test_split(&self, kind: EvalKind) -> Option<&EvalSplit> {
        self.test.iter().find(|s| s.kind == kind)
    }

    pub fn all_train_clips(&self) -> impl Iterator<Item = &ClipRecord> {
        self.train.iter().flatten()
    }

    /// Content hash over features and labels of every split.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut clip = |c: &ClipRecord| {
            h.update(c.clip_id.as_bytes());
            h.update([c.subset.index() as u8]);
            for v in c.features.iter() {
                h.update(v.to_le_bytes());
            }
            if let Some(s) = &c.strong {
                for v in s.targets.iter() {
                    h.update(v.to_le_bytes());
                }
            }
            if let Some(w) = &c.weak {
                for v in &w.targets {
                    h.update(v.to_le_bytes());
                }
            }
        };
        for c in self.all_train_clips() {
            clip(c);
        }
        for split in self.val.iter().chain(self.test.iter()) {
            for c in &split.clips {
                clip(c);
            }
        }
        hex::encode(h.finalize())
    }
}

/// Concept backing each union class; the first two classes of each dataset
/// share concepts with their counterpart.
fn concept_of(vocab: &ClassVocabulary, class: usize) -> usize {
    let n_desed = vocab.desed().len();
    if class < n_desed {
        class
    } else {
        let j = class - n_desed;
        if j < 2 {
            j
        } else {
            n_desed + j - 2
        }
    }
}

#[derive(Clone, Debug)]
struct Prototype {
    spectrum: Vec<f64>,
    mod_rate: f64,
    mod_depth: f64,
}

fn prototypes(n_concepts: usize, n_bins: usize) -> Vec<Prototype> {
    (0..n_concepts)
        .map(|k| {
            let center = (k as f64 + 0.5) * n_bins as f64 / n_concepts as f64;
            let width = (n_bins as f64 / (2.5 * n_concepts as f64)).max(0.75);
            let harmonic = (center + n_bins as f64 / 3.0) % n_bins as f64;
            let spectrum = (0..n_bins)
                .map(|f| {
                    let f = f as f64;
                    let main = (-0.5 * ((f - center) / width).powi(2)).exp();
                    let second = if k % 2 == 1 {
                        0.5 * (-0.5 * ((f - harmonic) / width).powi(2)).exp()
                    } else {
                        0.0
                    };
                    main + second
                })
                .collect();
            Prototype {
                spectrum,
                mod_rate: 0.25 * (k % 4) as f64,
                mod_depth: if k % 3 == 0 { 0.0 } else { 0.4 },
            }
        })
        .collect()
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Merges overlapping same-class events so references are disjoint per class.
fn merge_same_class(mut events: Vec<Event>) -> Vec<Event> {
    events.sort_by(|a, b| {
        a.class
            .cmp(&b.class)
            .then(a.onset.partial_cmp(&b.onset).unwrap())
    });
    let mut out: Vec<Event> = Vec::new();
    for e in events {
        match out.last_mut() {
            Some(last) if last.class == e.class && e.onset <= last.offset => {
                last.offset = last.offset.max(e.offset);
            }
            _ => out.push(e),
        }
    }
    out.sort_by(|a, b| {
        a.onset
            .partial_cmp(&b.onset)
            .unwrap()
            .then(a.class.cmp(&b.class))
    });
    out
}

/// Frame `f` is active iff the event covers at least half of
/// `[f·hop, (f+1)·hop)`.
pub fn strong_grid_from_events(
    events: &[Event],
    n_classes: usize,
    n_frames: usize,
    duration: f64,
    loss_mask: Vec<bool>,
) -> FrameLabelGrid {
    let hop = duration / n_frames as f64;
    let mut grid = FrameLabelGrid::zeros(n_classes, n_frames);
    for e in events {
        for f in 0..n_frames {
            let (t0, t1) = (f as f64 * hop, (f + 1) as f64 * hop);
            if overlap(e.onset, e.offset, t0, t1) >= 0.5 * hop - 1e-12 {
                grid.targets[[e.class, f]] = 1.0;
            }
        }
    }
    grid.loss_mask = loss_mask;
    grid
}

/// Per-segment coverage fraction of each class, for segments with non-zero
/// coverage.
pub fn soft_segments_from_events(
    clip_id: &str,
    events: &[Event],
    duration: f64,
) -> Vec<SoftSegment> {
    let n_segments = (duration / SEGMENT_SECONDS).ceil() as usize;
    let mut classes: Vec<usize> = events.iter().map(|e| e.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut rows = Vec::new();
    for s in 0..n_segments {
        let t0 = s as f64 * SEGMENT_SECONDS;
        let t1 = (t0 + SEGMENT_SECONDS).min(duration);
        for &class in &classes {
            let covered: f64 = events
                .iter()
                .filter(|e| e.class == class)
                .map(|e| overlap(e.onset, e.offset, t0, t1))
                .sum();
            if covered > 0.0 {
                rows.push(SoftSegment {
                    clip_id: clip_id.to_string(),
                    onset: t0,
                    offset: t1,
                    class,
                    confidence: (covered / (t1 - t0)).min(1.0),
                });
            }
        }
    }
    rows
}

/// Each frame takes the confidence of the segment containing its center.
pub fn grid_from_soft_segments(
    segments: &[SoftSegment],
    n_classes: usize,
    n_frames: usize,
    duration: f64,
    loss_mask: Vec<bool>,
) -> FrameLabelGrid {
    let hop = duration / n_frames as f64;
    let mut grid = FrameLabelGrid::zeros(n_classes, n_frames);
    for seg in segments {
        for f in 0..n_frames {
            let center = (f as f64 + 0.5) * hop;
            if seg.onset <= center && center < seg.offset {
                let cell = &mut grid.targets[[seg.class, f]];
                *cell = cell.max(seg.confidence);
            }
        }
    }
    grid.loss_mask = loss_mask;
    grid
}

pub fn weak_from_events(events: &[Event], n_classes: usize, loss_mask: Vec<bool>) -> WeakLabels {
    let mut targets = vec![0.0; n_classes];
    for e in events {
        targets[e.class] = 1.0;
    }
    WeakLabels { targets, loss_mask }
}

/// Builds the clip record of `subset` from features and ground-truth events,
/// exactly as a loader would from annotation files.
pub fn clip_from_events(
    clip_id: &str,
    subset: Subset,
    features: Array2<f64>,
    events: &[Event],
    vocab: &ClassVocabulary,
    output_frames: usize,
    duration: f64,
) -> ClipRecord {
    let n_classes = vocab.len();
    let mask = vocab.native_mask(subset.origin());
    let (strong, weak) = match subset {
        Subset::MaestroStrong => {
            let segs = soft_segments_from_events(clip_id, events, duration);
            (
                Some(grid_from_soft_segments(
                    &segs,
                    n_classes,
                    output_frames,
                    duration,
                    mask,
                )),
                None,
            )
        }
        Subset::DesedRealStrong | Subset::DesedSynthStrong => (
            Some(strong_grid_from_events(
                events,
                n_classes,
                output_frames,
                duration,
                mask,
            )),
            None,
        ),
        Subset::DesedWeak => (None, Some(weak_from_events(events, n_classes, mask))),
        Subset::DesedUnlabeled => (None, None),
    };
    ClipRecord {
        clip_id: clip_id.to_string(),
        features,
        subset,
        strong,
        weak,
        pseudo: None,
    }
}

struct Generator<'a> {
    config: &'a CorpusConfig,
    vocab: &'a ClassVocabulary,
    protos: Vec<Prototype>,
}

impl Generator<'_> {
    fn events(&self, rng: &mut ChaCha8Rng, origin: Origin) -> Vec<Event> {
        let duration = self.config.clip_seconds;
        let n = if self.config.event_rate > 0.0 {
            let draw: f64 = Poisson::new(self.config.event_rate).unwrap().sample(rng);
            (draw as usize).min(6)
        } else {
            0
        };
        let classes = self.vocab.native_range(origin);
        let (min_len, max_len): (f64, f64) = match origin {
            Origin::Desed => (0.5, 4.0),
            Origin::Maestro => (1.0, 6.0),
        };
        let events = (0..n)
            .map(|_| {
                let class = rng.gen_range(classes.clone());
                let len = rng.gen_range(min_len..max_len).min(duration);
                let onset = rng.gen_range(0.0..=(duration - len));
                // quantize to 10 ms like real annotation files
                let onset = (onset * 100.0).round() / 100.0;
                let offset = ((onset + len) * 100.0).round().min(duration * 100.0) / 100.0;
                Event::new(onset, offset, class)
            })
            .filter(|e| e.offset > e.onset)
            .collect();
        merge_same_class(events)
    }

    /// Log-compressed energy grid: noise floor plus class prototypes.
    fn features(&self, rng: &mut ChaCha8Rng, events: &[Event], real: bool) -> Array2<f64> {
        let cfg = self.config;
        let (n_bins, n_frames) = (cfg.n_bins, cfg.input_frames);
        let hop = cfg.input_hop();
        let noise = if real {
            2.0 * cfg.noise_level
        } else {
            cfg.noise_level
        };
        // "real" recordings get a random channel tilt
        let tilt: f64 = if real { rng.gen_range(-0.5..0.5) } else { 0.0 };
        let jitter = Normal::new(0.0, 0.3).unwrap();
        let mut energy = Array2::from_shape_fn((n_bins, n_frames), |_| {
            noise * (jitter.sample(rng) as f64).exp()
        });
        for e in events {
            let proto = &self.protos[concept_of(self.vocab, e.class)];
            let gain: f64 = rng.gen_range(0.4..1.5);
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            for t in 0..n_frames {
                let (t0, t1) = (t as f64 * hop, (t + 1) as f64 * hop);
                let cover = overlap(e.onset, e.offset, t0, t1) / hop;
                if cover <= 0.0 {
                    continue;
                }
                let center = 0.5 * (t0 + t1);
                let env = 1.0 - proto.mod_depth
                    + proto.mod_depth * (2.0 * PI * proto.mod_rate * center + phase).cos().abs();
                for f in 0..n_bins {
                    energy[[f, t]] += gain * cover * env * proto.spectrum[f];
                }
            }
        }
        Array2::from_shape_fn((n_bins, n_frames), |(f, t)| {
            let bin_tilt = 1.0 + tilt * (f as f64 / n_bins as f64 - 0.5);
            (energy[[f, t]] * bin_tilt + 1e-2).ln()
        })
    }

    fn clip(
        &self,
        rng: &mut ChaCha8Rng,
        clip_id: String,
        subset: Subset,
        real: bool,
    ) -> (ClipRecord, EventList) {
        let events = self.events(rng, subset.origin());
        let features = self.features(rng, &events, real);
        let record = clip_from_events(
            &clip_id,
            subset,
            features,
            &events,
            self.vocab,
            self.config.output_frames,
            self.config.clip_seconds,
        );
        (record, EventList { clip_id, events })
    }
}

fn split_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

pub fn generate_synthetic_corpus(config: &CorpusConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let vocab = ClassVocabulary::synthetic(
        config.n_desed_classes.max(2),
        config.n_maestro_classes.max(2),
    )?;
    let mapping = ClassMapping::synthetic(&vocab)?;
    let n_concepts = vocab.len() - 2;
    let gen = Generator {
        config,
        vocab: &vocab,
        protos: prototypes(n_concepts, config.n_bins),
    };

    let mut train_events = HashMap::new();
    let train: [Vec<ClipRecord>; 5] = Subset::ALL.map(|subset| {
        let mut rng = split_rng(config.seed, subset.name());
        let real = matches!(subset, Subset::DesedRealStrong | Subset::MaestroStrong);
        (0..config.n_train[subset.index()])
            .map(|i| {
                let (clip, events) = gen.clip(
                    &mut rng,
                    format!("{}_{i:05}.wav", subset.name()),
                    subset,
                    real,
                );
                train_events.insert(clip.clip_id.clone(), events);
                clip
            })
            .collect()
    });

    let eval = |prefix: &str, n: usize| -> Vec<EvalSplit> {
        [EvalKind::DesedSynth, EvalKind::DesedReal, EvalKind::Maestro]
            .into_iter()
            .map(|kind| {
                let name = format!(
                    "{prefix}_{}",
                    match kind {
                        EvalKind::DesedSynth => "desed_synth",
                        EvalKind::DesedReal => "desed_real",
                        EvalKind::Maestro => "maestro",
                    }
                );
                let mut rng = split_rng(config.seed, &name);
                let real = kind != EvalKind::DesedSynth;
                let (clips, references) = (0..n)
                    .map(|i| gen.clip(&mut rng, format!("{name}_{i:05}.wav"), kind.subset(), real))
                    .unzip();
                EvalSplit {
                    name,
                    kind,
                    clips,
                    references,
                }
            })
            .collect()
    };
    let val = eval("val", config.n_val);
    let test = eval("test", config.n_test);

    Ok(SyntheticCorpus {
        config: config.clone(),
        vocab,
        mapping,
        train,
        train_events,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_train: [6, 4, 4, 4, 6],
            n_val: 4,
            n_test: 4,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic_corpus(&small()).unwrap();
        let b = generate_synthetic_corpus(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        let c = generate_synthetic_corpus(&CorpusConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn zero_rate_is_background_only() {
        let corpus = generate_synthetic_corpus(&CorpusConfig {
            event_rate: 0.0,
            ..small()
        })
        .unwrap();
        for clip in corpus.all_train_clips() {
            if let Some(s) = &clip.strong {
                assert!(s.targets.iter().all(|&v| v == 0.0));
            }
            if let Some(w) = &clip.weak {
                assert!(w.targets.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = CorpusConfig {
            n_train: [0; 5],
            ..small()
        };
        assert!(matches!(
            generate_synthetic_corpus(&cfg),
            Err(Error::Config(_))
        ));
        let cfg = CorpusConfig {
            n_desed_classes: 0,
            ..small()
        };
        assert!(matches!(
            generate_synthetic_corpus(&cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn maestro_soft_labels_cover_exactly_overlapping_segments() {
        let corpus = generate_synthetic_corpus(&CorpusConfig {
            n_train: [20, 1, 1, 1, 1],
            ..small()
        })
        .unwrap();
        let talk = corpus.vocab.index_of("people talking").unwrap();
        let hop = corpus.config.output_hop();
        let mut checked = 0;
        for clip in corpus.subset(Subset::MaestroStrong) {
            let events = &corpus.train_events[&clip.clip_id].events;
            let talks: Vec<&Event> = events.iter().filter(|e| e.class == talk).collect();
            let grid = clip.strong.as_ref().unwrap();
            for f in 0..grid.targets.ncols() {
                let seg = ((f as f64 + 0.5) * hop / SEGMENT_SECONDS).floor();
                let (s0, s1) = (seg * SEGMENT_SECONDS, (seg + 1.0) * SEGMENT_SECONDS);
                let covered: f64 = talks
                    .iter()
                    .map(|e| overlap(e.onset, e.offset, s0, s1))
                    .sum();
                assert_eq!(grid.targets[[talk, f]] > 0.0, covered > 0.0);
                assert!((grid.targets[[talk, f]] - covered / SEGMENT_SECONDS).abs() < 1e-12);
            }
            checked += talks.len();
        }
        assert!(checked > 0, "no people-talking events generated");
    }

    #[test]
    fn strong_labels_follow_half_overlap_rule() {
        let events = [Event::new(1.05, 2.0, 0)];
        let grid = strong_grid_from_events(&events, 1, 50, 10.0, vec![true]);
        // frame 5 = [1.0, 1.2): 0.15 s covered, frame 9 = [1.8, 2.0): fully covered
        assert_eq!(grid.targets[[0, 4]], 0.0);
        assert_eq!(grid.targets[[0, 5]], 1.0);
        assert_eq!(grid.targets[[0, 9]], 1.0);
        assert_eq!(grid.targets[[0, 10]], 0.0);
        let events = [Event::new(1.11, 2.0, 0)];
        let grid = strong_grid_from_events(&events, 1, 50, 10.0, vec![true]);
        assert_eq!(grid.targets[[0, 5]], 0.0);
    }

    #[test]
    fn clip_ids_disjoint_and_labels_consistent() {
        let corpus = generate_synthetic_corpus(&small()).unwrap();
        let mut ids = HashSet::new();
        for clip in corpus.all_train_clips() {
            clip.validate().unwrap();
            assert!(ids.insert(clip.clip_id.clone()));
            assert_eq!(clip.features.dim(), (32, 100));
        }
        for split in corpus.val.iter().chain(corpus.test.iter()) {
            for clip in &split.clips {
                assert!(ids.insert(clip.clip_id.clone()));
            }
        }
    }

    #[test]
    fn references_disjoint_per_class() {
        let corpus = generate_synthetic_corpus(&small()).unwrap();
        for split in &corpus.val {
            for list in &split.references {
                list.validate(10.0).unwrap();
                for a in &list.events {
                    for b in &list.events {
                        if !std::ptr::eq(a, b) && a.class == b.class {
                            assert!(a.offset < b.onset || b.offset < a.onset);
                        }
                    }
                }
            }
        }
    }
}
