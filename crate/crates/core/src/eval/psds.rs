//! Polyphonic sound detection score with intersection-based matching.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::{median_filter, sebb_detect, SebbParams};
use crate::types::{Event, EventList, Posteriorgram};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdsParams {
    pub dtc_threshold: f64,
    pub gtc_threshold: f64,
    pub alpha_st: f64,
    pub alpha_ct: f64,
    /// Maximum effective false-positive rate, per hour.
    pub max_efpr: f64,
    pub n_thresholds: usize,
}

impl Default for PsdsParams {
    fn default() -> Self {
        PsdsParams {
            dtc_threshold: 0.7,
            gtc_threshold: 0.7,
            alpha_st: 1.0,
            alpha_ct: 0.0,
            max_efpr: 100.0,
            n_thresholds: 50,
        }
    }
}

impl PsdsParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.dtc_threshold) || !unit(self.gtc_threshold) {
            return Err(Error::Config("DTC and GTC thresholds must lie in (0, 1]".into()));
        }
        if self.alpha_ct != 0.0 {
            return Err(Error::Config("cross-trigger scoring is not supported".into()));
        }
        if !(self.alpha_st >= 0.0) || !(self.max_efpr > 0.0) || self.n_thresholds == 0 {
            return Err(Error::Config(format!("invalid PSDS parameters {self:?}")));
        }
        Ok(())
    }

    /// Operating thresholds, equally spaced inside (0, 1).
    pub fn thresholds(&self) -> Vec<f64> {
        let n = self.n_thresholds as f64;
        (0..self.n_thresholds).map(|i| (i as f64 + 0.5) / n).collect()
    }
}

/// Turns a posteriorgram into detections at one operating threshold.
pub trait Detector: Sync {
    fn detect(&self, post: &Posteriorgram, threshold: f64) -> Result<EventList>;
}

/// Class-wise median filter, then frames scoring at least the threshold
/// form events.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdDetector {
    pub windows: Vec<usize>,
}

impl ThresholdDetector {
    pub fn new(window: usize) -> Self {
        ThresholdDetector {
            windows: vec![window],
        }
    }
}

/// Active runs of a binarized row as events.
pub fn binarize_row(row: &[f64], class: usize, frame_hop: f64, threshold: f64) -> Vec<Event> {
    let mut events = Vec::new();
    let mut start = None;
    for t in 0..=row.len() {
        let on = t < row.len() && row[t] >= threshold;
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                events.push(Event::new(s as f64 * frame_hop, t as f64 * frame_hop, class));
                start = None;
            }
            _ => {}
        }
    }
    events
}

impl Detector for ThresholdDetector {
    fn detect(&self, post: &Posteriorgram, threshold: f64) -> Result<EventList> {
        let filtered = median_filter(post, &self.windows)?;
        let mut list = EventList::new(post.clip_id.clone());
        for (c, row) in filtered.scores.rows().into_iter().enumerate() {
            list.events
                .extend(binarize_row(&row.to_vec(), c, post.frame_hop, threshold));
        }
        Ok(list)
    }
}

/// SEBB events whose confidence reaches the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct SebbDetector {
    pub params: Vec<SebbParams>,
}

impl Detector for SebbDetector {
    fn detect(&self, post: &Posteriorgram, threshold: f64) -> Result<EventList> {
        let mut list = sebb_detect(post, &self.params)?;
        list.events.retain(|e| e.confidence >= threshold);
        Ok(list)
    }
}

/// Length of `[a, b)` covered by the union of `intervals`.
pub(crate) fn covered_length(a: f64, b: f64, intervals: &mut Vec<(f64, f64)>) -> f64 {
    intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut total = 0.0;
    let mut reach = a;
    for &(s, e) in intervals.iter() {
        let (s, e) = (s.max(reach), e.min(b));
        if e > s {
            total += e - s;
            reach = e;
        }
    }
    total
}

/// Counts at one operating threshold for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub hits: usize,
    pub n_references: usize,
    pub false_positives: usize,
}

/// Matches the `class` events of one clip.
pub fn match_class(
    detections: &[Event],
    references: &[Event],
    class: usize,
    params: &PsdsParams,
) -> ClassCounts {
    let dets: Vec<&Event> = detections.iter().filter(|e| e.class == class).collect();
    let refs: Vec<(f64, f64)> = references
        .iter()
        .filter(|e| e.class == class)
        .map(|e| (e.onset, e.offset))
        .collect();
    let mut valid = Vec::new();
    let mut false_positives = 0;
    for d in dets {
        let inter = covered_length(d.onset, d.offset, &mut refs.clone());
        if inter >= params.dtc_threshold * d.duration() {
            valid.push((d.onset, d.offset));
        } else {
            false_positives += 1;
        }
    }
    let hits = refs
        .iter()
        .filter(|&&(s, e)| covered_length(s, e, &mut valid) >= params.gtc_threshold * (e - s))
        .count();
    ClassCounts {
        hits,
        n_references: refs.len(),
        false_positives,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub efpr: f64,
    pub tpr: f64,
}

/// Reference events keyed by clip, with the evaluated duration and class set.
#[derive(Clone, Debug)]
pub struct ReferenceIndex<'a> {
    by_clip: HashMap<&'a str, &'a [Event]>,
    pub hours: f64,
    /// Classes with at least one reference event, ascending.
    pub classes: Vec<usize>,
}

impl<'a> ReferenceIndex<'a> {
    pub fn new(posts: &[Posteriorgram], references: &'a [EventList]) -> Result<Self> {
        let classes: BTreeSet<usize> = references
            .iter()
            .flat_map(|l| l.events.iter().map(|e| e.class))
            .collect();
        if classes.is_empty() {
            return Err(Error::Data("PSDS needs at least one reference event".into()));
        }
        let clips: BTreeSet<&str> = posts.iter().map(|p| p.clip_id.as_str()).collect();
        if let Some(missing) = references.iter().find(|l| !clips.contains(l.clip_id.as_str())) {
            return Err(Error::MissingClip(missing.clip_id.clone()));
        }
        let seconds: f64 = posts.iter().map(Posteriorgram::duration).sum();
        Ok(ReferenceIndex {
            by_clip: references
                .iter()
                .map(|l| (l.clip_id.as_str(), l.events.as_slice()))
                .collect(),
            hours: seconds / 3600.0,
            classes: classes.into_iter().collect(),
        })
    }

    pub fn events(&self, clip_id: &str) -> &[Event] {
        self.by_clip.get(clip_id).copied().unwrap_or(&[])
    }

    /// Counts summed over clips for `class`.
    pub fn counts(&self, detections: &[EventList], class: usize, params: &PsdsParams) -> ClassCounts {
        let mut total = ClassCounts::default();
        for list in detections {
            let c = match_class(&list.events, self.events(&list.clip_id), class, params);
            total.hits += c.hits;
            total.false_positives += c.false_positives;
        }
        total.n_references = self
            .by_clip
            .values()
            .map(|evs| evs.iter().filter(|e| e.class == class).count())
            .sum();
        total
    }

    pub fn roc_point(&self, counts: ClassCounts) -> RocPoint {
        RocPoint {
            efpr: counts.false_positives as f64 / self.hours,
            tpr: counts.hits as f64 / counts.n_references as f64,
        }
    }
}

/// Best TPR among operating points with eFPR at most `e`.
fn roc_at(points: &[RocPoint], e: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.efpr <= e)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

/// Normalized area under mean − α_ST·std of the per-class ROC staircases on
/// [0, max_efpr], clamped to [0, 1].
pub fn psd_roc_area(rocs: &[Vec<RocPoint>], params: &PsdsParams) -> f64 {
    if rocs.is_empty() {
        return 0.0;
    }
    let mut knots: Vec<f64> = rocs
        .iter()
        .flatten()
        .map(|p| p.efpr)
        .filter(|&e| e < params.max_efpr)
        .collect();
    knots.push(0.0);
    knots.push(params.max_efpr);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let n = rocs.len() as f64;
    let mut area = 0.0;
    for w in knots.windows(2) {
        let values: Vec<f64> = rocs.iter().map(|r| roc_at(r, w[0])).collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        area += (mean - params.alpha_st * var.sqrt()) * (w[1] - w[0]);
    }
    (area / params.max_efpr).clamp(0.0, 1.0)
}

/// PSDS from detections precomputed at every operating threshold.
pub fn psds_from_detections(
    index: &ReferenceIndex,
    per_threshold: &[Vec<EventList>],
    params: &PsdsParams,
) -> f64 {
    let rocs: Vec<Vec<RocPoint>> = index
        .classes
        .iter()
        .map(|&c| {
            per_threshold
                .iter()
                .map(|dets| index.roc_point(index.counts(dets, c, params)))
                .collect()
        })
        .collect();
    psd_roc_area(&rocs, params)
}

pub fn psds1(
    posts: &[Posteriorgram],
    references: &[EventList],
    params: &PsdsParams,
    detector: &dyn Detector,
) -> Result<f64> {
    params.validate()?;
    let index = ReferenceIndex::new(posts, references)?;
    let per_threshold = params
        .thresholds()
        .into_iter()
        .map(|th| posts.iter().map(|p| detector.detect(p, th)).collect())
        .collect::<Result<Vec<Vec<EventList>>>>()?;
    Ok(psds_from_detections(&index, &per_threshold, params))
}
