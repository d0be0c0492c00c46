//! Segment-based macro partial AUC.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::synth::{soft_segments_from_events, SEGMENT_SECONDS};
use crate::ingest::SoftSegment;
use crate::types::{EventList, Posteriorgram};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpaucParams {
    pub segment_seconds: f64,
    pub max_fpr: f64,
    /// Soft references at or above this value count as positive.
    pub positive_threshold: f64,
}

impl Default for MpaucParams {
    fn default() -> Self {
        MpaucParams {
            segment_seconds: SEGMENT_SECONDS,
            max_fpr: 0.1,
            positive_threshold: 0.5,
        }
    }
}

/// Mean frame score per segment (C × segments). A frame belongs to the
/// segment containing its center.
pub fn segment_scores(post: &Posteriorgram, segment_seconds: f64) -> Array2<f64> {
    let n_seg = (post.duration() / segment_seconds - 1e-9).ceil().max(1.0) as usize;
    let mut sums = Array2::<f64>::zeros((post.n_classes(), n_seg));
    let mut counts = vec![0usize; n_seg];
    for t in 0..post.n_frames() {
        let center = (t as f64 + 0.5) * post.frame_hop;
        let s = ((center / segment_seconds) as usize).min(n_seg - 1);
        counts[s] += 1;
        for c in 0..post.n_classes() {
            sums[[c, s]] += post.scores[[c, t]];
        }
    }
    for (s, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.column_mut(s).mapv_inplace(|v| v / n as f64);
        }
    }
    sums
}

/// ROC points (fpr, tpr), one per distinct score, descending thresholds.
fn roc_curve(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        let last_of_tie = k + 1 == order.len() || scores[order[k + 1]] != scores[i];
        if last_of_tie {
            points.push((fp / n_neg, tp / n_pos));
        }
    }
    points
}

/// McClish-standardized partial AUC on FPR ∈ [0, max_fpr]: 1 for perfect
/// ranking, 0.5 for chance. `None` when either label is absent.
pub fn partial_auc(scores: &[f64], labels: &[bool], max_fpr: f64) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return None;
    }
    let roc = roc_curve(scores, labels);
    let mut area = 0.0;
    for w in roc.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= max_fpr {
            break;
        }
        if x1 <= max_fpr {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
            area += (max_fpr - x0) * (y0 + y) / 2.0;
        }
    }
    let min_area = 0.5 * max_fpr * max_fpr;
    Some(0.5 * (1.0 + (area - min_area) / (max_fpr - min_area)))
}

/// Macro mean over `classes` of segment-level partial AUC against soft
/// segment references. Classes lacking positives or negatives are skipped
/// with a warning.
pub fn mpauc_soft(
    posts: &[Posteriorgram],
    references: &[SoftSegment],
    classes: &[usize],
    params: &MpaucParams,
) -> Result<f64> {
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); classes.len()];
    let mut labels: Vec<Vec<bool>> = vec![Vec::new(); classes.len()];
    for post in posts {
        let seg = segment_scores(post, params.segment_seconds);
        let n_seg = seg.ncols();
        let mut truth = Array2::<f64>::zeros((post.n_classes(), n_seg));
        for r in references.iter().filter(|r| r.clip_id == post.clip_id) {
            let s = ((0.5 * (r.onset + r.offset)) / params.segment_seconds) as usize;
            if r.class < post.n_classes() && s < n_seg {
                truth[[r.class, s]] = truth[[r.class, s]].max(r.confidence);
            }
        }
        for (k, &c) in classes.iter().enumerate() {
            if c >= post.n_classes() {
                return Err(Error::Shape(format!(
                    "class {c} outside the {}-class posteriorgram",
                    post.n_classes()
                )));
            }
            scores[k].extend(seg.row(c).iter());
            labels[k].extend(truth.row(c).iter().map(|&v| v >= params.positive_threshold));
        }
    }
    let mut values = Vec::new();
    for (k, &c) in classes.iter().enumerate() {
        match partial_auc(&scores[k], &labels[k], params.max_fpr) {
            Some(v) => values.push(v),
            None => log::warn!("class {c} has no positive or no negative segments; excluded from mpAUC"),
        }
    }
    if values.is_empty() {
        return Err(Error::Data(
            "mpAUC undefined: no class has both positive and negative segments".into(),
        ));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// [`mpauc_soft`] with segment references derived from event coverage.
pub fn mpauc(
    posts: &[Posteriorgram],
    references: &[EventList],
    classes: &[usize],
    params: &MpaucParams,
) -> Result<f64> {
    let mut segments = Vec::new();
    for post in posts {
        if let Some(list) = references.iter().find(|l| l.clip_id == post.clip_id) {
            segments.extend(soft_segments_from_events(
                &list.clip_id,
                &list.events,
                post.duration(),
            ));
        }
    }
    mpauc_soft(posts, &segments, classes, params)
}
