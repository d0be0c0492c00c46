//! Sound event bounding boxes: step-filter change points, candidate
//! segments, and gap-based merging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Event, EventList, Posteriorgram};

/// Slack on the merge comparisons, so frame means that differ from their
/// nominal value by summation roundoff land on the intended side.
pub const MERGE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SebbParams {
    /// Seconds.
    pub step_filter_length: f64,
    pub merge_threshold_rel: f64,
    pub merge_threshold_abs: f64,
}

impl SebbParams {
    pub fn new(step_filter_length: f64, merge_threshold_rel: f64, merge_threshold_abs: f64) -> Self {
        SebbParams {
            step_filter_length,
            merge_threshold_rel,
            merge_threshold_abs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_filter_length > 0.0)
            || !(self.merge_threshold_rel >= 1.0)
            || !(0.0..=1.0).contains(&self.merge_threshold_abs)
        {
            return Err(Error::Config(format!("invalid SEBB parameters {self:?}")));
        }
        Ok(())
    }

    /// Step filter length in frames.
    pub fn filter_frames(&self, frame_hop: f64) -> Result<usize> {
        let l = (self.step_filter_length / frame_hop).round();
        if !(l >= 2.0) {
            return Err(Error::Config(format!(
                "step filter of {} s spans {l} frames at hop {frame_hop} s; at least 2 are needed",
                self.step_filter_length
            )));
        }
        Ok(l as usize)
    }
}

/// Step-filter response at every frame boundary `0..=T`:
/// mean of the `half` frames after the boundary minus mean of the `half`
/// frames before it, scores outside the clip taken as zero.
pub fn step_response(row: &[f64], half: usize) -> Vec<f64> {
    let n = row.len() as isize;
    let at = |i: isize| if (0..n).contains(&i) { row[i as usize] } else { 0.0 };
    let h = half as isize;
    (0..=n)
        .map(|t| {
            let after: f64 = (t..t + h).map(at).sum();
            let before: f64 = (t - h..t).map(at).sum();
            (after - before) / half as f64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Extremum {
    Max,
    Min,
}

/// Strict local extrema of `x`. A plateau counts when both flanking values
/// lie strictly on the same side; it is reported at its leftmost index.
/// Values beyond the ends are taken as zero.
fn extrema(x: &[f64]) -> Vec<(usize, Extremum)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < x.len() {
        let mut j = i;
        while j + 1 < x.len() && x[j + 1] == x[i] {
            j += 1;
        }
        let left = if i == 0 { 0.0 } else { x[i - 1] };
        let right = if j + 1 == x.len() { 0.0 } else { x[j + 1] };
        if x[i] > left && x[i] > right && x[i] > 0.0 {
            out.push((i, Extremum::Max));
        } else if x[i] < left && x[i] < right && x[i] < 0.0 {
            out.push((i, Extremum::Min));
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Segment {
    start: usize,
    end: usize,
    confidence: f64,
}

fn mean(row: &[f64], start: usize, end: usize) -> f64 {
    row[start..end].iter().sum::<f64>() / (end - start) as f64
}

fn candidate_segments(row: &[f64], half: usize) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut open: Option<usize> = None;
    let close = |start: usize, end: usize, segments: &mut Vec<Segment>| {
        if end > start {
            segments.push(Segment {
                start,
                end,
                confidence: mean(row, start, end),
            });
        }
    };
    for (t, kind) in extrema(&step_response(row, half)) {
        match kind {
            Extremum::Max => {
                if let Some(start) = open {
                    close(start, t, &mut segments);
                }
                open = Some(t);
            }
            Extremum::Min => {
                if let Some(start) = open.take() {
                    close(start, t, &mut segments);
                }
            }
        }
    }
    if let Some(start) = open {
        close(start, row.len(), &mut segments);
    }
    segments
}

/// Mean score between two segments. Abutting segments compare against the
/// lower of the two frames at their shared boundary.
fn gap_score(row: &[f64], left: &Segment, right: &Segment) -> f64 {
    if right.start > left.end {
        mean(row, left.end, right.start)
    } else {
        row[left.end - 1].min(row[right.start])
    }
}

fn merge_segments(row: &[f64], segments: Vec<Segment>, params: &SebbParams) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for seg in segments {
        if let Some(prev) = out.last_mut() {
            let g = gap_score(row, prev, &seg);
            let weaker = prev.confidence.min(seg.confidence);
            if g + MERGE_TOLERANCE >= params.merge_threshold_abs
                || weaker <= params.merge_threshold_rel * g + MERGE_TOLERANCE
            {
                let gap_len = (seg.start - prev.end) as f64;
                let (l, r) = ((prev.end - prev.start) as f64, (seg.end - seg.start) as f64);
                prev.confidence =
                    (prev.confidence * l + g * gap_len + seg.confidence * r) / (l + gap_len + r);
                prev.end = seg.end;
                continue;
            }
        }
        out.push(seg);
    }
    out
}

/// Events of one class row, time-sorted and non-overlapping, with
/// confidences in [0, 1].
pub fn sebb_row(row: &[f64], class: usize, frame_hop: f64, params: &SebbParams) -> Result<Vec<Event>> {
    params.validate()?;
    let half = params.filter_frames(frame_hop)? / 2;
    let segments = merge_segments(row, candidate_segments(row, half), params);
    Ok(segments
        .into_iter()
        .map(|s| Event {
            onset: s.start as f64 * frame_hop,
            offset: s.end as f64 * frame_hop,
            class,
            confidence: s.confidence.clamp(0.0, 1.0),
        })
        .collect())
}

/// Runs SEBB on every class with its own parameters (`params` holds one
/// entry per class, or one shared entry).
pub fn sebb_detect(post: &Posteriorgram, params: &[SebbParams]) -> Result<EventList> {
    let c = post.n_classes();
    if params.len() != 1 && params.len() != c {
        return Err(Error::Shape(format!(
            "{} SEBB parameter sets for {c} classes",
            params.len()
        )));
    }
    let mut events = Vec::new();
    for (k, row) in post.scores.rows().into_iter().enumerate() {
        let p = if params.len() == 1 { &params[0] } else { &params[k] };
        events.extend(sebb_row(&row.to_vec(), k, post.frame_hop, p)?);
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    Ok(EventList {
        clip_id: post.clip_id.clone(),
        events,
    })
}
