//! Clip, label, and score containers shared across the pipeline.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five training subsets, in batch-composition order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    MaestroStrong,
    DesedRealStrong,
    DesedSynthStrong,
    DesedWeak,
    DesedUnlabeled,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::MaestroStrong,
        Subset::DesedRealStrong,
        Subset::DesedSynthStrong,
        Subset::DesedWeak,
        Subset::DesedUnlabeled,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn origin(self) -> Origin {
        match self {
            Subset::MaestroStrong => Origin::Maestro,
            _ => Origin::Desed,
        }
    }

    pub fn is_strong(self) -> bool {
        matches!(
            self,
            Subset::MaestroStrong | Subset::DesedRealStrong | Subset::DesedSynthStrong
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::MaestroStrong => "maestro_strong",
            Subset::DesedRealStrong => "desed_real_strong",
            Subset::DesedSynthStrong => "desed_synth_strong",
            Subset::DesedWeak => "desed_weak",
            Subset::DesedUnlabeled => "desed_unlabeled",
        }
    }
}

/// Position in the two-iteration, two-stage training procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "I1.S1")]
    I1S1,
    #[serde(rename = "I1.S2")]
    I1S2,
    #[serde(rename = "I2.S1")]
    I2S1,
    #[serde(rename = "I2.S2")]
    I2S2,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::I1S1, Stage::I1S2, Stage::I2S1, Stage::I2S2];

    pub fn iteration(self) -> u8 {
        match self {
            Stage::I1S1 | Stage::I1S2 => 1,
            Stage::I2S1 | Stage::I2S2 => 2,
        }
    }

    /// 1 for the frozen-embedder stage, 2 for joint fine-tuning.
    pub fn step(self) -> u8 {
        match self {
            Stage::I1S1 | Stage::I2S1 => 1,
            Stage::I1S2 | Stage::I2S2 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::I1S1 => "I1.S1",
            Stage::I1S2 => "I1.S2",
            Stage::I2S1 => "I2.S1",
            Stage::I2S2 => "I2.S2",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

/// Source dataset of a clip; decides which classes are native to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Desed,
    Maestro,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset: f64,
    pub offset: f64,
    /// Union-vocabulary class index.
    pub class: usize,
    pub confidence: f64,
}

impl Event {
    pub fn new(onset: f64, offset: f64, class: usize) -> Self {
        Event {
            onset,
            offset,
            class,
            confidence: 1.0,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub clip_id: String,
    pub events: Vec<Event>,
}

impl EventList {
    pub fn new(clip_id: impl Into<String>) -> Self {
        EventList {
            clip_id: clip_id.into(),
            events: Vec::new(),
        }
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        for e in &self.events {
            if !(0.0 <= e.onset && e.onset < e.offset && e.offset <= duration + 1e-9) {
                return Err(Error::Data(format!(
                    "event [{}, {}) outside clip '{}' of duration {duration}",
                    e.onset, e.offset, self.clip_id
                )));
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(Error::Data(format!(
                    "confidence {} outside [0, 1] in clip '{}'",
                    e.confidence, self.clip_id
                )));
            }
        }
        Ok(())
    }
}

/// Frame-level scores for one clip, stored class-major (C×T).
#[derive(Clone, Debug, PartialEq)]
pub struct Posteriorgram {
    pub clip_id: String,
    pub scores: Array2<f64>,
    /// Seconds per frame.
    pub frame_hop: f64,
}

impl Posteriorgram {
    pub fn new(clip_id: impl Into<String>, scores: Array2<f64>, frame_hop: f64) -> Result<Self> {
        if scores.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("posteriorgram score outside [0, 1]".into()));
        }
        Ok(Posteriorgram {
            clip_id: clip_id.into(),
            scores,
            frame_hop,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.scores.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 * self.frame_hop
    }
}

/// Number of frames covering `duration` at `hop` seconds per frame.
pub fn frame_count(duration: f64, hop: f64) -> usize {
    // Guards against 10.0 / 0.2 = 50.000000000000001 style rounding.
    ((duration / hop) - 1e-9).ceil().max(1.0) as usize
}

/// Frame-level targets plus the set of classes that may contribute to a loss.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabelGrid {
    pub targets: Array2<f64>,
    pub loss_mask: Vec<bool>,
}

impl FrameLabelGrid {
    pub fn zeros(n_classes: usize, n_frames: usize) -> Self {
        FrameLabelGrid {
            targets: Array2::zeros((n_classes, n_frames)),
            loss_mask: vec![false; n_classes],
        }
    }
}

/// Clip-level presence targets with a class mask.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakLabels {
    pub targets: Vec<f64>,
    pub loss_mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    /// F×T_in feature grid.
    pub features: Array2<f64>,
    pub subset: Subset,
    pub strong: Option<FrameLabelGrid>,
    pub weak: Option<WeakLabels>,
    /// Soft C×T_out distillation targets with their own mask.
    pub pseudo: Option<FrameLabelGrid>,
}

impl ClipRecord {
    pub fn origin(&self) -> Origin {
        self.subset.origin()
    }

    /// Checks that the label fields present agree with the subset.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.subset {
            Subset::DesedUnlabeled => self.strong.is_none() && self.weak.is_none(),
            Subset::DesedWeak => self.strong.is_none() && self.weak.is_some(),
            _ => self.strong.is_some() && self.weak.is_none(),
        };
        if !ok {
            return Err(Error::Data(format!(
                "clip '{}' carries labels inconsistent with subset {}",
                self.clip_id,
                self.subset.name()
            )));
        }
        Ok(())
    }
}
