//! Ensemble fusion into strong pseudo-labels, their persistence, and their
//! attachment to training clips as distillation targets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{read_score_dir, write_score_dir};
use crate::model::tape::sigmoid;
use crate::model::ToyModel;
use crate::types::{ClipRecord, FrameLabelGrid, Posteriorgram};
use crate::vocab::{build_loss_mask, ClassMapping, ClassVocabulary};

pub const HARD_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoPolicy {
    /// Threshold fused targets at 0.5.
    pub hard: bool,
    /// Pseudo loss over every class instead of the clip's dataset classes.
    pub all_classes: bool,
}

/// Mean of the members' strong logits followed by the logistic function.
pub fn fuse_logits(logits: &[Array2<f64>], hard: bool) -> Result<Array2<f64>> {
    let first = logits
        .first()
        .ok_or_else(|| Error::Config("fusion needs at least one model".into()))?;
    if let Some(bad) = logits.iter().find(|l| l.dim() != first.dim()) {
        return Err(Error::Shape(format!(
            "member output {:?} differs from {:?}",
            bad.dim(),
            first.dim()
        )));
    }
    let mut sum = Array2::<f64>::zeros(first.raw_dim());
    for l in logits {
        sum += l;
    }
    let n = logits.len() as f64;
    Ok(sum.mapv(|v| {
        let p = sigmoid(v / n);
        if hard {
            (p >= HARD_THRESHOLD) as u8 as f64
        } else {
            p
        }
    }))
}

/// Fused `C×T_out` targets of one clip.
pub fn fuse_models(models: &[ToyModel], features: &Array2<f64>, hard: bool) -> Result<Array2<f64>> {
    let logits = models
        .iter()
        .map(|m| m.infer(features).map(|(strong, _)| strong))
        .collect::<Result<Vec<_>>>()?;
    fuse_logits(&logits, hard)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoStore {
    pub targets: BTreeMap<String, Array2<f64>>,
    /// Parameter hashes of the contributing checkpoints.
    pub provenance: Vec<String>,
    pub policy: PseudoPolicy,
    pub frame_hop: f64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    clips: Vec<String>,
    provenance: Vec<String>,
    policy: PseudoPolicy,
    frame_hop: f64,
}

const MANIFEST: &str = "manifest.json";
const SCORES: &str = "scores";

impl PseudoStore {
    /// Fuses `models` on every clip of `clips`.
    pub fn build<'a>(
        models: &[ToyModel],
        clips: impl IntoIterator<Item = &'a ClipRecord>,
        policy: PseudoPolicy,
        frame_hop: f64,
    ) -> Result<Self> {
        let mut targets = BTreeMap::new();
        for clip in clips {
            targets.insert(clip.clip_id.clone(), fuse_models(models, &clip.features, policy.hard)?);
        }
        Ok(PseudoStore {
            targets,
            provenance: models.iter().map(|m| m.params.hash()).collect(),
            policy,
            frame_hop,
        })
    }

    pub fn get(&self, clip_id: &str) -> Option<&Array2<f64>> {
        self.targets.get(clip_id)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Hash over targets, provenance and policy.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (id, t) in &self.targets {
            h.update(id.as_bytes());
            for v in t.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for p in &self.provenance {
            h.update(p.as_bytes());
        }
        h.update([self.policy.hard as u8, self.policy.all_classes as u8]);
        h.update(self.frame_hop.to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Writes one posteriorgram TSV per clip under `scores/` plus a manifest.
    pub fn save(&self, dir: &Path, vocab: &ClassVocabulary) -> Result<()> {
        let posts = self
            .targets
            .iter()
            .map(|(id, t)| Posteriorgram::new(id.clone(), t.clone(), self.frame_hop))
            .collect::<Result<Vec<_>>>()?;
        write_score_dir(&dir.join(SCORES), &posts, vocab)?;
        let manifest = Manifest {
            clips: self.targets.keys().cloned().collect(),
            provenance: self.provenance.clone(),
            policy: self.policy,
            frame_hop: self.frame_hop,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, vocab: &ClassVocabulary) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("pseudo-label manifest: {e}")))?;
        let mut targets: BTreeMap<String, Array2<f64>> = read_score_dir(&dir.join(SCORES), vocab)?
            .into_iter()
            .map(|p| (p.clip_id, p.scores))
            .collect();
        for id in &manifest.clips {
            if !targets.contains_key(id) {
                return Err(Error::MissingClip(id.clone()));
            }
        }
        targets.retain(|id, _| manifest.clips.contains(id));
        Ok(PseudoStore {
            targets,
            provenance: manifest.provenance,
            policy: manifest.policy,
            frame_hop: manifest.frame_hop,
        })
    }
}

/// Copy of `clip` carrying its fused targets. The loss mask covers the
/// clip's native and mapped classes, or every class under the store's
/// all-classes policy.
pub fn attach_pseudo_targets(
    clip: &ClipRecord,
    store: &PseudoStore,
    vocab: &ClassVocabulary,
    mapping: &ClassMapping,
    mapping_enabled: bool,
) -> Result<ClipRecord> {
    let targets = store
        .get(&clip.clip_id)
        .ok_or_else(|| Error::MissingClip(clip.clip_id.clone()))?;
    if targets.nrows() != vocab.len() {
        return Err(Error::Shape(format!(
            "pseudo targets of '{}' have {} classes, vocabulary {}",
            clip.clip_id,
            targets.nrows(),
            vocab.len()
        )));
    }
    let loss_mask = if store.policy.all_classes {
        vec![true; vocab.len()]
    } else {
        build_loss_mask(clip.origin(), vocab, mapping, mapping_enabled)
    };
    let mut out = clip.clone();
    out.pseudo = Some(FrameLabelGrid {
        targets: targets.clone(),
        loss_mask,
    });
    Ok(out)
}
