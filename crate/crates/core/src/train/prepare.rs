use crate::error::Result;
use crate::ingest::SyntheticCorpus;
use crate::pseudo::{attach_pseudo_targets, PseudoStore};
use crate::train::config::StageConfig;
use crate::types::{ClipRecord, Subset};
use crate::vocab::{map_frame_labels, map_weak_labels};

/// Training clips of one stage: subsets dropped by the dataset flags are
/// emptied, mapped labels are added unless mapping is disabled, and pseudo
/// targets are attached when the stage uses the pseudo-label loss.
pub fn prepare_training_sets(
    corpus: &SyntheticCorpus,
    cfg: &StageConfig,
    pseudo: Option<&PseudoStore>,
) -> Result<[Vec<ClipRecord>; 5]> {
    let mut out: [Vec<ClipRecord>; 5] = Default::default();
    for subset in Subset::ALL {
        let maestro = subset == Subset::MaestroStrong;
        if (cfg.train_desed_only && maestro) || (cfg.train_maestro_only && !maestro) {
            continue;
        }
        let mut clips = Vec::with_capacity(corpus.subset(subset).len());
        for clip in corpus.subset(subset) {
            let mut clip = clip.clone();
            if cfg.class_mapping {
                let origin = clip.origin();
                if let Some(s) = &clip.strong {
                    clip.strong = Some(map_frame_labels(s, &corpus.mapping, origin)?);
                }
                if let Some(w) = &clip.weak {
                    clip.weak = Some(map_weak_labels(w, &corpus.mapping, origin)?);
                }
            }
            if let (true, Some(store)) = (cfg.use_pseudo_loss, pseudo) {
                clip = attach_pseudo_targets(&clip, store, &corpus.vocab, &corpus.mapping, cfg.class_mapping)?;
            }
            clips.push(clip);
        }
        out[subset.index()] = clips;
    }
    Ok(out)
}

/// Mean and population standard deviation over every training feature value.
pub fn input_statistics(corpus: &SyntheticCorpus) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for clip in corpus.all_train_clips() {
        for &v in clip.features.iter() {
            n += 1;
            sum += v;
            sq += v * v;
        }
    }
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_corpus, CorpusConfig};
    use crate::pseudo::PseudoPolicy;
    use crate::types::Origin;
    use std::collections::BTreeMap;

    fn corpus() -> SyntheticCorpus {
        generate_synthetic_corpus(&CorpusConfig {
            n_train: [3, 3, 3, 3, 3],
            n_val: 2,
            n_test: 2,
            n_bins: 8,
            input_frames: 20,
            output_frames: 10,
            n_desed_classes: 3,
            n_maestro_classes: 3,
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_flags_empty_subsets() {
        let c = corpus();
        let cfg = StageConfig {
            train_desed_only: true,
            ..StageConfig::stage1()
        };
        let sets = prepare_training_sets(&c, &cfg, None).unwrap();
        assert!(sets[Subset::MaestroStrong.index()].is_empty());
        assert_eq!(sets[Subset::DesedWeak.index()].len(), 3);
        let cfg = StageConfig {
            train_maestro_only: true,
            ..StageConfig::stage1()
        };
        let sets = prepare_training_sets(&c, &cfg, None).unwrap();
        let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 0, 0, 0, 0]);
    }

    #[test]
    fn mapping_widens_masks_only_when_enabled() {
        let c = corpus();
        let mapped = prepare_training_sets(&c, &StageConfig::stage1(), None).unwrap();
        let plain = prepare_training_sets(
            &c,
            &StageConfig {
                class_mapping: false,
                ..StageConfig::stage1()
            },
            None,
        )
        .unwrap();
        let m = &mapped[Subset::MaestroStrong.index()][0];
        let p = &plain[Subset::MaestroStrong.index()][0];
        assert_eq!(p.strong.as_ref().unwrap().loss_mask, c.vocab.native_mask(Origin::Maestro));
        let widened = m.strong.as_ref().unwrap().loss_mask.iter().filter(|&&x| x).count();
        assert!(widened > 3);
    }

    #[test]
    fn pseudo_targets_attached_for_pseudo_stages() {
        let c = corpus();
        let targets: BTreeMap<String, ndarray::Array2<f64>> = c
            .all_train_clips()
            .map(|clip| (clip.clip_id.clone(), ndarray::Array2::from_elem((6, 10), 0.25)))
            .collect();
        let store = PseudoStore {
            targets,
            provenance: vec!["x".into()],
            policy: PseudoPolicy::default(),
            frame_hop: 1.0,
        };
        let cfg = StageConfig {
            use_pseudo_loss: true,
            ..StageConfig::stage1()
        };
        let sets = prepare_training_sets(&c, &cfg, Some(&store)).unwrap();
        assert!(sets.iter().flatten().all(|clip| clip.pseudo.is_some()));
        let sets = prepare_training_sets(&c, &StageConfig::stage1(), Some(&store)).unwrap();
        assert!(sets.iter().flatten().all(|clip| clip.pseudo.is_none()));
    }

    #[test]
    fn statistics_standardize_the_corpus() {
        let c = corpus();
        let (m, s) = input_statistics(&c);
        assert!(s > 0.0);
        let values: Vec<f64> = c
            .all_train_clips()
            .flat_map(|clip| clip.features.iter().map(|v| (v - m) / s).collect::<Vec<_>>())
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }
}
