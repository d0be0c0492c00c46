//! Stage-gated data augmentation over training batches.
//!
//! Order within a batch: Wavmix on raw features, standardization, DIR,
//! FilterAugment, Freq-MixStyle, frequency warping, time masking, Mixup.

pub mod ops;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClipRecord, Stage, Subset};
use crate::vocab::ClassVocabulary;

pub use ops::{
    apply_bin_gains_db, dir_response_curve, filter_gain_curve, freq_mixstyle, freq_warp,
    mask_length, mixup, time_mask, wavmix,
};

const STAGE2: [Stage; 2] = [Stage::I1S2, Stage::I2S2];
const NOT_I2S1: [Stage; 3] = [Stage::I1S1, Stage::I1S2, Stage::I2S2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirConfig {
    pub p: f64,
    /// Standard deviation of the per-bin random-walk step.
    pub step_db: f64,
    pub smooth_bins: usize,
    pub max_db: f64,
    pub stages: Vec<Stage>,
}

impl Default for DirConfig {
    fn default() -> Self {
        DirConfig {
            p: 0.5,
            step_db: 1.5,
            smooth_bins: 5,
            max_db: 10.0,
            stages: STAGE2.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub p: f64,
    /// Both shape parameters of the symmetric Beta distribution for λ.
    pub alpha: f64,
    pub stages: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeMaskConfig {
    pub p: f64,
    pub ratio: [f64; 2],
    pub stages: Vec<Stage>,
}

impl Default for TimeMaskConfig {
    fn default() -> Self {
        TimeMaskConfig {
            p: 1.0,
            ratio: [0.05, 0.3],
            stages: STAGE2.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterAugConfig {
    pub p: f64,
    pub n_bands: [usize; 2],
    pub db_range: [f64; 2],
    pub stages: Vec<Stage>,
}

impl Default for FilterAugConfig {
    fn default() -> Self {
        FilterAugConfig {
            p: 0.8,
            n_bands: [3, 6],
            db_range: [-6.0, 6.0],
            stages: NOT_I2S1.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreqWarpConfig {
    pub p: f64,
    pub factor: [f64; 2],
    pub stages: Vec<Stage>,
}

impl Default for FreqWarpConfig {
    fn default() -> Self {
        FreqWarpConfig {
            p: 0.5,
            factor: [0.9, 1.1],
            stages: STAGE2.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub dir: DirConfig,
    pub wavmix: MixConfig,
    pub freq_mixstyle: MixConfig,
    pub mixup: MixConfig,
    pub time_mask: TimeMaskConfig,
    pub filter_augment: FilterAugConfig,
    pub freq_warp: FreqWarpConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            dir: DirConfig::default(),
            wavmix: MixConfig {
                p: 0.5,
                alpha: 0.2,
                stages: Stage::ALL.to_vec(),
            },
            freq_mixstyle: MixConfig {
                p: 0.5,
                alpha: 0.3,
                stages: NOT_I2S1.to_vec(),
            },
            mixup: MixConfig {
                p: 0.5,
                alpha: 0.2,
                stages: Stage::ALL.to_vec(),
            },
            time_mask: TimeMaskConfig::default(),
            filter_augment: FilterAugConfig::default(),
            freq_warp: FreqWarpConfig::default(),
        }
    }
}

fn gated(p: f64, stages: &[Stage], stage: Stage) -> bool {
    p > 0.0 && stages.contains(&stage)
}

impl AugmentConfig {
    /// Every augmentation switched off.
    pub fn disabled() -> Self {
        let mut cfg = AugmentConfig::default();
        cfg.dir.p = 0.0;
        cfg.wavmix.p = 0.0;
        cfg.freq_mixstyle.p = 0.0;
        cfg.mixup.p = 0.0;
        cfg.time_mask.p = 0.0;
        cfg.filter_augment.p = 0.0;
        cfg.freq_warp.p = 0.0;
        cfg
    }

    /// Names of the augmentations active in `stage`, in application order.
    pub fn active(&self, stage: Stage) -> Vec<&'static str> {
        [
            ("wavmix", gated(self.wavmix.p, &self.wavmix.stages, stage)),
            ("dir", gated(self.dir.p, &self.dir.stages, stage)),
            (
                "filter_augment",
                gated(self.filter_augment.p, &self.filter_augment.stages, stage),
            ),
            (
                "freq_mixstyle",
                gated(self.freq_mixstyle.p, &self.freq_mixstyle.stages, stage),
            ),
            (
                "freq_warp",
                gated(self.freq_warp.p, &self.freq_warp.stages, stage),
            ),
            (
                "time_mask",
                gated(self.time_mask.p, &self.time_mask.stages, stage),
            ),
            ("mixup", gated(self.mixup.p, &self.mixup.stages, stage)),
        ]
        .into_iter()
        .filter(|(_, on)| *on)
        .map(|(n, _)| n)
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("dir", self.dir.p),
            ("wavmix", self.wavmix.p),
            ("freq_mixstyle", self.freq_mixstyle.p),
            ("mixup", self.mixup.p),
            ("time_mask", self.time_mask.p),
            ("filter_augment", self.filter_augment.p),
            ("freq_warp", self.freq_warp.p),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}.p = {p} outside [0, 1]")));
            }
        }
        for (name, a) in [
            ("wavmix", self.wavmix.alpha),
            ("freq_mixstyle", self.freq_mixstyle.alpha),
            ("mixup", self.mixup.alpha),
        ] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name}.alpha must be positive")));
            }
        }
        let [lo, hi] = self.time_mask.ratio;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(
                "time_mask.ratio must satisfy 0 ≤ lo ≤ hi ≤ 1".into(),
            ));
        }
        let [kl, kh] = self.filter_augment.n_bands;
        if kl == 0 || kl > kh {
            return Err(Error::Config(
                "filter_augment.n_bands must satisfy 1 ≤ lo ≤ hi".into(),
            ));
        }
        if self.filter_augment.db_range[0] > self.filter_augment.db_range[1] {
            return Err(Error::Config("filter_augment.db_range is reversed".into()));
        }
        let [wl, wh] = self.freq_warp.factor;
        if !(0.0 < wl && wl <= wh) {
            return Err(Error::Config(
                "freq_warp.factor must satisfy 0 < lo ≤ hi".into(),
            ));
        }
        if !(self.dir.max_db >= 0.0 && self.dir.step_db >= 0.0) {
            return Err(Error::Config("dir gains must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mixing weight and partner drawn for one batch element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixSample {
    pub lambda: f64,
    pub partner: usize,
}

/// For each element of `group` (batch indices), with probability `p`, a
/// partner from a random permutation of the group and `λ ~ Beta(α, α)`.
pub fn sample_mix_pairs<R: Rng>(
    group: &[usize],
    p: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<(usize, MixSample)>> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::Config(format!("invalid Beta parameter {alpha}: {e}")))?;
    let mut partners = group.to_vec();
    partners.shuffle(rng);
    let mut out = Vec::new();
    for (&i, &partner) in group.iter().zip(&partners) {
        if rng.gen_bool(p) {
            let lambda: f64 = beta.sample(rng);
            out.push((i, MixSample { lambda, partner }));
        }
    }
    Ok(out)
}

fn mixup_groups(batch: &[ClipRecord]) -> [Vec<usize>; 3] {
    let mut groups: [Vec<usize>; 3] = Default::default();
    for (i, clip) in batch.iter().enumerate() {
        let g = match clip.subset {
            s if s.is_strong() => 0,
            Subset::DesedWeak => 1,
            _ => 2,
        };
        groups[g].push(i);
    }
    groups
}

/// Applies every augmentation gated on for `stage` and returns clips with
/// standardized features.
pub fn augment_batch<R: Rng>(
    batch: &[ClipRecord],
    cfg: &AugmentConfig,
    stage: Stage,
    vocab: &ClassVocabulary,
    normalize: &dyn Fn(&Array2<f64>) -> Result<Array2<f64>>,
    rng: &mut R,
) -> Result<Vec<ClipRecord>> {
    let mut clips = batch.to_vec();

    if gated(cfg.wavmix.p, &cfg.wavmix.stages, stage) {
        let strong: Vec<usize> = (0..clips.len())
            .filter(|&i| clips[i].subset.is_strong())
            .collect();
        let snapshot = clips.clone();
        for (i, m) in sample_mix_pairs(&strong, cfg.wavmix.p, cfg.wavmix.alpha, rng)? {
            clips[i] = wavmix(&snapshot[i], &snapshot[m.partner], m.lambda, vocab)?;
        }
    }

    for clip in clips.iter_mut() {
        clip.features = normalize(&clip.features)?;
    }
    let n_bins = clips.first().map_or(0, |c| c.features.nrows());

    if gated(cfg.dir.p, &cfg.dir.stages, stage) {
        let step = Normal::new(0.0, cfg.dir.step_db)
            .map_err(|e| Error::Config(format!("dir.step_db: {e}")))?;
        for clip in clips.iter_mut() {
            if rng.gen_bool(cfg.dir.p) {
                let steps: Vec<f64> = (0..n_bins).map(|_| step.sample(rng)).collect();
                let curve = dir_response_curve(&steps, cfg.dir.smooth_bins, cfg.dir.max_db);
                clip.features = apply_bin_gains_db(&clip.features, &curve);
            }
        }
    }

    if gated(cfg.filter_augment.p, &cfg.filter_augment.stages, stage) && n_bins >= 2 {
        let fa = &cfg.filter_augment;
        for clip in clips.iter_mut() {
            if rng.gen_bool(fa.p) {
                let k = rng.gen_range(fa.n_bands[0]..=fa.n_bands[1]).min(n_bins - 1);
                let mut interior = rand::seq::index::sample(rng, n_bins - 2, k - 1).into_vec();
                interior.sort_unstable();
                let mut points = vec![0];
                points.extend(interior.into_iter().map(|b| b + 1));
                points.push(n_bins - 1);
                let gains: Vec<f64> = points
                    .iter()
                    .map(|_| rng.gen_range(fa.db_range[0]..=fa.db_range[1]))
                    .collect();
                let curve = filter_gain_curve(n_bins, &points, &gains)?;
                clip.features = apply_bin_gains_db(&clip.features, &curve);
            }
        }
    }

    if gated(cfg.freq_mixstyle.p, &cfg.freq_mixstyle.stages, stage) {
        let all: Vec<usize> = (0..clips.len()).collect();
        let snapshot: Vec<Array2<f64>> = clips.iter().map(|c| c.features.clone()).collect();
        let pairs = sample_mix_pairs(&all, cfg.freq_mixstyle.p, cfg.freq_mixstyle.alpha, rng)?;
        for (i, m) in pairs {
            clips[i].features = freq_mixstyle(&snapshot[i], &snapshot[m.partner], m.lambda)?;
        }
    }

    if gated(cfg.freq_warp.p, &cfg.freq_warp.stages, stage) {
        let [lo, hi] = cfg.freq_warp.factor;
        for clip in clips.iter_mut() {
            if rng.gen_bool(cfg.freq_warp.p) {
                let w = rng.gen_range(lo..=hi);
                clip.features = freq_warp(&clip.features, w)?;
            }
        }
    }

    if gated(cfg.time_mask.p, &cfg.time_mask.stages, stage) {
        let [lo, hi] = cfg.time_mask.ratio;
        for clip in clips.iter_mut() {
            let eligible = matches!(
                clip.subset,
                Subset::DesedRealStrong | Subset::DesedSynthStrong
            );
            if eligible && rng.gen_bool(cfg.time_mask.p) {
                let t = clip.features.ncols();
                let len = mask_length(rng.gen_range(lo..=hi), t);
                let start = rng.gen_range(0..=t - len);
                *clip = time_mask(clip, start, len)?;
            }
        }
    }

    if gated(cfg.mixup.p, &cfg.mixup.stages, stage) {
        let snapshot = clips.clone();
        for group in mixup_groups(&snapshot) {
            for (i, m) in sample_mix_pairs(&group, cfg.mixup.p, cfg.mixup.alpha, rng)? {
                clips[i] = mixup(&snapshot[i], &snapshot[m.partner], m.lambda, vocab)?;
            }
        }
    }

    Ok(clips)
}
