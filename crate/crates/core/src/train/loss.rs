//! Supervised, consistency and interpolation losses recorded on a tape.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::tape::bce;
use crate::model::{BoundParams, Tape, ToyModel, Var};
use crate::types::{ClipRecord, Origin};
use crate::vocab::ClassVocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub strong: f64,
    pub weak: f64,
    pub pseudo: f64,
    pub mt: f64,
    pub ict: f64,
}

/// Which clips and classes enter the self-supervised losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SslOptions {
    pub on_maestro: bool,
    pub class_mask: bool,
}

/// Unweighted value of every loss term plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub strong: f64,
    pub weak: f64,
    pub pseudo: f64,
    pub mt: f64,
    pub ict: f64,
    pub total: f64,
}

/// Mean BCE over the rows of `mask` and all frames; 0 for an empty mask.
/// `p` and `targets` are class-major.
pub fn bce_masked(p: &Array2<f64>, targets: &Array2<f64>, mask: &[bool]) -> Result<f64> {
    if p.dim() != targets.dim() || mask.len() != p.nrows() {
        return Err(Error::Shape(format!(
            "predictions {:?}, targets {:?}, mask {}",
            p.dim(),
            targets.dim(),
            mask.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (c, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (pv, tv) in p.row(c).iter().zip(targets.row(c)) {
            sum += bce(*pv, *tv);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Mean squared difference pooled over strong and weak posteriors, on the
/// classes of `mask` (all classes when `None`).
pub fn mt_consistency(
    student: (&Array2<f64>, &[f64]),
    teacher: (&Array2<f64>, &[f64]),
    mask: Option<&[bool]>,
) -> Result<f64> {
    if student.0.dim() != teacher.0.dim() || student.1.len() != teacher.1.len() {
        return Err(Error::Shape("student and teacher outputs differ in shape".into()));
    }
    let keep = |c: usize| mask.map_or(true, |m| m[c]);
    let (mut sum, mut n) = (0.0, 0usize);
    for (((c, _), s), t) in student.0.indexed_iter().zip(teacher.0.iter()) {
        if keep(c) {
            sum += (s - t).powi(2);
            n += 1;
        }
    }
    for (c, (s, t)) in student.1.iter().zip(teacher.1).enumerate() {
        if keep(c) {
            sum += (s - t).powi(2);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Class-major `C×T` targets in the tape's frame-major `[T, C]` layout.
fn frame_major(targets: &Array2<f64>) -> Vec<f64> {
    targets.t().iter().copied().collect()
}

fn frame_weights(mask: &[bool], frames: usize) -> Vec<f64> {
    (0..frames)
        .flat_map(|_| mask.iter().map(|&m| m as u8 as f64))
        .collect()
}

/// Strong (`[T, C]`, frame-major) and weak posteriors of a model that
/// receives no gradient.
pub fn detached_posteriors(model: &ToyModel, normalized: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, &|_| false);
    let out = model.forward_normalized(&mut tape, &bound, normalized)?;
    Ok((tape.value(out.strong).data.clone(), tape.value(out.weak).data.clone()))
}

/// Classes a clip contributes to the self-supervised losses under the class
/// mask option: its label mask, or its dataset's native classes when
/// unlabeled.
pub fn ssl_mask(clip: &ClipRecord, vocab: &ClassVocabulary) -> Vec<bool> {
    clip.strong
        .as_ref()
        .map(|s| s.loss_mask.clone())
        .or_else(|| clip.weak.as_ref().map(|w| w.loss_mask.clone()))
        .unwrap_or_else(|| vocab.native_mask(clip.origin()))
}

/// One interpolation pair: input `λ·x_left + (1−λ)·x_right`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IctPair {
    pub left: usize,
    pub right: usize,
    pub lambda: f64,
}

#[derive(Default)]
struct Term {
    parts: Vec<Var>,
    count: f64,
}

impl Term {
    fn add(&mut self, v: Var, count: f64) {
        if count > 0.0 {
            self.parts.push(v);
            self.count += count;
        }
    }

    fn value(&self, tape: &Tape) -> f64 {
        if self.count == 0.0 {
            0.0
        } else {
            self.parts.iter().map(|&v| tape.value(v).data[0]).sum::<f64>() / self.count
        }
    }

    fn weighted(&self, w: f64, out: &mut Vec<(Var, f64)>) {
        if self.count > 0.0 && w != 0.0 {
            out.extend(self.parts.iter().map(|&v| (v, w / self.count)));
        }
    }
}

fn mix(a: &Array2<f64>, b: &Array2<f64>, lambda: f64) -> Array2<f64> {
    a * lambda + b * (1.0 - lambda)
}

/// Everything the batch loss needs besides the batch itself.
pub struct LossContext<'a> {
    pub student: &'a ToyModel,
    pub teacher: &'a ToyModel,
    pub vocab: &'a ClassVocabulary,
    pub weights: LossWeights,
    pub ssl: SslOptions,
    pub use_pseudo: bool,
}

impl LossContext<'_> {
    fn ssl_weights(&self, clip: &ClipRecord, frames: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        if !self.ssl.on_maestro && clip.origin() == Origin::Maestro {
            return None;
        }
        let mask = if self.ssl.class_mask {
            ssl_mask(clip, self.vocab)
        } else {
            vec![true; self.vocab.len()]
        };
        Some((frame_weights(&mask, frames), mask.iter().map(|&m| m as u8 as f64).collect()))
    }

    /// Records the weighted total loss of a batch of standardized,
    /// augmented clips. ICT pairs index into `batch`.
    pub fn record(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &[ClipRecord],
        pairs: &[IctPair],
    ) -> Result<(Var, LossTerms)> {
        let [mut strong, mut weak, mut pseudo, mut mt, mut ict] = <[Term; 5]>::default();
        let need_teacher = self.weights.mt != 0.0 || self.weights.ict != 0.0;
        let mut teacher_strong = Vec::with_capacity(batch.len());
        let mut frames = 0;
        for clip in batch {
            let out = self.student.forward_normalized(tape, bound, &clip.features)?;
            frames = tape.value(out.strong).rows();
            if let Some(labels) = &clip.strong {
                let w = frame_weights(&labels.loss_mask, frames);
                let n = w.iter().sum();
                let t = Arc::new(frame_major(&labels.targets));
                strong.add(tape.bce_sum(out.strong, t, Arc::new(w)), n);
            }
            if let Some(labels) = &clip.weak {
                let w: Vec<f64> = labels.loss_mask.iter().map(|&m| m as u8 as f64).collect();
                let n = w.iter().sum();
                let t = Arc::new(labels.targets.clone());
                weak.add(tape.bce_sum(out.weak, t, Arc::new(w)), n);
            }
            if let (true, Some(labels)) = (self.use_pseudo, &clip.pseudo) {
                let w = frame_weights(&labels.loss_mask, frames);
                let n = w.iter().sum();
                let t = Arc::new(frame_major(&labels.targets));
                pseudo.add(tape.bce_sum(out.strong, t, Arc::new(w)), n);
            }
            if !need_teacher {
                continue;
            }
            let (ts, tw) = detached_posteriors(self.teacher, &clip.features)?;
            if self.weights.mt != 0.0 {
                if let Some((ws, ww)) = self.ssl_weights(clip, frames) {
                    let n = ws.iter().sum::<f64>() + ww.iter().sum::<f64>();
                    let a = tape.sq_err_sum(out.strong, Arc::new(ts.clone()), Arc::new(ws));
                    let b = tape.sq_err_sum(out.weak, Arc::new(tw), Arc::new(ww));
                    mt.add(tape.lin_comb(&[(a, 1.0), (b, 1.0)]), n);
                }
            }
            teacher_strong.push(ts);
        }
        if self.weights.ict != 0.0 {
            for p in pairs {
                let (a, b) = (&batch[p.left], &batch[p.right]);
                let (Some((wa, _)), Some((wb, _))) =
                    (self.ssl_weights(a, frames), self.ssl_weights(b, frames))
                else {
                    continue;
                };
                let w: Vec<f64> = wa.iter().zip(&wb).map(|(x, y)| x.max(*y)).collect();
                let target: Vec<f64> = teacher_strong[p.left]
                    .iter()
                    .zip(&teacher_strong[p.right])
                    .map(|(l, r)| p.lambda * l + (1.0 - p.lambda) * r)
                    .collect();
                let mixed = mix(&a.features, &b.features, p.lambda);
                let out = self.student.forward_normalized(tape, bound, &mixed)?;
                let n = w.iter().sum();
                ict.add(tape.sq_err_sum(out.strong, Arc::new(target), Arc::new(w)), n);
            }
        }
        let w = &self.weights;
        let mut parts = Vec::new();
        strong.weighted(w.strong, &mut parts);
        weak.weighted(w.weak, &mut parts);
        pseudo.weighted(w.pseudo, &mut parts);
        mt.weighted(w.mt, &mut parts);
        ict.weighted(w.ict, &mut parts);
        let total = tape.lin_comb(&parts);
        let terms = LossTerms {
            strong: strong.value(tape),
            weak: weak.value(tape),
            pseudo: pseudo.value(tape),
            mt: mt.value(tape),
            ict: ict.value(tape),
            total: tape.value(total).data[0],
        };
        if !terms.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {terms:?}")));
        }
        Ok((total, terms))
    }
}

/// Interpolation consistency of one pair on strong posteriors, all classes.
pub fn ict_loss(
    student: &ToyModel,
    teacher: &ToyModel,
    left: &Array2<f64>,
    right: &Array2<f64>,
    lambda: f64,
) -> Result<f64> {
    let (tl, _) = detached_posteriors(teacher, left)?;
    let (tr, _) = detached_posteriors(teacher, right)?;
    let (s, _) = detached_posteriors(student, &mix(left, right, lambda))?;
    let sum: f64 = s
        .iter()
        .zip(tl.iter().zip(&tr))
        .map(|(s, (l, r))| (s - (lambda * l + (1.0 - lambda) * r)).powi(2))
        .sum();
    Ok(sum / s.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::types::{FrameLabelGrid, Subset, WeakLabels};
    use ndarray::Array2;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_bins: 8,
            input_frames: 20,
            n_classes: 4,
            n_desed_classes: 2,
            cnn_channels: [2, 2],
            cnn_dim: 3,
            emb_dim: 3,
            emb_kernel: 4,
            emb_stride: 2,
            emb_layers: 2,
            hidden: 3,
            ..ModelConfig::default()
        }
    }

    fn vocab() -> ClassVocabulary {
        ClassVocabulary::synthetic(2, 2).unwrap()
    }

    fn features(k: usize) -> Array2<f64> {
        Array2::from_shape_fn((8, 20), |(f, t)| ((f * 5 + t * 3 + k * 11) as f64 * 0.37).sin())
    }

    fn clip(subset: Subset, k: usize) -> ClipRecord {
        let native = vocab().native_mask(subset.origin());
        let mut grid = FrameLabelGrid::zeros(4, 10);
        grid.loss_mask = native.clone();
        grid.targets[[0, 3]] = 1.0;
        grid.targets[[3, 5]] = 0.6;
        ClipRecord {
            clip_id: format!("c{k}"),
            features: features(k),
            subset,
            strong: subset.is_strong().then(|| grid.clone()),
            weak: (subset == Subset::DesedWeak).then(|| WeakLabels {
                targets: vec![1.0, 0.0, 0.0, 0.0],
                loss_mask: native.clone(),
            }),
            pseudo: None,
        }
    }

    fn weights(strong: f64, weak: f64, pseudo: f64, mt: f64, ict: f64) -> LossWeights {
        LossWeights {
            strong,
            weak,
            pseudo,
            mt,
            ict,
        }
    }

    fn context<'a>(
        student: &'a ToyModel,
        teacher: &'a ToyModel,
        vocab: &'a ClassVocabulary,
        w: LossWeights,
    ) -> LossContext<'a> {
        LossContext {
            student,
            teacher,
            vocab,
            weights: w,
            ssl: SslOptions {
                on_maestro: true,
                class_mask: false,
            },
            use_pseudo: true,
        }
    }

    fn posteriors(model: &ToyModel, x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
        let (s, w) = detached_posteriors(model, x).unwrap();
        let c = w.len();
        let t = s.len() / c;
        (Array2::from_shape_fn((c, t), |(ci, ti)| s[ti * c + ci]), w)
    }

    #[test]
    fn bce_closed_forms() {
        let ones = Array2::from_elem((2, 3), 1.0);
        assert!(bce_masked(&ones, &ones, &[true, true]).unwrap() < 1e-6);
        let half = Array2::from_elem((2, 3), 0.5);
        let v = bce_masked(&half, &ones, &[true, true]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(bce_masked(&half, &ones, &[false, false]).unwrap(), 0.0);
    }

    #[test]
    fn masked_row_is_as_if_absent() {
        let p = ndarray::array![[0.9, 0.2], [0.01, 0.99]];
        let t = ndarray::array![[1.0, 0.0], [1.0, 0.0]];
        let masked = bce_masked(&p, &t, &[true, false]).unwrap();
        let alone = bce_masked(&p.slice(ndarray::s![0..1, ..]).to_owned(), &t.slice(ndarray::s![0..1, ..]).to_owned(), &[true]).unwrap();
        assert_eq!(masked, alone);
        assert!(bce_masked(&p, &t, &[true]).is_err());
    }

    #[test]
    fn mt_closed_forms() {
        let s = Array2::from_elem((2, 4), 0.3);
        let w = vec![0.6, 0.1];
        assert_eq!(mt_consistency((&s, &w), (&s, &w), None).unwrap(), 0.0);
        let t = Array2::from_elem((2, 4), 0.55);
        let tw = vec![0.85, 0.35];
        let v = mt_consistency((&s, &w), (&t, &tw), None).unwrap();
        assert!((v - 0.0625).abs() < 1e-15);
        let v = mt_consistency((&s, &w), (&t, &tw), Some(&[false, false])).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ict_endpoints_and_symmetry() {
        let student = ToyModel::new(tiny()).unwrap();
        let teacher = ToyModel::new(ModelConfig { init_seed: 9, ..tiny() }).unwrap();
        let (a, b) = (features(1), features(2));
        let at_one = ict_loss(&student, &teacher, &a, &b, 1.0).unwrap();
        let (ss, _) = posteriors(&student, &a);
        let (ts, _) = posteriors(&teacher, &a);
        let direct = (&ss - &ts).mapv(|d| d * d).mean().unwrap();
        assert!((at_one - direct).abs() < 1e-15);
        let same = ict_loss(&student, &teacher, &a, &a, 0.3).unwrap();
        assert!((same - direct).abs() < 1e-12);
        let ab = ict_loss(&student, &teacher, &a, &b, 0.3).unwrap();
        let ba = ict_loss(&student, &teacher, &b, &a, 0.7).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn supervised_only_when_ssl_weights_are_zero() {
        let v = vocab();
        let student = ToyModel::new(tiny()).unwrap();
        let batch = vec![clip(Subset::DesedSynthStrong, 0), clip(Subset::DesedWeak, 1)];
        let ctx = context(&student, &student, &v, weights(1.0, 0.5, 0.0, 0.0, 0.0));
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (_, terms) = ctx.record(&mut tape, &bound, &batch, &[]).unwrap();
        let (p, _) = posteriors(&student, &batch[0].features);
        let labels = batch[0].strong.as_ref().unwrap();
        let strong = bce_masked(&p, &labels.targets, &labels.loss_mask).unwrap();
        assert!((terms.strong - strong).abs() < 1e-12);
        assert!((terms.total - (strong + 0.5 * terms.weak)).abs() < 1e-12);
        assert_eq!((terms.mt, terms.ict, terms.pseudo), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mt_term_matches_reference_and_respects_exclusion() {
        let v = vocab();
        let student = ToyModel::new(tiny()).unwrap();
        let teacher = ToyModel::new(ModelConfig { init_seed: 5, ..tiny() }).unwrap();
        let batch = vec![clip(Subset::MaestroStrong, 0), clip(Subset::MaestroStrong, 1)];
        let mut ctx = context(&student, &teacher, &v, weights(0.0, 0.0, 0.0, 1.0, 0.0));
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (_, terms) = ctx.record(&mut tape, &bound, &batch, &[]).unwrap();
        let expected: f64 = batch
            .iter()
            .map(|c| {
                let (s, sw) = posteriors(&student, &c.features);
                let (t, tw) = posteriors(&teacher, &c.features);
                mt_consistency((&s, &sw), (&t, &tw), None).unwrap()
            })
            .sum::<f64>()
            / 2.0;
        assert!((terms.mt - expected).abs() < 1e-12);
        ctx.ssl.on_maestro = false;
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (_, terms) = ctx.record(&mut tape, &bound, &batch, &[]).unwrap();
        assert_eq!(terms.mt, 0.0);
        assert_eq!(terms.total, 0.0);
    }

    #[test]
    fn ssl_class_mask_restricts_classes() {
        let v = vocab();
        let student = ToyModel::new(tiny()).unwrap();
        let teacher = ToyModel::new(ModelConfig { init_seed: 5, ..tiny() }).unwrap();
        let batch = vec![clip(Subset::DesedUnlabeled, 0)];
        let mut ctx = context(&student, &teacher, &v, weights(0.0, 0.0, 0.0, 1.0, 0.0));
        ctx.ssl.class_mask = true;
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (_, terms) = ctx.record(&mut tape, &bound, &batch, &[]).unwrap();
        let (s, sw) = posteriors(&student, &batch[0].features);
        let (t, tw) = posteriors(&teacher, &batch[0].features);
        let mask = v.native_mask(Origin::Desed);
        let expected = mt_consistency((&s, &sw), (&t, &tw), Some(&mask)).unwrap();
        assert!((terms.mt - expected).abs() < 1e-12);
    }

    #[test]
    fn ict_term_matches_pair_loss() {
        let v = vocab();
        let student = ToyModel::new(tiny()).unwrap();
        let teacher = ToyModel::new(ModelConfig { init_seed: 3, ..tiny() }).unwrap();
        let batch = vec![clip(Subset::DesedUnlabeled, 0), clip(Subset::DesedUnlabeled, 1)];
        let ctx = context(&student, &teacher, &v, weights(0.0, 0.0, 0.0, 0.0, 2.0));
        let pair = IctPair {
            left: 0,
            right: 1,
            lambda: 0.25,
        };
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (_, terms) = ctx.record(&mut tape, &bound, &batch, &[pair]).unwrap();
        let expected = ict_loss(&student, &teacher, &batch[0].features, &batch[1].features, 0.25).unwrap();
        assert!((terms.ict - expected).abs() < 1e-12);
        assert!((terms.total - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn pseudo_term_uses_its_own_mask() {
        let v = vocab();
        let student = ToyModel::new(tiny()).unwrap();
        let mut c = clip(Subset::DesedUnlabeled, 0);
        let mut grid = FrameLabelGrid::zeros(4, 10);
        grid.targets.fill(0.7);
        grid.loss_mask = vec![true, false, false, false];
        c.pseudo = Some(grid.clone());
        let mut ctx = context(&student, &student, &v, weights(1.0, 1.0, 1.0, 0.0, 0.0));
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (_, terms) = ctx.record(&mut tape, &bound, &[c.clone()], &[]).unwrap();
        let (p, _) = posteriors(&student, &c.features);
        let expected = bce_masked(&p, &grid.targets, &grid.loss_mask).unwrap();
        assert!((terms.pseudo - expected).abs() < 1e-12);
        ctx.use_pseudo = false;
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (_, terms) = ctx.record(&mut tape, &bound, &[c], &[]).unwrap();
        assert_eq!(terms.total, 0.0);
    }

    #[test]
    fn loss_terms_are_non_negative() {
        let v = vocab();
        let student = ToyModel::new(tiny()).unwrap();
        let teacher = ToyModel::new(ModelConfig { init_seed: 8, ..tiny() }).unwrap();
        let batch: Vec<ClipRecord> = Subset::ALL.iter().enumerate().map(|(k, &s)| clip(s, k)).collect();
        let ctx = context(&student, &teacher, &v, weights(1.0, 0.5, 1.0, 40.0, 10.0));
        let pair = IctPair {
            left: 4,
            right: 4,
            lambda: 0.5,
        };
        let mut tape = Tape::new();
        let bound = student.bind(&mut tape, &|_| true);
        let (loss, terms) = ctx.record(&mut tape, &bound, &batch, &[pair]).unwrap();
        for v in [terms.strong, terms.weak, terms.mt, terms.ict, terms.total] {
            assert!(v >= 0.0);
        }
        assert_eq!(tape.value(loss).data[0], terms.total);
    }
}
