use crate::error::{Error, Result};
use crate::eval::psds::{psd_roc_area, PsdsParams, ReferenceIndex};
use crate::postproc::sebb::{sebb_row, SebbParams};
use crate::types::{EventList, Posteriorgram};
use crate::vocab::ClassVocabulary;

pub const GRID_POINTS: usize = 8;
pub const STEP_RANGE: (f64, f64) = (0.38, 0.66);
pub const REL_RANGE: (f64, f64) = (1.5, 3.25);
pub const ABS_RANGE: (f64, f64) = (0.15, 0.325);

/// `n` evenly spaced values from `lo` to `hi`, both endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + i as f64 * step })
        .collect()
}

pub fn step_grid() -> Vec<f64> {
    linspace(STEP_RANGE.0, STEP_RANGE.1, GRID_POINTS)
}

pub fn rel_grid() -> Vec<f64> {
    linspace(REL_RANGE.0, REL_RANGE.1, GRID_POINTS)
}

pub fn abs_grid() -> Vec<f64> {
    linspace(ABS_RANGE.0, ABS_RANGE.1, GRID_POINTS)
}

/// Every grid point in lexicographic (step, rel, abs) order.
pub fn sebb_grid() -> Vec<SebbParams> {
    let mut out = Vec::with_capacity(GRID_POINTS.pow(3));
    for &s in &step_grid() {
        for &r in &rel_grid() {
            for &a in &abs_grid() {
                out.push(SebbParams::new(s, r, a));
            }
        }
    }
    out
}

/// Single-class PSDS of SEBB detections for `class` under `p`.
fn class_score(
    posts: &[Posteriorgram],
    index: &ReferenceIndex,
    class: usize,
    p: &SebbParams,
    params: &PsdsParams,
) -> Result<f64> {
    let mut all = Vec::with_capacity(posts.len());
    for post in posts {
        let row = post.scores.row(class).to_vec();
        all.push(EventList {
            clip_id: post.clip_id.clone(),
            events: sebb_row(&row, class, post.frame_hop, p)?,
        });
    }
    let roc: Vec<_> = params
        .thresholds()
        .into_iter()
        .map(|th| {
            let dets: Vec<EventList> = all
                .iter()
                .map(|l| EventList {
                    clip_id: l.clip_id.clone(),
                    events: l.events.iter().copied().filter(|e| e.confidence >= th).collect(),
                })
                .collect();
            index.roc_point(index.counts(&dets, class, params))
        })
        .collect();
    Ok(psd_roc_area(&[roc], params))
}

/// Class-wise exhaustive grid search maximizing PSDS1. Classes without
/// reference events get the first grid point.
pub fn tune_sebb(
    posts: &[Posteriorgram],
    references: &[EventList],
    params: &PsdsParams,
) -> Result<Vec<SebbParams>> {
    params.validate()?;
    let n_classes = match posts.first() {
        Some(p) => p.n_classes(),
        None => return Err(Error::Data("SEBB tuning needs validation posteriorgrams".into())),
    };
    let index = ReferenceIndex::new(posts, references)?;
    let grid = sebb_grid();
    let mut chosen = vec![grid[0]; n_classes];
    for &class in index.classes.iter().filter(|&&c| c < n_classes) {
        let mut best = f64::NEG_INFINITY;
        for p in &grid {
            let score = class_score(posts, &index, class, p, params)?;
            if score > best {
                best = score;
                chosen[class] = *p;
            }
        }
        log::debug!("class {class}: SEBB {:?} PSDS1 {best}", chosen[class]);
    }
    Ok(chosen)
}

const TSV_HEADER: &str = "class\tstep_filter_length\tmerge_threshold_rel\tmerge_threshold_abs";

pub fn format_sebb_tsv(params: &[SebbParams], vocab: &ClassVocabulary) -> Result<String> {
    if params.len() != vocab.len() {
        return Err(Error::Shape(format!(
            "{} parameter sets for {} classes",
            params.len(),
            vocab.len()
        )));
    }
    let mut out = format!("{TSV_HEADER}\n");
    for (name, p) in vocab.names().zip(params) {
        out.push_str(&format!(
            "{name}\t{}\t{}\t{}\n",
            p.step_filter_length, p.merge_threshold_rel, p.merge_threshold_abs
        ));
    }
    Ok(out)
}

pub fn parse_sebb_tsv(text: &str, vocab: &ClassVocabulary) -> Result<Vec<SebbParams>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(TSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected SEBB parameter header".into(),
        });
    }
    let mut out: Vec<Option<SebbParams>> = vec![None; vocab.len()];
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: "expected 4 tab-separated fields".into(),
            });
        }
        let class = vocab
            .index_of(f[0])
            .ok_or_else(|| Error::UnknownClass(f[0].to_string()))?;
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("'{s}' is not a number"),
            })
        };
        let p = SebbParams::new(num(f[1])?, num(f[2])?, num(f[3])?);
        p.validate()?;
        out[class] = Some(p);
    }
    out.into_iter()
        .enumerate()
        .map(|(c, p)| {
            p.ok_or_else(|| Error::Data(format!("no SEBB parameters for class '{}'", vocab.name(c))))
        })
        .collect()
}
