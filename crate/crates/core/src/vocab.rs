//! Union class space of the two datasets and the cross-dataset label links.
//!
//! The vocabulary text format is line oriented. Section headers select what
//! the following lines mean, `#` starts a comment, blank lines are ignored:
//!
//! ```text
//! [desed]
//! Speech
//! Dishes
//! [maestro]
//! people talking
//! cutlery and dishes
//! [maestro_to_desed]
//! people talking -> Speech
//! [desed_to_maestro]
//! Dishes -> cutlery and dishes
//! ```
//!
//! Links in `[maestro_to_desed]` read `maestro_class -> desed_class`, links in
//! `[desed_to_maestro]` read `desed_class -> maestro_class`.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{FrameLabelGrid, Origin, WeakLabels};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassVocabulary {
    desed: Vec<String>,
    maestro: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    pub fn new(desed: Vec<String>, maestro: Vec<String>) -> Result<Self> {
        if desed.is_empty() || maestro.is_empty() {
            return Err(Error::Config("both class lists must be non-empty".into()));
        }
        let mut index = HashMap::new();
        for (i, name) in desed.iter().chain(maestro.iter()).enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate class name '{name}'")));
            }
        }
        Ok(ClassVocabulary {
            desed,
            maestro,
            index,
        })
    }

    /// Class sets of the DCASE 2024 task 4 development data.
    pub fn dcase2024() -> Self {
        let desed = [
            "Alarm_bell_ringing",
            "Blender",
            "Cat",
            "Dishes",
            "Dog",
            "Electric_shaver_toothbrush",
            "Frying",
            "Running_water",
            "Speech",
            "Vacuum_cleaner",
        ];
        let maestro = [
            "birds singing",
            "car",
            "people talking",
            "footsteps",
            "children voices",
            "wind blowing",
            "brakes squeaking",
            "large_vehicle",
            "cutlery and dishes",
            "metro approaching",
            "metro leaving",
            "announcement",
        ];
        Self::new(
            desed.iter().map(|s| s.to_string()).collect(),
            maestro.iter().map(|s| s.to_string()).collect(),
        )
        .expect("built-in vocabulary is valid")
    }

    /// Desk-scale vocabulary: the first two classes of each list form the two
    /// linked concept pairs (speech / people talking, dishes / cutlery).
    pub fn synthetic(n_desed: usize, n_maestro: usize) -> Result<Self> {
        if n_desed < 2 || n_maestro < 2 {
            return Err(Error::Config(
                "synthetic vocabulary needs at least two classes per dataset".into(),
            ));
        }
        let desed_pool = [
            "Speech",
            "Dishes",
            "Dog",
            "Alarm_bell_ringing",
            "Blender",
            "Cat",
            "Frying",
            "Running_water",
            "Vacuum_cleaner",
            "Electric_shaver_toothbrush",
        ];
        let maestro_pool = [
            "people talking",
            "cutlery and dishes",
            "footsteps",
            "car",
            "birds singing",
            "wind blowing",
            "brakes squeaking",
            "large_vehicle",
            "metro approaching",
            "metro leaving",
        ];
        let name = |pool: &[&str], i: usize| {
            pool.get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("{}_{i}", pool[0]))
        };
        Self::new(
            (0..n_desed).map(|i| name(&desed_pool, i)).collect(),
            (0..n_maestro).map(|i| name(&maestro_pool, i)).collect(),
        )
    }

    pub fn desed(&self) -> &[String] {
        &self.desed
    }

    pub fn maestro(&self) -> &[String] {
        &self.maestro
    }

    pub fn len(&self) -> usize {
        self.desed.len() + self.maestro.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        if index < self.desed.len() {
            &self.desed[index]
        } else {
            &self.maestro[index - self.desed.len()]
        }
    }

    /// Union order: DESED block, then MAESTRO block.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.desed
            .iter()
            .chain(self.maestro.iter())
            .map(String::as_str)
    }

    pub fn desed_range(&self) -> std::ops::Range<usize> {
        0..self.desed.len()
    }

    pub fn maestro_range(&self) -> std::ops::Range<usize> {
        self.desed.len()..self.len()
    }

    pub fn native_range(&self, origin: Origin) -> std::ops::Range<usize> {
        match origin {
            Origin::Desed => self.desed_range(),
            Origin::Maestro => self.maestro_range(),
        }
    }

    pub fn origin_of(&self, index: usize) -> Origin {
        if index < self.desed.len() {
            Origin::Desed
        } else {
            Origin::Maestro
        }
    }

    pub fn native_mask(&self, origin: Origin) -> Vec<bool> {
        let range = self.native_range(origin);
        (0..self.len()).map(|c| range.contains(&c)).collect()
    }
}

/// Cross-dataset links, stored as union indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassMapping {
    pub maestro_to_desed: BTreeSet<(usize, usize)>,
    pub desed_to_maestro: BTreeSet<(usize, usize)>,
}

impl ClassMapping {
    pub fn from_names(
        vocab: &ClassVocabulary,
        maestro_to_desed: &[(&str, &str)],
        desed_to_maestro: &[(&str, &str)],
    ) -> Result<Self> {
        let mut mapping = ClassMapping::default();
        for (m, d) in maestro_to_desed {
            let link = (lookup(vocab, m)?, lookup(vocab, d)?);
            mapping.maestro_to_desed.insert(link);
        }
        for (d, m) in desed_to_maestro {
            let link = (lookup(vocab, d)?, lookup(vocab, m)?);
            mapping.desed_to_maestro.insert(link);
        }
        mapping.validate(vocab)?;
        Ok(mapping)
    }

    /// Links of the DCASE 2024 setup.
    pub fn dcase2024(vocab: &ClassVocabulary) -> Result<Self> {
        Self::from_names(
            vocab,
            &[
                ("people talking", "Speech"),
                ("children voices", "Speech"),
                ("announcement", "Speech"),
            ],
            &[
                ("Dishes", "cutlery and dishes"),
                ("Speech", "people talking"),
            ],
        )
    }

    /// Two concept pairs, linked in both directions.
    pub fn synthetic(vocab: &ClassVocabulary) -> Result<Self> {
        let d = vocab.desed();
        let m = vocab.maestro();
        Self::from_names(
            vocab,
            &[(&m[0], &d[0]), (&m[1], &d[1])],
            &[(&d[0], &m[0]), (&d[1], &m[1])],
        )
    }

    pub fn validate(&self, vocab: &ClassVocabulary) -> Result<()> {
        let check = |src: usize, dst: usize, src_origin: Origin| -> Result<()> {
            if src >= vocab.len() || dst >= vocab.len() {
                return Err(Error::Config(format!(
                    "link {src} -> {dst} references a class outside the vocabulary"
                )));
            }
            if vocab.origin_of(src) != src_origin || vocab.origin_of(dst) == src_origin {
                return Err(Error::Config(format!(
                    "link '{}' -> '{}' does not cross datasets in the declared direction",
                    vocab.name(src),
                    vocab.name(dst)
                )));
            }
            Ok(())
        };
        for &(m, d) in &self.maestro_to_desed {
            check(m, d, Origin::Maestro)?;
        }
        for &(d, m) in &self.desed_to_maestro {
            check(d, m, Origin::Desed)?;
        }
        // many-to-one at most: one source never fans out to several targets
        for links in [&self.maestro_to_desed, &self.desed_to_maestro] {
            let mut seen = BTreeSet::new();
            for &(src, _) in links {
                if !seen.insert(src) {
                    return Err(Error::Config(format!(
                        "class '{}' links to more than one target",
                        vocab.name(src)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Links applied to clips of `origin`, as (source, target) pairs.
    pub fn links_for(&self, origin: Origin) -> &BTreeSet<(usize, usize)> {
        match origin {
            Origin::Maestro => &self.maestro_to_desed,
            Origin::Desed => &self.desed_to_maestro,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.maestro_to_desed.is_empty() && self.desed_to_maestro.is_empty()
    }
}

fn lookup(vocab: &ClassVocabulary, name: &str) -> Result<usize> {
    vocab
        .index_of(name)
        .ok_or_else(|| Error::Config(format!("link references unknown class '{name}'")))
}

/// Parses the sectioned vocabulary text format described in the module docs.
pub fn parse_vocabulary(text: &str) -> Result<(ClassVocabulary, ClassMapping)> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Desed,
        Maestro,
        M2D,
        D2M,
    }
    let mut section = Section::None;
    let mut desed = Vec::new();
    let mut maestro = Vec::new();
    let mut m2d = Vec::new();
    let mut d2m = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = match &line[1..line.len() - 1] {
                "desed" => Section::Desed,
                "maestro" => Section::Maestro,
                "maestro_to_desed" => Section::M2D,
                "desed_to_maestro" => Section::D2M,
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unknown section [{other}]"),
                    })
                }
            };
            continue;
        }
        let link = || -> Result<(String, String)> {
            let (a, b) = line.split_once("->").ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected 'source -> target'".into(),
            })?;
            Ok((a.trim().to_string(), b.trim().to_string()))
        };
        match section {
            Section::None => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "entry outside of a section".into(),
                })
            }
            Section::Desed => desed.push(line.to_string()),
            Section::Maestro => maestro.push(line.to_string()),
            Section::M2D => m2d.push(link()?),
            Section::D2M => d2m.push(link()?),
        }
    }
    let vocab = ClassVocabulary::new(desed, maestro)?;
    let mapping = ClassMapping::from_names(
        &vocab,
        &m2d.iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect::<Vec<_>>(),
        &d2m.iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect::<Vec<_>>(),
    )?;
    Ok((vocab, mapping))
}

pub fn format_vocabulary(vocab: &ClassVocabulary, mapping: &ClassMapping) -> String {
    let mut out = String::from("[desed]\n");
    for name in vocab.desed() {
        out.push_str(name);
        out.push('\n');
    }
    out.push_str("[maestro]\n");
    for name in vocab.maestro() {
        out.push_str(name);
        out.push('\n');
    }
    out.push_str("[maestro_to_desed]\n");
    for &(m, d) in &mapping.maestro_to_desed {
        out.push_str(&format!("{} -> {}\n", vocab.name(m), vocab.name(d)));
    }
    out.push_str("[desed_to_maestro]\n");
    for &(d, m) in &mapping.desed_to_maestro {
        out.push_str(&format!("{} -> {}\n", vocab.name(d), vocab.name(m)));
    }
    out
}

/// Classes a clip of `origin` is trained on: its native classes, plus the
/// link targets of that origin unless mapping is disabled.
pub fn build_loss_mask(
    origin: Origin,
    vocab: &ClassVocabulary,
    mapping: &ClassMapping,
    mapping_enabled: bool,
) -> Vec<bool> {
    let mut mask = vocab.native_mask(origin);
    if mapping_enabled {
        for &(_, dst) in mapping.links_for(origin) {
            mask[dst] = true;
        }
    }
    mask
}

/// Targets of each mapped row, computed from source rows only so the
/// operation is idempotent. Several sources mapping to one target combine by
/// maximum.
fn mapped_rows(
    rows: impl Fn(usize) -> Vec<f64>,
    links: &BTreeSet<(usize, usize)>,
    origin: Origin,
) -> Vec<(usize, Vec<f64>)> {
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for &(src, dst) in links {
        let values: Vec<f64> = match origin {
            // confidence copy
            Origin::Maestro => rows(src),
            // presence sets the linked class to 1
            Origin::Desed => rows(src)
                .into_iter()
                .map(|v| if v > 0.0 { 1.0 } else { 0.0 })
                .collect(),
        };
        match out.iter_mut().find(|(d, _)| *d == dst) {
            Some((_, acc)) => {
                for (a, v) in acc.iter_mut().zip(values) {
                    *a = a.max(v);
                }
            }
            None => out.push((dst, values)),
        }
    }
    out
}

pub fn map_frame_labels(
    labels: &FrameLabelGrid,
    mapping: &ClassMapping,
    origin: Origin,
) -> Result<FrameLabelGrid> {
    let n_classes = labels.targets.nrows();
    check_links(mapping, n_classes)?;
    let mut out = labels.clone();
    let rows = |c: usize| labels.targets.row(c).to_vec();
    for (dst, values) in mapped_rows(rows, mapping.links_for(origin), origin) {
        out.targets
            .row_mut(dst)
            .iter_mut()
            .zip(values)
            .for_each(|(t, v)| *t = v);
        out.loss_mask[dst] = true;
    }
    Ok(out)
}

pub fn map_weak_labels(
    labels: &WeakLabels,
    mapping: &ClassMapping,
    origin: Origin,
) -> Result<WeakLabels> {
    check_links(mapping, labels.targets.len())?;
    let mut out = labels.clone();
    let rows = |c: usize| vec![labels.targets[c]];
    for (dst, values) in mapped_rows(rows, mapping.links_for(origin), origin) {
        out.targets[dst] = values[0];
        out.loss_mask[dst] = true;
    }
    Ok(out)
}

fn check_links(mapping: &ClassMapping, n_classes: usize) -> Result<()> {
    let bad = mapping
        .maestro_to_desed
        .iter()
        .chain(mapping.desed_to_maestro.iter())
        .find(|(a, b)| *a >= n_classes || *b >= n_classes);
    match bad {
        Some((a, b)) => Err(Error::Config(format!(
            "link {a} -> {b} references a class absent from the {n_classes}-class label grid"
        ))),
        None => Ok(()),
    }
}

/// Zeroes every row outside `mask`.
pub fn restrict_to_mask(targets: &Array2<f64>, mask: &[bool]) -> Array2<f64> {
    let mut out = targets.clone();
    for (c, keep) in mask.iter().enumerate() {
        if !keep {
            out.row_mut(c).fill(0.0);
        }
    }
    out
}
