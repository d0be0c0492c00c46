use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ReportRow;
use crate::ingest::{generate_synthetic_corpus, SyntheticCorpus};
use crate::train::config::StageConfig;
use crate::train::pipeline::{parallel_map, run_pipeline, PipelineConfig, PipelineResult};
use crate::types::Stage;

/// Single-switch departures from the default recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AblationFlag {
    NoDesed,
    NoMaestro,
    NoSslMaestro,
    NoClassMapping,
    SslClassMask,
    NoSslClassMask,
    SeparateRnn,
    HardPseudo,
    PseudoAllClasses,
    PseudoLoss,
}

impl AblationFlag {
    pub const ALL: [AblationFlag; 10] = [
        AblationFlag::NoDesed,
        AblationFlag::NoMaestro,
        AblationFlag::NoSslMaestro,
        AblationFlag::NoClassMapping,
        AblationFlag::SslClassMask,
        AblationFlag::NoSslClassMask,
        AblationFlag::SeparateRnn,
        AblationFlag::HardPseudo,
        AblationFlag::PseudoAllClasses,
        AblationFlag::PseudoLoss,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationFlag::NoDesed => "-DESED",
            AblationFlag::NoMaestro => "-MAESTRO",
            AblationFlag::NoSslMaestro => "-SSL MAESTRO",
            AblationFlag::NoClassMapping => "-MAESTRO-DESED Map",
            AblationFlag::SslClassMask => "+SSL class mask",
            AblationFlag::NoSslClassMask => "-SSL class mask",
            AblationFlag::SeparateRnn => "+Separate RNN",
            AblationFlag::HardPseudo => "+Hard Pseudo",
            AblationFlag::PseudoAllClasses => "+Pseudo All Classes",
            AblationFlag::PseudoLoss => "+Pseudo Loss",
        }
    }

    fn apply_stage(self, stage: Stage, s: &mut StageConfig) {
        match self {
            AblationFlag::NoDesed => s.train_maestro_only = true,
            AblationFlag::NoMaestro => s.train_desed_only = true,
            AblationFlag::NoSslMaestro => s.ssl_on_maestro = false,
            AblationFlag::NoClassMapping => s.class_mapping = false,
            AblationFlag::SslClassMask => s.ssl_class_mask = true,
            AblationFlag::NoSslClassMask => s.ssl_class_mask = false,
            AblationFlag::SeparateRnn => s.separate_rnn = true,
            AblationFlag::HardPseudo => s.hard_pseudo = true,
            AblationFlag::PseudoAllClasses => s.pseudo_all_classes = true,
            AblationFlag::PseudoLoss => {
                if stage == Stage::I2S2 {
                    s.use_pseudo_loss = true;
                }
            }
        }
    }

    pub fn apply(self, cfg: &mut PipelineConfig) {
        for stage in Stage::ALL {
            self.apply_stage(stage, cfg.stages.get_mut(stage));
        }
        if self == AblationFlag::SeparateRnn {
            cfg.model.separate_rnn = true;
        }
    }
}

impl fmt::Display for AblationFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn split_key(s: &str) -> Option<(char, String)> {
    let s = s.trim();
    let sign = s.chars().next().filter(|c| *c == '+' || *c == '-')?;
    let body: String = s[1..]
        .chars()
        .filter(char::is_ascii_alphanumeric)
        .collect::<String>()
        .to_ascii_lowercase();
    let body = body.strip_suffix("layer").map(str::to_string).unwrap_or(body);
    Some((sign, body))
}

impl FromStr for AblationFlag {
    type Err = Error;

    /// Case, spaces, underscores, dashes and dots after the sign are
    /// ignored, so `+pseudo_loss` and `+ Pseudo Loss` both parse. `-Map` is
    /// accepted for the mapping switch.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::Config(format!("unknown ablation flag {s:?}"));
        let key = split_key(s).ok_or_else(unknown)?;
        if key == ('-', "map".to_string()) {
            return Ok(AblationFlag::NoClassMapping);
        }
        AblationFlag::ALL
            .into_iter()
            .find(|f| split_key(f.label()).as_ref() == Some(&key))
            .ok_or_else(unknown)
    }
}

impl TryFrom<String> for AblationFlag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AblationFlag> for String {
    fn from(f: AblationFlag) -> String {
        f.label().to_string()
    }
}

/// Name of a comparison arm: the flag labels joined by spaces, or
/// "baseline".
pub fn arm_name(flags: &[AblationFlag]) -> String {
    if flags.is_empty() {
        "baseline".into()
    } else {
        flags.iter().map(|f| f.label()).collect::<Vec<_>>().join(" ")
    }
}

/// Directory-safe form of [`arm_name`].
pub fn arm_slug(flags: &[AblationFlag]) -> String {
    if flags.is_empty() {
        return "baseline".into();
    }
    let parts: Vec<String> = flags
        .iter()
        .map(|f| {
            let label = f.label();
            let sign = if label.starts_with('+') { "plus" } else { "minus" };
            let words: Vec<String> = label[1..]
                .split(|c: char| !c.is_ascii_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_ascii_lowercase)
                .collect();
            format!("{sign}-{}", words.join("-"))
        })
        .collect();
    parts.join("_")
}

/// One ablation arm: its flags, the final-system report row, and the full
/// pipeline result.
#[derive(Clone, Debug)]
pub struct ArmResult {
    pub flags: Vec<AblationFlag>,
    pub row: ReportRow,
    pub result: PipelineResult,
}

/// Runs the baseline and one arm per flag set, returning one row per arm
/// for the final system (the last stage that ran).
pub fn run_ablation(
    base: &PipelineConfig,
    arms: &[Vec<AblationFlag>],
    corpus: Option<&SyntheticCorpus>,
    jobs: usize,
) -> Result<Vec<ArmResult>> {
    let owned;
    let corpus = match corpus {
        Some(c) => c,
        None => {
            owned = generate_synthetic_corpus(&base.corpus)?;
            &owned
        }
    };
    let mut all: Vec<Vec<AblationFlag>> = vec![Vec::new()];
    all.extend(arms.iter().cloned());
    let mut inner = base.clone();
    inner.jobs = 1;
    parallel_map(all.len(), jobs, |i| {
        let mut cfg = inner.clone();
        cfg.flags.extend(all[i].iter().copied());
        let result = run_pipeline(&cfg, corpus)?;
        let mut row = result
            .report
            .last()
            .cloned()
            .ok_or_else(|| Error::Data("pipeline produced no report rows".into()))?;
        row.system = arm_name(&all[i]);
        Ok(ArmResult {
            flags: all[i].clone(),
            row,
            result,
        })
    })
}
