//! Detection and tagging metrics: PSDS1, mpAUC, and the rank score.

pub mod mpauc;
pub mod psds;
pub mod report;

pub use mpauc::{mpauc, mpauc_soft, partial_auc, segment_scores, MpaucParams};
pub use psds::{
    psds1, psds_from_detections, Detector, PsdsParams, ReferenceIndex, RocPoint, SebbDetector,
    ThresholdDetector,
};
pub use report::{
    format_report_csv, format_report_markdown, parse_report_csv, rank_score, MetricReport,
    ReportRow,
};
