//! Intrinsic (human-graded) and extrinsic (QA accuracy) evaluation, plus
//! text renderings of the result tables.

pub mod extrinsic;
pub mod intrinsic;
pub mod tables;

pub use extrinsic::{
    accuracy_by_region, average_rows, check_gdvcr_stats, dataset_stats, gold_labels,
    load_seed_results, read_seed_results, AccuracyRow, DatasetStats, ExtrinsicReport, GoldLabel,
    ModelAccuracy, PredictionRecord, SeedAccuracy,
};
pub use intrinsic::{
    average_kappa, build_intrinsic_set, cohen_kappa, intrinsic_report, kappa_by_culture,
    load_annotations, mean_grades, read_annotations, round_half_up, AnnotationRecord, ConceptSheet,
    Criterion, Culture, CultureRow, IntrinsicItem, IntrinsicReport, ModelBlock,
};
pub use tables::{render_seed_table, render_table1, render_table2, table2_columns, Table2Column};
