//! Benchmark harness: manifests and responses, answer parsing, the four QA
//! metrics over the 17-ratio protocol, feature-alignment tables, PCA export
//! and the fusion-strategy ablation.
//!
//! All aggregation runs in a fixed order (samples by manifest order or id,
//! ratios ascending) so equal inputs yield byte-equal reports.

mod ablation;
mod features;
mod metrics;
mod parse;
mod qa;
mod report;

pub use ablation::{run_ablation, AblationRow, AblationTable, FusionStrategy, ABLATION_RATIOS};
pub use features::{
    build_corpus, collect_pca_vectors, cosine_table, event_image, export_features, pca_csv, pca_export,
    pooled_cosine, CosineAverage, CosineRow, CosineTable, FeatureSource, FileSource, LabeledVector, PcaPoint,
    StubSource, StubSourceConfig,
};
pub use metrics::{score_counting, score_multichoice, ChoicePair};
pub use parse::{parse_choice_answer, parse_count_answer, ChoiceParse, CountParse};
pub use qa::{
    load_manifest, load_responses, manifest_jsonl, parse_manifest, parse_responses, read_sensor_size, ChoiceOption,
    LoadedSample, ModelResponse, QaItem, TaskKind, TripletSample,
};
pub use report::{
    average_metrics, config_hash, read_report, score_responses, to_json, write_report, EvalReport, Metrics,
    RatioRow, ReportMeta, Tabular,
};
