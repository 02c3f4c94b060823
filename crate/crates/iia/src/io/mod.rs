//! Dataset ingestion and preprocessing, attribution-map persistence,
//! heatmap/overlay rendering, and CSV/Markdown reporting.

pub mod archive;
pub mod dataset;
pub mod render;
pub mod report;

pub use archive::{load_map, save_map, MapSidecar};
pub use dataset::{
    load_and_preprocess, load_dataset, preprocess, DatasetKind, DatasetSpec, Sample,
};
pub use render::{render_heatmap, render_overlay, render_sanity_plot};
pub use report::{sanity_report_csv, write_report, MetricRecord};
