//! Graph-classification datasets: TU-format parsing and writing, archive
//! fetching with an on-disk cache, and stratified fold splits.

mod fetch;
mod folds;
mod graph;
mod tu;

pub use fetch::{fetch_tu, raw_dir, Fetched, DEFAULT_URL_BASE};
pub use folds::{stratified_folds, stratify, FoldSplit, DEFAULT_FOLD_SEED};
pub use graph::{Dataset, FeaturePolicy, Graph};
pub use tu::{parse_tu, parse_tu_with, write_tu, ParseOptions, DEFAULT_DEGREE_CAP};
