//! Attention-similarity instrumentation emitted as plot-ready tables.

pub mod cka;
pub mod heatmap;
pub mod trace;

pub use cka::cka;
pub use heatmap::HeatmapGrid;
pub use trace::{head_average, heatmaps, layer_groups, snapshot, AttentionSnapshot, AttentionTrace, GROUP_SIZE};
