//! CSV ingestion, chronological splits, z-score normalisation, sliding
//! windows and the synthetic cross-channel dataset.

mod csv_io;
mod normalize;
mod split;
mod synth;
mod window;

pub use csv_io::{load_csv, parse_csv, write_csv, MissingPolicy};
pub use normalize::Normalizer;
pub use split::{parse_ratios, split, Splits};
pub use synth::{synth_generate, PlantedEvent, SynthSpec};
pub use window::{window_count, windows, SeriesWindow};

use serde::Serialize;

use crate::block::Block;

/// A multivariate series: rows are time steps, columns channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channel_names: Vec<String>,
    /// First-column labels when the file had a timestamp column.
    pub timestamps: Option<Vec<String>>,
    pub values: Block,
}

impl Dataset {
    pub fn samples(&self) -> usize {
        self.values.rows()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }
}

/// Sizes written next to a run as `dataset_stats.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub samples: usize,
    pub channels: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetStats {
    pub fn new(ds: &Dataset, splits: &Splits) -> Self {
        Self {
            name: ds.name.clone(),
            samples: ds.samples(),
            channels: ds.channels(),
            train: splits.train.rows(),
            val: splits.val.rows(),
            test: splits.test.rows(),
        }
    }
}
