use crate::block::Block;
use crate::error::{Error, Result};

/// A lookback block immediately followed by its horizon block.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindow {
    /// `L x N`.
    pub lookback: Block,
    /// `H x N`.
    pub horizon: Block,
    /// Row of the segment where the lookback starts.
    pub origin: usize,
}

/// `floor((len - L - H) / stride) + 1`, or 0 when the segment is too short.
pub fn window_count(len: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    if len < lookback + horizon || stride == 0 {
        0
    } else {
        (len - lookback - horizon) / stride + 1
    }
}

pub fn windows(segment: &Block, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<SeriesWindow>> {
    if stride == 0 || lookback == 0 || horizon == 0 {
        return Err(Error::Config("window lengths and stride must be positive".into()));
    }
    let count = window_count(segment.rows(), lookback, horizon, stride);
    if count == 0 {
        return Err(Error::Data(format!(
            "segment of {} rows is shorter than lookback + horizon = {}",
            segment.rows(),
            lookback + horizon
        )));
    }
    Ok((0..count)
        .map(|i| {
            let o = i * stride;
            SeriesWindow {
                lookback: segment.slice_rows(o, o + lookback),
                horizon: segment.slice_rows(o + lookback, o + lookback + horizon),
                origin: o,
            }
        })
        .collect())
}
