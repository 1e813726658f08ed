use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::error::{shape_check, Result};

/// Per-channel z-score fitted on the training segment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population statistics per column. A zero std is replaced by 1.
    pub fn fit(train: &Block) -> Self {
        let (n, c) = train.shape();
        let mut mean = vec![0.0; c];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(train.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(train.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    log::warn!("channel {j} has zero variance in the training segment; using std 1");
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, b: &Block) -> Result<()> {
        shape_check(b.cols() == self.mean.len(), || {
            format!("block has {} channels, normaliser {}", b.cols(), self.mean.len())
        })
    }

    pub fn normalize(&self, b: &Block) -> Result<Block> {
        self.check(b)?;
        let mut out = b.clone();
        let c = b.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        Ok(out)
    }

    pub fn denormalize(&self, b: &Block) -> Result<Block> {
        self.check(b)?;
        let mut out = b.clone();
        let c = b.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[i % c] + self.mean[i % c];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_maps_to_zero() {
        let b = Block::from_vec(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        let n = Normalizer::fit(&b);
        assert_eq!(n.std[0], 1.0);
        let z = n.normalize(&b).unwrap();
        assert_eq!(z.column(0), vec![0.0; 3]);
        assert_eq!(n.denormalize(&z).unwrap(), b);
    }

    #[test]
    fn test_block_uses_train_stats() {
        let train = Block::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        let test = Block::from_vec(2, 1, vec![10.0, 12.0]).unwrap();
        let n = Normalizer::fit(&train);
        let z = n.normalize(&test).unwrap();
        assert_eq!(z.column(0), vec![9.0, 11.0]);
    }

    #[test]
    fn channel_mismatch() {
        let n = Normalizer::identity(2);
        assert!(n.normalize(&Block::zeros(1, 3)).is_err());
    }
}
