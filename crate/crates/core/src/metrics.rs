//! Point-forecast error metrics over all observed entries.

use crate::error::{shape_check, Result};

/// Mean absolute error.
pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    Ok(truth.iter().zip(pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64)
}

/// Mean squared error.
pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    Ok(truth.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64)
}

fn check(truth: &[f64], pred: &[f64]) -> Result<()> {
    shape_check(truth.len() == pred.len() && !truth.is_empty(), || {
        format!("metric inputs of length {} and {}", truth.len(), pred.len())
    })
}

/// Running sums so metrics can be merged across windows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorSums {
    pub abs: f64,
    pub sq: f64,
    pub count: usize,
}

impl ErrorSums {
    pub fn add(&mut self, truth: &[f64], pred: &[f64]) -> Result<()> {
        check(truth, pred)?;
        for (a, b) in truth.iter().zip(pred) {
            let e = a - b;
            self.abs += e.abs();
            self.sq += e * e;
        }
        self.count += truth.len();
        Ok(())
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.abs += other.abs;
        self.sq += other.sq;
        self.count += other.count;
    }

    pub fn mae(&self) -> f64 {
        self.abs / self.count as f64
    }

    pub fn mse(&self) -> f64 {
        self.sq / self.count as f64
    }
}
