//! Training step, epoch loop, evaluation and the alpha grid search.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::block::Block;
use crate::config::Config;
use crate::data::{Normalizer, SeriesWindow};
use crate::episodic::select_special_index;
use crate::error::{Error, Result};
use crate::metrics::ErrorSums;
use crate::model::{BimDiff, SampleForward};
use crate::nn::{clip_grad_norm, Adam, Grads};
use crate::par;

/// Batch means of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss_condition: f64,
    pub loss_consistency: f64,
    pub loss_margin: f64,
    pub total: f64,
    pub lr: f64,
}

impl StepRecord {
    pub fn log_line(&self) -> String {
        format!(
            "step={} l_condition={:.9e} l1={:.9e} l2={:.9e} total={:.9e} lr={:e}",
            self.step, self.loss_condition, self.loss_consistency, self.loss_margin, self.total, self.lr
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Per-sample `L_condition`, the score used to pick the special sample.
    pub per_sample: Vec<f64>,
    pub record: StepRecord,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub special: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitSummary {
    pub steps: u64,
    pub epochs: usize,
    pub aborted_steps: usize,
    pub best_val_mae: Option<f64>,
}

pub struct Trainer {
    pub model: BimDiff,
    adam: Adam,
    rng: ChaCha8Rng,
    step: u64,
    pub history: Vec<StepRecord>,
}

impl Trainer {
    /// Training draws use their own stream of `train.seed`, separate from initialisation.
    pub fn new(model: BimDiff) -> Self {
        let adam = Adam::new(model.config().train.adam(), &model.store);
        let mut rng = ChaCha8Rng::seed_from_u64(model.config().train.seed);
        rng.set_stream(1);
        Self { model, adam, rng, step: 0, history: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One optimizer step plus the episodic update. A non-finite loss or
    /// gradient aborts the step before any parameter or memory changes.
    pub fn training_step(&mut self, batch: &[&SeriesWindow]) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::Invariant("training step on an empty batch".into()));
        }
        let noises: Vec<_> = batch.iter().map(|w| self.model.draw_noise(&mut self.rng, w.lookback.cols())).collect();
        let weight = 1.0 / batch.len() as f64;
        let model = &self.model;
        let results: Vec<Result<(SampleForward, Grads)>> = par::map_indexed(batch, |i, w| {
            let fwd = model.sample_forward(&w.lookback, &w.horizon, &noises[i])?;
            let mut g = model.store.zero_grads();
            if fwd.total.is_finite() {
                model.sample_backward(&fwd, weight, &mut g)?;
            }
            Ok((fwd, g))
        });
        let results: Vec<(SampleForward, Grads)> = results.into_iter().collect::<Result<_>>()?;
        if let Some(i) = results.iter().position(|(f, _)| !f.total.is_finite()) {
            return Err(Error::NonFinite(format!("loss of batch sample {i} at step {}", self.step + 1)));
        }
        self.model.store.zero_grad();
        for (_, g) in &results {
            self.model.store.accumulate(g);
        }
        let clip = self.model.config().train.grad_clip;
        let grad_norm = clip_grad_norm(&mut self.model.store, clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at step {}", self.step + 1)));
        }
        self.adam.step(&mut self.model.store)?;
        self.model.rejitter_semantic(&mut self.rng);

        for (f, _) in &results {
            self.model.record_hits(&f.episodic_hits());
        }
        let per_sample: Vec<f64> = results.iter().map(|(f, _)| f.loss_condition).collect();
        let special = select_special_index(&per_sample);
        if let Some(s) = special {
            self.model.update_episodic(results[s].0.queries.h.clone())?;
        }

        self.step += 1;
        let mean = |f: fn(&SampleForward) -> f64| results.iter().map(|(r, _)| f(r)).sum::<f64>() * weight;
        let record = StepRecord {
            step: self.step,
            loss_condition: mean(|r| r.loss_condition),
            loss_consistency: mean(|r| r.loss_consistency),
            loss_margin: mean(|r| r.loss_margin),
            total: mean(|r| r.total),
            lr: self.model.config().train.lr,
        };
        self.history.push(record);
        Ok(StepOutcome { per_sample, record, grad_norm, special })
    }

    /// Epoch loop over shuffled mini-batches. `on_epoch(epoch, trainer)` runs
    /// after every epoch (checkpointing hook).
    pub fn fit(
        &mut self,
        train: &[SeriesWindow],
        val: Option<(&[SeriesWindow], &Normalizer)>,
        mut log: Option<&mut dyn Write>,
        mut on_epoch: impl FnMut(usize, &Trainer) -> Result<()>,
    ) -> Result<FitSummary> {
        if train.is_empty() {
            return Err(Error::Data("no training windows".into()));
        }
        let cfg = self.model.config().clone();
        let t = &cfg.train;
        let mut summary = FitSummary::default();
        let mut aborted_in_row = 0usize;
        let mut since_best = 0usize;
        let mut order: Vec<usize> = (0..train.len()).collect();
        'epochs: for epoch in 1..=t.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(t.batch_size) {
                if t.max_steps > 0 && self.step >= t.max_steps as u64 {
                    break 'epochs;
                }
                let batch: Vec<&SeriesWindow> = chunk.iter().map(|&i| &train[i]).collect();
                match self.training_step(&batch) {
                    Ok(out) => {
                        aborted_in_row = 0;
                        if let Some(w) = log.as_deref_mut() {
                            writeln!(w, "{}", out.record.log_line())?;
                        }
                    }
                    Err(e @ (Error::NonFinite(_) | Error::ZeroNorm)) => {
                        let what = e.to_string();
                        summary.aborted_steps += 1;
                        aborted_in_row += 1;
                        log::warn!("step {} aborted: {what}", self.step + 1);
                        if let Some(w) = log.as_deref_mut() {
                            writeln!(w, "aborted step={} reason=\"{what}\"", self.step + 1)?;
                        }
                        if aborted_in_row > t.max_aborted_steps {
                            return Err(Error::NonFinite(format!(
                                "{aborted_in_row} consecutive steps aborted; last: {what}"
                            )));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            summary.epochs = epoch;
            on_epoch(epoch, self)?;
            if let (Some((windows, norm)), true) = (val, t.patience > 0) {
                let m = evaluate(&self.model, windows, norm, &EvalOptions::from_config(&cfg, t.seed))?;
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "epoch={epoch} val_mae={:.9e} val_mse={:.9e}", m.mae, m.mse)?;
                }
                if summary.best_val_mae.is_none_or(|b| m.mae < b) {
                    summary.best_val_mae = Some(m.mae);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= t.patience {
                        break;
                    }
                }
            }
        }
        summary.steps = self.step;
        Ok(summary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Ddim { substeps: usize },
    Ancestral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub sampler: Sampler,
    pub seed: u64,
}

impl EvalOptions {
    pub fn from_config(cfg: &Config, seed: u64) -> Self {
        let sampler = if cfg.eval.sampler == "ancestral" {
            Sampler::Ancestral
        } else {
            Sampler::Ddim { substeps: cfg.eval.substeps }
        };
        Self { sampler, seed }
    }

    /// Seed for the `index`-th window, independent of evaluation order.
    pub fn window_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Normalised-scale forecast for one lookback.
pub fn forecast_window(model: &BimDiff, lookback: &Block, opts: &EvalOptions, index: usize) -> Result<Block> {
    let seed = opts.window_seed(index);
    match opts.sampler {
        Sampler::Ddim { substeps } => model.forecast(lookback, substeps, seed),
        Sampler::Ancestral => model.forecast_ancestral(lookback, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub windows: usize,
}

/// Forecasts every window, maps forecasts and targets back to data scale and
/// averages the errors over all entries.
pub fn evaluate(model: &BimDiff, windows: &[SeriesWindow], norm: &Normalizer, opts: &EvalOptions) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::Data("evaluation split has no windows".into()));
    }
    let parts: Vec<Result<ErrorSums>> = par::map_indexed(windows, |i, w| {
        let pred = norm.denormalize(&forecast_window(model, &w.lookback, opts, i)?)?;
        let truth = norm.denormalize(&w.horizon)?;
        let mut s = ErrorSums::default();
        s.add(truth.data(), pred.data())?;
        Ok(s)
    });
    let mut total = ErrorSums::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(Metrics { mae: total.mae(), mse: total.mse(), windows: windows.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub alpha1: f64,
    pub alpha2: f64,
    pub score: f64,
    /// Every `(alpha1, alpha2, score)` in evaluation order.
    pub table: Vec<(f64, f64, f64)>,
}

/// Exhaustive search minimising `score(alpha1, alpha2)`. Grids are visited in
/// ascending order and only a strictly better score replaces the incumbent,
/// so ties go to the smaller alphas.
pub fn grid_search(
    alpha1: &[f64],
    alpha2: &[f64],
    mut score: impl FnMut(f64, f64) -> Result<f64>,
) -> Result<GridResult> {
    if alpha1.is_empty() || alpha2.is_empty() {
        return Err(Error::Config("grid search needs non-empty alpha grids".into()));
    }
    let sorted = |g: &[f64]| {
        let mut v = g.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let mut best: Option<(f64, f64, f64)> = None;
    let mut table = Vec::new();
    for &a1 in &sorted(alpha1) {
        for &a2 in &sorted(alpha2) {
            let s = score(a1, a2)?;
            table.push((a1, a2, s));
            if s.is_finite() && best.is_none_or(|(_, _, b)| s < b) {
                best = Some((a1, a2, s));
            }
        }
    }
    let (a1, a2, s) = best.ok_or_else(|| Error::NonFinite("every grid point scored non-finite".into()))?;
    Ok(GridResult { alpha1: a1, alpha2: a2, score: s, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_grid() {
        let r = grid_search(&[0.3], &[0.7], |_, _| Ok(1.0)).unwrap();
        assert_eq!((r.alpha1, r.alpha2), (0.3, 0.7));
    }

    #[test]
    fn ties_go_to_smaller_alphas() {
        let r = grid_search(&[1.0, 0.1], &[0.5, 0.0], |_, _| Ok(2.0)).unwrap();
        assert_eq!((r.alpha1, r.alpha2), (0.1, 0.0));
    }

    #[test]
    fn zero_loss_point_wins() {
        let r = grid_search(&[0.0, 0.1, 1.0], &[0.0, 0.1], |a, b| Ok(if a == 1.0 && b == 0.1 { 0.0 } else { 1.0 + a }))
            .unwrap();
        assert_eq!((r.alpha1, r.alpha2, r.score), (1.0, 0.1, 0.0));
        assert_eq!(r.table.len(), 6);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(grid_search(&[], &[0.1], |_, _| Ok(0.0)).is_err());
    }
}
