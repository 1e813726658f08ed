//! Config-driven glue: obtain a dataset, split and window it, and name the
//! ablation variants.

use std::io::Write;
use std::path::Path;

use crate::config::Config;
use crate::data::{
    load_csv, parse_ratios, split, synth_generate, windows, Dataset, DatasetStats, Normalizer, SeriesWindow,
    SynthSpec,
};
use crate::error::{Error, Result};
use crate::model::BimDiff;
use crate::trainer::{evaluate, EvalOptions, FitSummary, Metrics, Trainer};

/// Ablation variants in report order.
pub const VARIANTS: [&str; 5] = ["full", "w/o-semantic", "w/o-episodic", "w/o-both", "w/o-shared"];

/// The CSV named in `[data].path`, or the `[synth]` series when it is empty.
pub fn load_dataset(cfg: &Config) -> Result<Dataset> {
    if cfg.data.path.is_empty() {
        Ok(synth_generate(&SynthSpec::from(&cfg.synth), cfg.synth.seed)?.0)
    } else {
        load_csv(Path::new(&cfg.data.path), cfg.data.missing.parse()?)
    }
}

/// Normalised windows of every split. Statistics come from the training segment only.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalizer: Normalizer,
    pub train: Vec<SeriesWindow>,
    pub val: Vec<SeriesWindow>,
    pub test: Vec<SeriesWindow>,
    pub stats: DatasetStats,
}

/// Fills `model.channels` from the data when unset, then splits, normalises
/// and windows. A given normaliser (from a checkpoint) replaces the fitted one.
pub fn prepare(cfg: &mut Config, ds: &Dataset, normalizer: Option<&Normalizer>) -> Result<Prepared> {
    if cfg.model.channels == 0 {
        cfg.model.channels = ds.channels();
    } else if cfg.model.channels != ds.channels() {
        return Err(Error::Data(format!(
            "config expects {} channels, data has {}",
            cfg.model.channels,
            ds.channels()
        )));
    }
    cfg.validate()?;
    let (l, h) = (cfg.model.lookback, cfg.model.horizon);
    let splits = split(&ds.values, parse_ratios(&cfg.data.split)?, l + h)?;
    let normalizer = match normalizer {
        Some(n) if n.channels() != ds.channels() => {
            return Err(Error::Data(format!("normaliser has {} channels, data {}", n.channels(), ds.channels())))
        }
        Some(n) => n.clone(),
        None => Normalizer::fit(&splits.train),
    };
    let stats = DatasetStats::new(ds, &splits);
    let eval_stride = cfg.eval_stride();
    Ok(Prepared {
        train: windows(&normalizer.normalize(&splits.train)?, l, h, cfg.data.train_stride)?,
        val: windows(&normalizer.normalize(&splits.val)?, l, h, eval_stride)?,
        test: windows(&normalizer.normalize(&splits.test)?, l, h, eval_stride)?,
        normalizer,
        stats,
    })
}

/// Outcome of [`train_and_test`].
pub struct Trained {
    pub trainer: Trainer,
    pub summary: FitSummary,
    pub test: Metrics,
}

/// Builds a model from `cfg`, fits it on the training windows and scores
/// the test windows with evaluation seed `train.seed`.
pub fn train_and_test(
    cfg: &Config,
    data: &Prepared,
    log: Option<&mut dyn Write>,
    on_epoch: impl FnMut(usize, &Trainer) -> Result<()>,
) -> Result<Trained> {
    let mut trainer = Trainer::new(BimDiff::new(cfg)?);
    let summary = trainer.fit(&data.train, Some((&data.val, &data.normalizer)), log, on_epoch)?;
    let opts = EvalOptions::from_config(cfg, cfg.train.seed);
    let test = evaluate(&trainer.model, &data.test, &data.normalizer, &opts)?;
    Ok(Trained { trainer, summary, test })
}

/// `cfg` with the memory switches of `variant` applied.
pub fn apply_variant(cfg: &Config, variant: &str) -> Result<Config> {
    let mut c = cfg.clone();
    let m = &mut c.memory;
    match variant {
        "full" => {}
        "w/o-semantic" => m.use_semantic = false,
        "w/o-episodic" => m.use_episodic = false,
        "w/o-both" => {
            m.use_semantic = false;
            m.use_episodic = false;
        }
        "w/o-shared" => m.shared_memory = false,
        other => {
            return Err(Error::Config(format!("unknown variant {other:?}; expected one of {}", VARIANTS.join(", "))))
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_toggle_flags() {
        let base = Config::default();
        let b = apply_variant(&base, "w/o-both").unwrap();
        assert!(!b.memory.use_semantic && !b.memory.use_episodic);
        assert!(!apply_variant(&base, "w/o-shared").unwrap().memory.shared_memory);
        assert_eq!(apply_variant(&base, "full").unwrap(), base);
        assert!(apply_variant(&base, "nope").is_err());
    }

    #[test]
    fn prepare_fills_channels_and_windows() {
        let mut cfg = Config::default();
        cfg.model.lookback = 16;
        cfg.model.horizon = 4;
        cfg.synth.length = 400;
        cfg.synth.channels = 3;
        cfg.synth.motif_len = 8;
        cfg.synth.events = 5;
        let ds = load_dataset(&cfg).unwrap();
        let p = prepare(&mut cfg, &ds, None).unwrap();
        assert_eq!(cfg.model.channels, 3);
        assert_eq!(p.stats.train, 280);
        assert_eq!(p.train.len(), 280 - 20 + 1);
        assert_eq!(p.test.len(), (80 - 20) / 4 + 1);
    }
}
