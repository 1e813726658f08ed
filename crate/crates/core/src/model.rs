//! The full forecaster: encoder, memories, condition head and denoiser, with
//! an exact hand-written backward pass for the training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::Block;
use crate::conditioning::{
    draw_mask, draw_normal_vectors, future_mixup, ConditionHead, ConditionTrace, MemoryPrior, Mode, PriorHead,
    QueryBlock, TemporalEncoder,
};
use crate::config::Config;
use crate::denoiser::{ancestral_sample, ddim_sample, ddim_sample_from, standard_normal_block, Denoiser};
use crate::episodic::{EpisodicStore, Slot};
use crate::error::{Error, Result};
use crate::nn::{Grads, MlpTrace, ParamStore};
use crate::schedule::{make_schedule, NoiseSchedule};
use crate::semantic::{SemanticLosses, SemanticMemory};

/// All random draws for one training sample, fixed up front so the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleNoise {
    pub k: usize,
    pub eps_y: Block,
    pub eps_m: Vec<Vec<f64>>,
    pub eps_c: Vec<Vec<f64>>,
    pub mask: Block,
}

/// Forward pass of one training sample.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub loss_condition: f64,
    /// Sum over channels of the consistency term.
    pub loss_consistency: f64,
    /// Sum over channels of the margin term.
    pub loss_margin: f64,
    pub total: f64,
    pub y0_hat: Block,
    pub queries: QueryBlock,
    pub prior: MemoryPrior,
    cond: ConditionTrace,
    mask: Block,
    y0: Block,
    den_traces: Vec<MlpTrace>,
    sem_losses: Vec<Option<SemanticLosses>>,
}

impl SampleForward {
    /// Episodic records recalled per channel, as `(store index, slots)`.
    pub fn episodic_hits(&self) -> Vec<(usize, Vec<Slot>)> {
        (0..self.queries.channels())
            .filter_map(|j| self.prior.episodic_recall(j).map(|(i, r)| (*i, r.slots.clone())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BimDiff {
    config: Config,
    pub store: ParamStore,
    encoder: TemporalEncoder,
    prior: PriorHead,
    condition: ConditionHead,
    denoiser: Denoiser,
    semantic: Option<SemanticMemory>,
    episodic: Vec<EpisodicStore>,
    schedule: NoiseSchedule,
}

impl BimDiff {
    /// Builds and initialises a model; all draws come from `config.train.seed`.
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let m = &config.model;
        let mem = &config.memory;
        let schedule = make_schedule(config.schedule.steps, &config.schedule.kind()?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut store = ParamStore::new();
        let encoder = TemporalEncoder::new(&mut store, m.lookback, &m.encoder_hidden, m.latent_dim, &mut rng);
        let prior = PriorHead::new(&mut store, m.latent_dim, m.log_var_init, &mut rng);
        let condition = ConditionHead::new(&mut store, m.latent_dim, m.horizon, m.log_var_init, &mut rng);
        let denoiser = Denoiser::new(&mut store, m.horizon, m.step_emb_dim, &m.denoiser_hidden, &mut rng);
        let banks = if mem.shared_memory { 1 } else { m.channels };
        let semantic = mem
            .use_semantic
            .then(|| SemanticMemory::new(&mut store, mem.semantic_blocks, m.latent_dim, banks, &mut rng));
        let episodic = if mem.use_episodic {
            (0..banks)
                .map(|_| EpisodicStore::new(mem.episodic_capacity, mem.queue_capacity, mem.recall_top_k, m.latent_dim))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { config: config.clone(), store, encoder, prior, condition, denoiser, semantic, episodic, schedule })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn semantic(&self) -> Option<&SemanticMemory> {
        self.semantic.as_ref()
    }

    pub fn episodic(&self) -> &[EpisodicStore] {
        &self.episodic
    }

    pub fn episodic_mut(&mut self) -> &mut [EpisodicStore] {
        &mut self.episodic
    }

    pub fn encoder(&self) -> &TemporalEncoder {
        &self.encoder
    }

    pub fn prior_head(&self) -> &PriorHead {
        &self.prior
    }

    pub fn condition_head(&self) -> &ConditionHead {
        &self.condition
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    pub fn horizon(&self) -> usize {
        self.config.model.horizon
    }

    pub fn lookback(&self) -> usize {
        self.config.model.lookback
    }

    pub fn draw_noise<R: Rng>(&self, rng: &mut R, channels: usize) -> SampleNoise {
        let (h, d) = (self.horizon(), self.config.model.latent_dim);
        let k = rng.random_range(1..=self.schedule.steps());
        SampleNoise {
            k,
            eps_y: standard_normal_block(h, channels, rng),
            eps_m: draw_normal_vectors(channels, d, rng),
            eps_c: draw_normal_vectors(channels, d, rng),
            mask: draw_mask(h, channels, rng),
        }
    }

    fn check_channels(&self, n: usize) -> Result<()> {
        let expected = self.config.model.channels;
        if !self.config.memory.shared_memory && n != expected {
            return Err(Error::Shape(format!(
                "per-channel memories were built for {expected} channels, got {n}"
            )));
        }
        Ok(())
    }

    /// Queries, memory prior and condition `c`. Sampling is on when `noise` is given.
    pub fn conditioning(
        &self,
        lookback: &Block,
        noise: Option<&SampleNoise>,
    ) -> Result<(QueryBlock, MemoryPrior, ConditionTrace)> {
        self.check_channels(lookback.cols())?;
        let q = self.encoder.encode(&self.store, lookback)?;
        let prior = self.prior.memory_prior(
            &self.store,
            &q,
            self.semantic.as_ref(),
            &self.episodic,
            noise.map(|n| n.eps_m.as_slice()),
        )?;
        let cond = self.condition.forward(&self.store, &q, &prior, noise.map(|n| n.eps_c.as_slice()))?;
        Ok((q, prior, cond))
    }

    pub fn sample_forward(&self, lookback: &Block, y0: &Block, noise: &SampleNoise) -> Result<SampleForward> {
        let (q, prior, cond) = self.conditioning(lookback, Some(noise))?;
        let c_mix = future_mixup(Mode::Train, &cond.c, Some(y0), Some(&noise.mask))?;
        let y_k = self.schedule.forward_sample(y0, noise.k, &noise.eps_y)?;
        let (y0_hat, den_traces) = self.denoiser.predict(&self.store, &y_k, noise.k, &c_mix)?;
        let count = y0.data().len() as f64;
        let loss_condition =
            y0_hat.data().iter().zip(y0.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / count;
        let margin = self.config.memory.margin;
        let sem_losses = match &self.semantic {
            Some(sem) => q
                .h
                .iter()
                .enumerate()
                .map(|(j, h)| sem.losses(&self.store, j, h, margin).map(Some))
                .collect::<Result<Vec<_>>>()?,
            None => vec![None; q.channels()],
        };
        let loss_consistency = sem_losses.iter().flatten().fold(0.0, |a, l| a + l.consistency);
        let loss_margin = sem_losses.iter().flatten().fold(0.0, |a, l| a + l.margin);
        let t = &self.config.train;
        let total = loss_condition + t.alpha1 * loss_consistency + t.alpha2 * loss_margin;
        Ok(SampleForward {
            loss_condition,
            loss_consistency,
            loss_margin,
            total,
            y0_hat,
            queries: q,
            prior,
            cond,
            mask: noise.mask.clone(),
            y0: y0.clone(),
            den_traces,
            sem_losses,
        })
    }

    /// Accumulates `weight * d(total)/d(params)` into `grads`.
    pub fn sample_backward(&self, fwd: &SampleForward, weight: f64, grads: &mut Grads) -> Result<()> {
        let count = fwd.y0.data().len() as f64;
        let g_pred = Block::from_vec(
            fwd.y0.rows(),
            fwd.y0.cols(),
            fwd.y0_hat.data().iter().zip(fwd.y0.data()).map(|(a, b)| weight * 2.0 * (a - b) / count).collect(),
        )?;
        let g_cmix = self.denoiser.backward(&self.store, &fwd.den_traces, &g_pred, grads)?;
        let g_c = Block::from_vec(
            g_cmix.rows(),
            g_cmix.cols(),
            g_cmix.data().iter().zip(fwd.mask.data()).map(|(g, m)| g * m).collect(),
        )?;
        let (g_m, mut g_h) = self.condition.backward(&self.store, &fwd.prior, &fwd.cond, &g_c, grads)?;
        self.prior.backward(
            &self.store,
            &fwd.queries,
            &fwd.prior,
            self.semantic.as_ref(),
            &self.episodic,
            &g_m,
            &mut g_h,
            grads,
        );
        if let Some(sem) = &self.semantic {
            let t = &self.config.train;
            for (j, l) in fwd.sem_losses.iter().enumerate() {
                if let Some(l) = l {
                    sem.losses_backward(
                        &self.store,
                        j,
                        &fwd.queries.h[j],
                        l,
                        weight * t.alpha1,
                        weight * t.alpha2,
                        &mut g_h[j],
                        grads,
                    );
                }
            }
        }
        self.encoder.backward(&self.store, &fwd.queries, &g_h, grads)
    }

    /// Mean total loss over a batch with fixed draws.
    pub fn batch_loss(&self, batch: &[(&Block, &Block)], noises: &[SampleNoise]) -> Result<f64> {
        let mut sum = 0.0;
        for ((x, y), n) in batch.iter().zip(noises) {
            sum += self.sample_forward(x, y, n)?.total;
        }
        Ok(sum / batch.len() as f64)
    }

    /// Deterministic condition `c` (means only, no mixup).
    pub fn infer_condition(&self, lookback: &Block) -> Result<Block> {
        Ok(self.conditioning(lookback, None)?.2.c)
    }

    fn predictor<'a>(&'a self, c: &'a Block) -> impl FnMut(&Block, usize) -> Result<Block> + 'a {
        move |y: &Block, k: usize| Ok(self.denoiser.predict(&self.store, y, k, c)?.0)
    }

    /// Strided deterministic sampling from a seeded `y^K`.
    pub fn forecast(&self, lookback: &Block, substeps: usize, seed: u64) -> Result<Block> {
        let c = self.infer_condition(lookback)?;
        ddim_sample(c.shape(), &self.schedule, substeps, seed, self.predictor(&c))
    }

    /// Strided deterministic sampling from an explicit `y^K`.
    pub fn forecast_from(&self, lookback: &Block, init: Block, substeps: usize) -> Result<Block> {
        let c = self.infer_condition(lookback)?;
        ddim_sample_from(init, &self.schedule, substeps, self.predictor(&c))
    }

    /// Full K-step ancestral sampling.
    pub fn forecast_ancestral(&self, lookback: &Block, seed: u64) -> Result<Block> {
        let c = self.infer_condition(lookback)?;
        ancestral_sample(c.shape(), &self.schedule, seed, self.predictor(&c))
    }

    /// Recall weights for one lookback: semantic `N x N1` and episodic
    /// `N x M` where `M` is the number of stored records (zeros for records
    /// outside the top-k).
    pub fn attention_scores(&self, lookback: &Block) -> Result<(Option<Block>, Option<Block>)> {
        let (q, prior, _) = self.conditioning(lookback, None)?;
        let n = q.channels();
        let semantic = self.semantic.as_ref().map(|sem| {
            let mut b = Block::zeros(n, sem.num_blocks());
            for j in 0..n {
                if let Some(att) = prior.semantic_attention(j) {
                    for (&i, w) in att.indices.iter().zip(&att.weights) {
                        b.set(j, i, *w);
                    }
                }
            }
            b
        });
        let episodic = (!self.episodic.is_empty()).then(|| {
            let width = self.episodic.iter().map(EpisodicStore::len).max().unwrap_or(0);
            let mut b = Block::zeros(n, width);
            for j in 0..n {
                if let Some((_, r)) = prior.episodic_recall(j) {
                    if let Some(att) = &r.attended {
                        for (&i, w) in att.indices.iter().zip(&att.weights) {
                            b.set(j, i, *w);
                        }
                    }
                }
            }
            b
        });
        Ok((semantic, episodic))
    }

    /// Stores one batch's special patterns (one query per channel).
    pub fn update_episodic(&mut self, patterns: Vec<Vec<f64>>) -> Result<()> {
        match self.episodic.len() {
            0 => Ok(()),
            1 => self.episodic[0].update(patterns),
            _ => {
                for (store, p) in self.episodic.iter_mut().zip(patterns) {
                    store.update(vec![p])?;
                }
                Ok(())
            }
        }
    }

    pub fn record_hits(&mut self, hits: &[(usize, Vec<Slot>)]) {
        for (idx, slots) in hits {
            self.episodic[*idx].record_hits(slots);
        }
    }

    pub(crate) fn replace_episodic(&mut self, stores: Vec<EpisodicStore>) -> Result<()> {
        if stores.len() != self.episodic.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} episodic stores, model expects {}",
                stores.len(),
                self.episodic.len()
            )));
        }
        self.episodic = stores;
        Ok(())
    }

    pub fn rejitter_semantic<R: Rng>(&mut self, rng: &mut R) -> usize {
        match &self.semantic {
            Some(sem) => sem.rejitter(&mut self.store, rng),
            None => 0,
        }
    }
}
