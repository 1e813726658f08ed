//! Temporal encoder, memory prior and condition head.
//!
//! Per channel `j`:
//!
//! ```text
//! h_j      = encoder(x_j)                         (lookback column -> d)
//! mean_j   = W2 (m^s_j + m^e_j)                   (recalled memories)
//! m_j      = mean_j + exp(lv_m / 2) * eps_m       (eps omitted at inference)
//! latent_j = W1 m_j + exp(lv_c / 2) * eps_c
//! c_j      = P [latent_j ; h_j] + b               (-> horizon)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use crate::attention::{attend_backward, Attended};
use crate::block::Block;
use crate::episodic::{EpisodicRecall, EpisodicStore};
use crate::error::{shape_check, Error, Result};
use crate::nn::{matvec, matvec_t, outer_acc, Activation, Grads, Mlp, MlpTrace, ParamId, ParamStore};
use crate::semantic::SemanticMemory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel query vectors `h_j` with the traces needed to backprop them.
#[derive(Debug, Clone)]
pub struct QueryBlock {
    pub h: Vec<Vec<f64>>,
    traces: Vec<MlpTrace>,
}

impl QueryBlock {
    pub fn channels(&self) -> usize {
        self.h.len()
    }
}

/// Shared-weight MLP applied to every channel's lookback column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalEncoder {
    net: Mlp,
    lookback: usize,
}

impl TemporalEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, lookback: usize, hidden: &[usize], dim: usize, rng: &mut R) -> Self {
        let mut widths = vec![lookback];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Self { net: Mlp::new(store, "encoder", &widths, Activation::Relu, rng), lookback }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn encode(&self, store: &ParamStore, lookback: &Block) -> Result<QueryBlock> {
        if lookback.rows() != self.lookback {
            return Err(Error::Shape(format!(
                "lookback has {} rows, model expects {}",
                lookback.rows(),
                self.lookback
            )));
        }
        let mut h = Vec::with_capacity(lookback.cols());
        let mut traces = Vec::with_capacity(lookback.cols());
        for j in 0..lookback.cols() {
            let (q, t) = self.net.forward(store, &lookback.column(j))?;
            h.push(q);
            traces.push(t);
        }
        Ok(QueryBlock { h, traces })
    }

    pub fn backward(&self, store: &ParamStore, q: &QueryBlock, g_h: &[Vec<f64>], grads: &mut Grads) -> Result<()> {
        for (trace, g) in q.traces.iter().zip(g_h) {
            self.net.backward(store, trace, g, grads)?;
        }
        Ok(())
    }
}

/// Which memories feed the prior mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryUse {
    pub semantic: bool,
    pub episodic: bool,
}

/// Variational memory prior for every channel.
#[derive(Debug, Clone)]
pub struct MemoryPrior {
    pub m_semantic: Vec<Vec<f64>>,
    pub m_episodic: Vec<Vec<f64>>,
    /// `W2 (m^e + m^s)`.
    pub mean: Vec<Vec<f64>>,
    /// Sampled prior (equals `mean` at inference).
    pub m: Vec<Vec<f64>>,
    sum: Vec<Vec<f64>>,
    semantic_att: Vec<Option<Attended>>,
    episodic: Vec<Option<(usize, EpisodicRecall)>>,
    eps: Option<Vec<Vec<f64>>>,
}

impl MemoryPrior {
    pub fn semantic_attention(&self, channel: usize) -> Option<&Attended> {
        self.semantic_att[channel].as_ref()
    }

    /// `(store index, recall)` for a channel, when the episodic memory took part.
    pub fn episodic_recall(&self, channel: usize) -> Option<&(usize, EpisodicRecall)> {
        self.episodic[channel].as_ref()
    }
}

/// `W2` and the log-variance of `q(m | x, M)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorHead {
    pub w2: ParamId,
    pub log_var: ParamId,
    dim: usize,
}

impl PriorHead {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, log_var_init: f64, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let w = (0..dim * dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            w2: store.add("prior.w2", vec![dim, dim], w),
            log_var: store.add("prior.log_var", vec![dim], vec![log_var_init; dim]),
            dim,
        }
    }

    /// Recalls both memories for every channel and forms the prior. `eps`
    /// (one standard-normal `d`-vector per channel) switches on sampling.
    pub fn memory_prior(
        &self,
        store: &ParamStore,
        q: &QueryBlock,
        semantic: Option<&SemanticMemory>,
        episodic: &[EpisodicStore],
        eps: Option<&[Vec<f64>]>,
    ) -> Result<MemoryPrior> {
        let d = self.dim;
        let n = q.channels();
        let mut prior = MemoryPrior {
            m_semantic: Vec::with_capacity(n),
            m_episodic: Vec::with_capacity(n),
            mean: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            sum: Vec::with_capacity(n),
            semantic_att: Vec::with_capacity(n),
            episodic: Vec::with_capacity(n),
            eps: eps.map(<[Vec<f64>]>::to_vec),
        };
        let std: Vec<f64> = store.values(self.log_var).iter().map(|lv| (0.5 * lv).exp()).collect();
        for (j, h) in q.h.iter().enumerate() {
            shape_check(h.len() == d, || format!("query width {} expected {d}", h.len()))?;
            let sem = semantic.map(|s| s.recall(store, j, h)).transpose()?;
            let epi = if episodic.is_empty() {
                None
            } else {
                let idx = if episodic.len() == 1 { 0 } else { j };
                Some((idx, episodic[idx].recall(h)?))
            };
            let m_s = sem.as_ref().map_or_else(|| vec![0.0; d], |a| a.output.clone());
            let m_e = epi.as_ref().map_or_else(|| vec![0.0; d], |(_, r)| r.output.clone());
            let sum: Vec<f64> = m_s.iter().zip(&m_e).map(|(a, b)| a + b).collect();
            let mean = matvec(store.values(self.w2), d, d, &sum);
            let m = match eps {
                Some(e) => mean.iter().zip(&std).zip(&e[j]).map(|((mu, s), z)| mu + s * z).collect(),
                None => mean.clone(),
            };
            prior.m_semantic.push(m_s);
            prior.m_episodic.push(m_e);
            prior.mean.push(mean);
            prior.m.push(m);
            prior.sum.push(sum);
            prior.semantic_att.push(sem);
            prior.episodic.push(epi);
        }
        Ok(prior)
    }

    /// Backprop from `g_m` (per channel) into W2, the log-variance, the
    /// semantic blocks and the queries (`g_h` accumulates).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        store: &ParamStore,
        q: &QueryBlock,
        prior: &MemoryPrior,
        semantic: Option<&SemanticMemory>,
        episodic: &[EpisodicStore],
        g_m: &[Vec<f64>],
        g_h: &mut [Vec<f64>],
        grads: &mut Grads,
    ) {
        let d = self.dim;
        let half_std: Vec<f64> = store.values(self.log_var).iter().map(|lv| 0.5 * (0.5 * lv).exp()).collect();
        for j in 0..q.channels() {
            let g = &g_m[j];
            if let Some(eps) = &prior.eps {
                let glv = grads.get_mut(self.log_var);
                for i in 0..d {
                    glv[i] += g[i] * eps[j][i] * half_std[i];
                }
            }
            outer_acc(grads.get_mut(self.w2), g, &prior.sum[j]);
            let g_sum = matvec_t(store.values(self.w2), d, d, g);
            if let (Some(sem), Some(att)) = (semantic, &prior.semantic_att[j]) {
                sem.recall_backward(store, j, att, &q.h[j], &g_sum, &mut g_h[j], grads);
            }
            if let Some((idx, recall)) = &prior.episodic[j] {
                if let Some(att) = &recall.attended {
                    // Stored patterns are constants: only the query receives gradient.
                    let table = episodic[*idx].pattern_table();
                    attend_backward(&table, d, att, &q.h[j], &g_sum, &mut g_h[j], None);
                }
            }
        }
    }
}

/// `W1`, the condition log-variance, and the projection `[latent ; h] -> H`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionHead {
    pub w1: ParamId,
    pub log_var: ParamId,
    proj: Mlp,
    dim: usize,
    horizon: usize,
}

/// Cached values of [`ConditionHead::forward`].
#[derive(Debug, Clone)]
pub struct ConditionTrace {
    pub c: Block,
    latent: Vec<Vec<f64>>,
    proj: Vec<MlpTrace>,
    eps: Option<Vec<Vec<f64>>>,
}

impl ConditionHead {
    pub fn new<R: Rng>(store: &mut ParamStore, dim: usize, horizon: usize, log_var_init: f64, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let w = (0..dim * dim).map(|_| rng.random_range(-bound..bound)).collect();
        let w1 = store.add("condition.w1", vec![dim, dim], w);
        let log_var = store.add("condition.log_var", vec![dim], vec![log_var_init; dim]);
        let proj = Mlp::new(store, "condition.proj", &[2 * dim, horizon], Activation::Identity, rng);
        Self { w1, log_var, proj, dim, horizon }
    }

    pub fn proj(&self) -> &Mlp {
        &self.proj
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        q: &QueryBlock,
        prior: &MemoryPrior,
        eps: Option<&[Vec<f64>]>,
    ) -> Result<ConditionTrace> {
        let d = self.dim;
        let std: Vec<f64> = store.values(self.log_var).iter().map(|lv| (0.5 * lv).exp()).collect();
        let mut c = Block::zeros(self.horizon, q.channels());
        let mut latent = Vec::with_capacity(q.channels());
        let mut proj = Vec::with_capacity(q.channels());
        for j in 0..q.channels() {
            let mut lat = matvec(store.values(self.w1), d, d, &prior.m[j]);
            if let Some(e) = eps {
                for i in 0..d {
                    lat[i] += std[i] * e[j][i];
                }
            }
            let mut input = lat.clone();
            input.extend_from_slice(&q.h[j]);
            let (cj, t) = self.proj.forward(store, &input)?;
            c.set_column(j, &cj);
            latent.push(lat);
            proj.push(t);
        }
        Ok(ConditionTrace { c, latent, proj, eps: eps.map(<[Vec<f64>]>::to_vec) })
    }

    /// Returns `(g_m, g_h)` per channel.
    pub fn backward(
        &self,
        store: &ParamStore,
        prior: &MemoryPrior,
        trace: &ConditionTrace,
        g_c: &Block,
        grads: &mut Grads,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let d = self.dim;
        let half_std: Vec<f64> = store.values(self.log_var).iter().map(|lv| 0.5 * (0.5 * lv).exp()).collect();
        let mut g_m = Vec::with_capacity(trace.latent.len());
        let mut g_h = Vec::with_capacity(trace.latent.len());
        for j in 0..trace.latent.len() {
            let g_in = self.proj.backward(store, &trace.proj[j], &g_c.column(j), grads)?;
            let (g_lat, g_hj) = g_in.split_at(d);
            if let Some(eps) = &trace.eps {
                let glv = grads.get_mut(self.log_var);
                for i in 0..d {
                    glv[i] += g_lat[i] * eps[j][i] * half_std[i];
                }
            }
            outer_acc(grads.get_mut(self.w1), g_lat, &prior.m[j]);
            g_m.push(matvec_t(store.values(self.w1), d, d, g_lat));
            g_h.push(g_hj.to_vec());
        }
        Ok((g_m, g_h))
    }
}

/// `mask * c + (1 - mask) * y0` during training; `c` itself at inference.
pub fn future_mixup(mode: Mode, c: &Block, y0: Option<&Block>, mask: Option<&Block>) -> Result<Block> {
    match mode {
        Mode::Infer => Ok(c.clone()),
        Mode::Train => {
            let (y0, mask) = match (y0, mask) {
                (Some(y), Some(m)) => (y, m),
                _ => return Err(Error::Invariant("training mixup needs the target and a mask".into())),
            };
            shape_check(c.same_shape(y0) && c.same_shape(mask), || {
                format!("mixup shapes {:?} {:?} {:?}", c.shape(), y0.shape(), mask.shape())
            })?;
            let data = c
                .data()
                .iter()
                .zip(y0.data())
                .zip(mask.data())
                .map(|((cv, yv), m)| m * cv + (1.0 - m) * yv)
                .collect();
            Block::from_vec(c.rows(), c.cols(), data)
        }
    }
}

/// Mask with i.i.d. uniform `[0, 1)` entries.
pub fn draw_mask<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Block {
    let data = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    Block::from_vec(rows, cols, data).expect("sized above")
}

pub fn draw_normal_vectors<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
}
