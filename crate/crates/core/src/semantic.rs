//! Learnable channel-shared pattern blocks ("general patterns") with
//! cosine-attention recall and the consistency / margin regularisers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::attention::{attend, attend_backward, cosine_score, Attended};
use crate::error::Result;
use crate::nn::{Grads, ParamId, ParamStore};

/// Blocks whose norm falls below this are redrawn from a standard normal.
pub const MIN_BLOCK_NORM: f64 = 1e-8;

/// One bank when shared across channels; one bank per channel otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMemory {
    banks: Vec<ParamId>,
    blocks: usize,
    dim: usize,
}

/// Per-channel regulariser values and the blocks they were measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticLosses {
    pub consistency: f64,
    pub margin: f64,
    pub nearest: usize,
    pub second: Option<usize>,
}

impl SemanticMemory {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        blocks: usize,
        dim: usize,
        banks: usize,
        rng: &mut R,
    ) -> Self {
        assert!(blocks >= 1 && banks >= 1);
        let banks = (0..banks)
            .map(|b| {
                let values = (0..blocks * dim).map(|_| rng.sample(StandardNormal)).collect();
                let name = if banks == 1 {
                    "semantic.blocks".to_string()
                } else {
                    format!("semantic.{b}.blocks")
                };
                store.add(name, vec![blocks, dim], values)
            })
            .collect();
        Self { banks, blocks, dim }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_shared(&self) -> bool {
        self.banks.len() == 1
    }

    pub fn bank_for(&self, channel: usize) -> ParamId {
        if self.is_shared() {
            self.banks[0]
        } else {
            self.banks[channel]
        }
    }

    pub fn banks(&self) -> &[ParamId] {
        &self.banks
    }

    /// Attention-weighted aggregate of every block for one channel query.
    pub fn recall(&self, store: &ParamStore, channel: usize, query: &[f64]) -> Result<Attended> {
        attend(store.values(self.bank_for(channel)), self.dim, (0..self.blocks).collect(), query)
    }

    pub fn recall_backward(
        &self,
        store: &ParamStore,
        channel: usize,
        att: &Attended,
        query: &[f64],
        g_out: &[f64],
        g_query: &mut [f64],
        grads: &mut Grads,
    ) {
        let bank = self.bank_for(channel);
        attend_backward(
            store.values(bank),
            self.dim,
            att,
            query,
            g_out,
            g_query,
            Some(grads.get_mut(bank)),
        );
    }

    pub fn losses(
        &self,
        store: &ParamStore,
        channel: usize,
        query: &[f64],
        margin: f64,
    ) -> Result<SemanticLosses> {
        semantic_losses(store.values(self.bank_for(channel)), self.dim, query, margin)
    }

    /// Accumulates `scale_consistency * dL1 + scale_margin * dL2` into the
    /// query and block gradients.
    #[allow(clippy::too_many_arguments)]
    pub fn losses_backward(
        &self,
        store: &ParamStore,
        channel: usize,
        query: &[f64],
        losses: &SemanticLosses,
        scale_consistency: f64,
        scale_margin: f64,
        g_query: &mut [f64],
        grads: &mut Grads,
    ) {
        let bank = self.bank_for(channel);
        let d = self.dim;
        let blocks = store.values(bank);
        let near = &blocks[losses.nearest * d..(losses.nearest + 1) * d];
        let diff_near: Vec<f64> = query.iter().zip(near).map(|(h, m)| h - m).collect();
        let diff_second: Option<Vec<f64>> = losses.second.map(|s| {
            query.iter().zip(&blocks[s * d..(s + 1) * d]).map(|(h, m)| h - m).collect()
        });
        let g = grads.get_mut(bank);
        for i in 0..d {
            let v = 2.0 * scale_consistency * diff_near[i];
            g_query[i] += v;
            g[losses.nearest * d + i] -= v;
        }
        if losses.margin > 0.0 {
            if let (Some(s), Some(ds)) = (losses.second, diff_second.as_ref()) {
                for i in 0..d {
                    let a = 2.0 * scale_margin * diff_near[i];
                    let b = 2.0 * scale_margin * ds[i];
                    g_query[i] += a - b;
                    g[losses.nearest * d + i] -= a;
                    g[s * d + i] += b;
                }
            }
        }
    }

    /// Redraws any block whose norm has collapsed. Returns how many were redrawn.
    pub fn rejitter<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> usize {
        let mut redrawn = 0;
        for &bank in &self.banks {
            for block in store.values_mut(bank).chunks_exact_mut(self.dim) {
                if crate::nn::norm(block) < MIN_BLOCK_NORM {
                    block.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    redrawn += 1;
                }
            }
        }
        redrawn
    }
}

/// Consistency and margin terms for one channel query against a block table.
/// Nearest and second-nearest are ranked by cosine score, ties to the lower index.
pub fn semantic_losses(blocks: &[f64], dim: usize, query: &[f64], margin: f64) -> Result<SemanticLosses> {
    let n = blocks.len() / dim;
    let scores = (0..n)
        .map(|i| cosine_score(&blocks[i * dim..(i + 1) * dim], query))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let nearest = order[0];
    let second = order.get(1).copied();
    let sq = |i: usize| -> f64 {
        query.iter().zip(&blocks[i * dim..(i + 1) * dim]).map(|(h, m)| (h - m) * (h - m)).sum()
    };
    let d_near = sq(nearest);
    let margin_term = second.map_or(0.0, |s| (d_near - sq(s) + margin).max(0.0));
    Ok(SemanticLosses { consistency: d_near, margin: margin_term, nearest, second })
}
