//! Channel-wise x0-predicting denoiser, the ancestral reverse step and the
//! deterministic strided sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::block::Block;
use crate::error::{shape_check, Error, Result};
use crate::nn::{Activation, Grads, Mlp, MlpTrace, ParamStore};
use crate::schedule::NoiseSchedule;

/// Sinusoidal step embedding: `[sin(k f_0) .. sin(k f_{m-1}), cos(k f_0) ..]`
/// with `f_i = 10000^(-i/m)`, `m = dim / 2`.
pub fn step_embedding(k: usize, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) || dim == 0 {
        return Err(Error::Config(format!("step embedding width must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    let freqs = (0..half).map(|i| 10000f64.powf(-(i as f64) / half as f64));
    let (mut sin, mut cos): (Vec<f64>, Vec<f64>) =
        freqs.map(|f| ((k as f64 * f).sin(), (k as f64 * f).cos())).unzip();
    sin.append(&mut cos);
    Ok(sin)
}

/// One ancestral reverse step using the posterior mean with `x0 <- y0_hat`.
/// At `k = 1` no noise is added.
pub fn ddpm_step(
    y_k: &Block,
    k: usize,
    y0_hat: &Block,
    sched: &NoiseSchedule,
    noise: &Block,
) -> Result<Block> {
    shape_check(y_k.same_shape(y0_hat) && y_k.same_shape(noise), || {
        format!("ddpm_step shapes {:?} {:?} {:?}", y_k.shape(), y0_hat.shape(), noise.shape())
    })?;
    let (c_yk, c_y0, var) = sched.posterior_coefficients(k)?;
    let sigma = if k == 1 { 0.0 } else { var.sqrt() };
    let data = y_k
        .data()
        .iter()
        .zip(y0_hat.data())
        .zip(noise.data())
        .map(|((a, b), e)| c_yk * a + c_y0 * b + sigma * e)
        .collect();
    Block::from_vec(y_k.rows(), y_k.cols(), data)
}

/// Increasing strided subsequence of `1..=steps` with `substeps` elements,
/// always ending at `steps`.
pub fn ddim_timesteps(steps: usize, substeps: usize) -> Result<Vec<usize>> {
    if substeps == 0 || substeps > steps {
        return Err(Error::Config(format!("substeps must lie in 1..={steps}, got {substeps}")));
    }
    Ok((1..=substeps).map(|i| (i * steps).div_ceil(substeps)).collect())
}

pub fn standard_normal_block<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Block {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Block::from_vec(rows, cols, data).expect("sized above")
}

/// Deterministic (eta = 0) strided sampling from an explicit `y^K`.
/// `predict(y, k)` returns the clean-signal estimate.
pub fn ddim_sample_from<F>(init: Block, sched: &NoiseSchedule, substeps: usize, mut predict: F) -> Result<Block>
where
    F: FnMut(&Block, usize) -> Result<Block>,
{
    let taus = ddim_timesteps(sched.steps(), substeps)?;
    let mut y = init;
    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let prev = if i == 0 { 0 } else { taus[i - 1] };
        let x0 = predict(&y, t)?;
        shape_check(x0.same_shape(&y), || "denoiser output shape".into())?;
        if prev == 0 {
            y = x0;
            continue;
        }
        let (ab_t, ab_p) = (sched.alpha_bar(t), sched.alpha_bar(prev));
        let (s_t, n_t) = (ab_t.sqrt(), sched.one_minus_alpha_bar(t).sqrt());
        let (s_p, n_p) = (ab_p.sqrt(), sched.one_minus_alpha_bar(prev).sqrt());
        let data = y
            .data()
            .iter()
            .zip(x0.data())
            .map(|(yv, xv)| {
                let eps = (yv - s_t * xv) / n_t;
                s_p * xv + n_p * eps
            })
            .collect();
        y = Block::from_vec(y.rows(), y.cols(), data)?;
    }
    Ok(y)
}

/// [`ddim_sample_from`] starting at a seeded standard-normal `y^K`.
pub fn ddim_sample<F>(
    shape: (usize, usize),
    sched: &NoiseSchedule,
    substeps: usize,
    seed: u64,
    predict: F,
) -> Result<Block>
where
    F: FnMut(&Block, usize) -> Result<Block>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = standard_normal_block(shape.0, shape.1, &mut rng);
    ddim_sample_from(init, sched, substeps, predict)
}

/// Full K-step ancestral sampling.
pub fn ancestral_sample<F>(shape: (usize, usize), sched: &NoiseSchedule, seed: u64, mut predict: F) -> Result<Block>
where
    F: FnMut(&Block, usize) -> Result<Block>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = standard_normal_block(shape.0, shape.1, &mut rng);
    for k in (1..=sched.steps()).rev() {
        let x0 = predict(&y, k)?;
        let noise = standard_normal_block(shape.0, shape.1, &mut rng);
        y = ddpm_step(&y, k, &x0, sched, &noise)?;
    }
    Ok(y)
}

/// Shared-weight MLP mapping `[y^k_j ; c_mix_j ; emb(k)]` to `y0_hat_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Denoiser {
    net: Mlp,
    horizon: usize,
    emb_dim: usize,
}

impl Denoiser {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        horizon: usize,
        emb_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![2 * horizon + emb_dim];
        widths.extend_from_slice(hidden);
        widths.push(horizon);
        let net = Mlp::new(store, "denoiser", &widths, Activation::Silu, rng);
        Self { net, horizon, emb_dim }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    pub fn predict(&self, store: &ParamStore, y_k: &Block, k: usize, c_mix: &Block) -> Result<(Block, Vec<MlpTrace>)> {
        shape_check(y_k.same_shape(c_mix) && y_k.rows() == self.horizon, || {
            format!("denoiser inputs {:?} / {:?}, horizon {}", y_k.shape(), c_mix.shape(), self.horizon)
        })?;
        let emb = step_embedding(k, self.emb_dim)?;
        let mut out = Block::zeros(self.horizon, y_k.cols());
        let mut traces = Vec::with_capacity(y_k.cols());
        for j in 0..y_k.cols() {
            let mut input = y_k.column(j);
            input.extend(c_mix.column(j));
            input.extend_from_slice(&emb);
            let (y, trace) = self.net.forward(store, &input)?;
            out.set_column(j, &y);
            traces.push(trace);
        }
        Ok((out, traces))
    }

    /// Returns the gradient with respect to `c_mix` (the only input that
    /// depends on parameters).
    pub fn backward(&self, store: &ParamStore, traces: &[MlpTrace], g_out: &Block, grads: &mut Grads) -> Result<Block> {
        let mut g_c = Block::zeros(self.horizon, g_out.cols());
        for (j, trace) in traces.iter().enumerate() {
            let g_in = self.net.backward(store, trace, &g_out.column(j), grads)?;
            g_c.set_column(j, &g_in[self.horizon..2 * self.horizon]);
        }
        Ok(g_c)
    }
}
