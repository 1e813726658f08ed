#![allow(dead_code)]

use bimdiff::block::Block;
use bimdiff::config::Config;
use bimdiff::data::SeriesWindow;
use bimdiff::denoiser::standard_normal_block;
use bimdiff::model::{BimDiff, SampleNoise};
use bimdiff::nn::{Grads, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// L=8, H=4, N=2, d=4, N1=3, N2=4, N3=2, K=4.
pub fn tiny_config() -> Config {
    let mut c = Config::default();
    c.model.lookback = 8;
    c.model.horizon = 4;
    c.model.channels = 2;
    c.model.latent_dim = 4;
    c.model.encoder_hidden = vec![6];
    c.model.denoiser_hidden = vec![8, 8];
    c.model.step_emb_dim = 4;
    c.model.log_var_init = -1.0;
    c.memory.semantic_blocks = 3;
    c.memory.episodic_capacity = 4;
    c.memory.queue_capacity = 2;
    c.memory.recall_top_k = 3;
    c.schedule.steps = 4;
    c.train.batch_size = 2;
    c.train.alpha1 = 0.3;
    c.train.alpha2 = 0.7;
    c.train.seed = 11;
    c
}

pub fn random_window<R: Rng>(cfg: &Config, rng: &mut R) -> SeriesWindow {
    let n = cfg.model.channels;
    SeriesWindow {
        lookback: standard_normal_block(cfg.model.lookback, n, rng),
        horizon: standard_normal_block(cfg.model.horizon, n, rng),
        origin: 0,
    }
}

pub fn random_vectors<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Fills every episodic store (entries and queue) with random patterns.
pub fn fill_episodic(model: &mut BimDiff, rng: &mut ChaCha8Rng) {
    let d = model.config().model.latent_dim;
    for s in model.episodic_mut() {
        let total = s.capacity() + s.queue_capacity();
        for _ in 0..total {
            s.update(random_vectors(1, d, rng)).unwrap();
        }
    }
}

pub struct GradFixture {
    pub model: BimDiff,
    pub windows: Vec<SeriesWindow>,
    pub noises: Vec<SampleNoise>,
}

pub fn grad_fixture(cfg: &Config, seed: u64) -> GradFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = BimDiff::new(cfg).unwrap();
    fill_episodic(&mut model, &mut rng);
    let windows: Vec<SeriesWindow> = (0..cfg.train.batch_size).map(|_| random_window(cfg, &mut rng)).collect();
    let noises = windows.iter().map(|w| model.draw_noise(&mut rng, w.lookback.cols())).collect();
    GradFixture { model, windows, noises }
}

impl GradFixture {
    pub fn pairs(&self) -> Vec<(&Block, &Block)> {
        self.windows.iter().map(|w| (&w.lookback, &w.horizon)).collect()
    }

    /// Writes the analytic batch gradient into `model.store`.
    pub fn analytic(&mut self) {
        let weight = 1.0 / self.windows.len() as f64;
        let mut g: Grads = self.model.store.zero_grads();
        for (w, n) in self.windows.iter().zip(&self.noises) {
            let f = self.model.sample_forward(&w.lookback, &w.horizon, n).unwrap();
            self.model.sample_backward(&f, weight, &mut g).unwrap();
        }
        self.model.store.zero_grad();
        self.model.store.accumulate(&g);
    }

    pub fn loss_at(&self, store: &ParamStore) -> f64 {
        let mut m = self.model.clone();
        m.store = store.clone();
        m.batch_loss(&self.pairs(), &self.noises).unwrap()
    }
}
