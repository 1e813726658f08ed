use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::block::Block;
use crate::config::SynthSection;
use crate::error::{Error, Result};

use super::Dataset;

/// One motif occurrence: `motif` added to `channel` from row `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedEvent {
    pub motif: usize,
    pub channel: usize,
    pub start: usize,
}

/// Shared sinusoids, phase-shifted per channel, plus a library of spike
/// motifs that recur in different channels at different times.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub channels: usize,
    pub length: usize,
    pub periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phase_step: f64,
    pub motifs: usize,
    pub motif_len: usize,
    pub motif_amplitude: f64,
    /// Events drawn at random positions and channels.
    pub random_events: usize,
    /// Events at fixed positions, added on top of the random ones.
    pub planted: Vec<PlantedEvent>,
    pub noise_std: f64,
}

impl From<&SynthSection> for SynthSpec {
    fn from(s: &SynthSection) -> Self {
        Self {
            channels: s.channels,
            length: s.length,
            periods: s.periods.clone(),
            amplitudes: s.amplitudes.clone(),
            phase_step: s.phase_step,
            motifs: s.motifs,
            motif_len: s.motif_len,
            motif_amplitude: s.motif_amplitude,
            random_events: s.events,
            planted: Vec::new(),
            noise_std: s.noise_std,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.length == 0 {
            return Err(Error::Config("synthetic data needs channels and length".into()));
        }
        if self.periods.len() != self.amplitudes.len() {
            return Err(Error::Config("synth.periods and synth.amplitudes differ in length".into()));
        }
        if self.periods.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("synth.periods must be positive".into()));
        }
        if self.motifs > 0 && (self.motif_len == 0 || self.motif_len > self.length) {
            return Err(Error::Config("synth.motif_len must lie in 1..=length".into()));
        }
        if (self.random_events > 0 || !self.planted.is_empty()) && self.motifs == 0 {
            return Err(Error::Config("events need at least one motif".into()));
        }
        for e in &self.planted {
            if e.motif >= self.motifs || e.channel >= self.channels || e.start >= self.length {
                return Err(Error::Config(format!("planted event {e:?} is out of range")));
            }
        }
        Ok(())
    }
}

/// Smooth bump: a few random harmonics under a Hann window, scaled so the
/// peak magnitude equals `amplitude`.
fn draw_motif<R: Rng>(len: usize, amplitude: f64, rng: &mut R) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.5..3.0), rng.random_range(0.0..2.0 * PI), rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let raw: Vec<f64> = (0..len)
        .map(|t| {
            let u = (t as f64 + 0.5) / len as f64;
            let window = (PI * u).sin().powi(2);
            window * comps.iter().map(|(f, p, a)| a * (2.0 * PI * f * u + p).sin()).sum::<f64>()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return raw;
    }
    raw.iter().map(|v| v * amplitude / peak).collect()
}

/// Deterministic in `(spec, seed)`. Returns the dataset and every event placed.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<(Dataset, Vec<PlantedEvent>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, len) = (spec.channels, spec.length);
    let mut values = Block::zeros(len, n);
    for t in 0..len {
        for c in 0..n {
            let v: f64 = spec
                .periods
                .iter()
                .zip(&spec.amplitudes)
                .map(|(p, a)| a * (2.0 * PI * t as f64 / p + c as f64 * spec.phase_step).sin())
                .sum();
            values.set(t, c, v);
        }
    }
    let library: Vec<Vec<f64>> =
        (0..spec.motifs).map(|_| draw_motif(spec.motif_len, spec.motif_amplitude, &mut rng)).collect();
    let mut events: Vec<PlantedEvent> = (0..spec.random_events)
        .map(|_| PlantedEvent {
            motif: rng.random_range(0..spec.motifs),
            channel: rng.random_range(0..n),
            start: rng.random_range(0..=len - spec.motif_len),
        })
        .collect();
    events.extend_from_slice(&spec.planted);
    for e in &events {
        for (i, m) in library[e.motif].iter().enumerate() {
            let t = e.start + i;
            if t < len {
                values.set(t, e.channel, values.get(t, e.channel) + m);
            }
        }
    }
    if spec.noise_std > 0.0 {
        for v in values.data_mut() {
            *v += spec.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let ds = Dataset {
        name: "synthetic".into(),
        channel_names: (0..n).map(|c| format!("ch{c}")).collect(),
        timestamps: None,
        values,
    };
    Ok((ds, events))
}
