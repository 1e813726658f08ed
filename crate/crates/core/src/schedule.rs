//! Diffusion noise schedule and closed-form forward-process algebra.
//!
//! Steps are 1-based: `k = 1..=K`. Index 0 stands for the clean data, with
//! `alpha_bar(0) = 1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::error::{shape_check, Error, Result};

/// Upper bound on the terminal cumulative signal level for generated schedules,
/// so that `y^K` is close enough to a standard normal draw.
pub const PRIOR_MATCHING_BOUND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Betas linear in `[beta_min, beta_max]`.
    Linear { beta_min: f64, beta_max: f64 },
    /// Betas linear from `beta_min`; `beta_max` is solved so that
    /// `alpha_bar(K) == terminal_alpha_bar`.
    LinearScaled { beta_min: f64, terminal_alpha_bar: f64 },
    /// Explicit beta table. Exempt from the prior-matching bound.
    Explicit { betas: Vec<f64> },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::LinearScaled { beta_min: 1e-4, terminal_alpha_bar: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    // 1 - alpha_bar via the recurrence (1-a_{k-1}) + a_{k-1} * beta_k; exact at k = 1.
    one_minus_alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

fn linear_betas(steps: usize, lo: f64, hi: f64) -> Vec<f64> {
    if steps == 1 {
        return vec![hi];
    }
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

fn terminal_alpha_bar(betas: &[f64]) -> f64 {
    betas.iter().map(|b| 1.0 - b).product()
}

pub fn make_schedule(steps: usize, kind: &ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    let betas = match kind {
        ScheduleKind::Linear { beta_min, beta_max } => linear_betas(steps, *beta_min, *beta_max),
        ScheduleKind::LinearScaled { beta_min, terminal_alpha_bar: target } => {
            if !(*target > 0.0 && *target < PRIOR_MATCHING_BOUND) {
                return Err(Error::Config(format!(
                    "terminal_alpha_bar must lie in (0, {PRIOR_MATCHING_BOUND}), got {target}"
                )));
            }
            if !(*beta_min > 0.0 && *beta_min < 1.0) {
                return Err(Error::Config(format!("beta_min must lie in (0, 1), got {beta_min}")));
            }
            solve_beta_max(steps, *beta_min, *target)
        }
        ScheduleKind::Explicit { betas } => {
            if betas.len() != steps {
                return Err(Error::Config(format!(
                    "explicit schedule has {} betas for {steps} steps",
                    betas.len()
                )));
            }
            return NoiseSchedule::from_betas(betas.clone());
        }
    };
    let sched = NoiseSchedule::from_betas(betas)?;
    if !sched.satisfies_prior_matching() {
        return Err(Error::Config(format!(
            "schedule ends at alpha_bar = {:.4}, must be below {PRIOR_MATCHING_BOUND}",
            sched.alpha_bar(steps)
        )));
    }
    Ok(sched)
}

fn solve_beta_max(steps: usize, beta_min: f64, target: f64) -> Vec<f64> {
    let flat = linear_betas(steps, beta_min, beta_min);
    if terminal_alpha_bar(&flat) <= target {
        return flat;
    }
    // alpha_bar(K) is decreasing in beta_max and hits 0 at beta_max = 1.
    let (mut lo, mut hi) = (beta_min, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if terminal_alpha_bar(&linear_betas(steps, beta_min, mid)) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // `hi` is always on the admissible side.
    linear_betas(steps, beta_min, hi)
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("empty beta table".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let steps = beta.len();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut one_minus = Vec::with_capacity(steps);
        let mut beta_tilde = Vec::with_capacity(steps);
        let (mut ab_prev, mut om_prev) = (1.0_f64, 0.0_f64);
        for k in 0..steps {
            let ab = ab_prev * alpha[k];
            let om = om_prev + ab_prev * beta[k];
            beta_tilde.push(om_prev / om * beta[k]);
            alpha_bar.push(ab);
            one_minus.push(om);
            ab_prev = ab;
            om_prev = om;
        }
        Ok(Self { beta, alpha, alpha_bar, one_minus_alpha_bar: one_minus, beta_tilde })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::Config(format!("step {k} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bar[k - 1]
        }
    }

    pub fn one_minus_alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.one_minus_alpha_bar[k - 1]
        }
    }

    pub fn beta_tilde(&self, k: usize) -> f64 {
        self.beta_tilde[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tilde
    }

    pub fn satisfies_prior_matching(&self) -> bool {
        self.alpha_bar(self.steps()) < PRIOR_MATCHING_BOUND
    }

    /// Draw from `q(x^k | x^0)` given a standard-normal `noise` of the same shape.
    pub fn forward_sample(&self, x0: &Block, k: usize, noise: &Block) -> Result<Block> {
        self.check_step(k)?;
        forward_marginal(x0, noise, self.alpha_bar(k))
    }

    /// Coefficients `(on x^k, on x^0)` of the posterior mean and the posterior variance.
    pub fn posterior_coefficients(&self, k: usize) -> Result<(f64, f64, f64)> {
        self.check_step(k)?;
        let denom = self.one_minus_alpha_bar(k);
        let c_xk = self.alpha(k).sqrt() * self.one_minus_alpha_bar(k - 1) / denom;
        let c_x0 = self.alpha_bar(k - 1).sqrt() * self.beta(k) / denom;
        Ok((c_xk, c_x0, self.beta_tilde(k)))
    }

    /// Mean and variance of `q(x^{k-1} | x^k, x^0)`.
    pub fn posterior_mean_var(&self, x0: &Block, xk: &Block, k: usize) -> Result<(Block, f64)> {
        shape_check(x0.same_shape(xk), || {
            format!("x0 {:?} vs xk {:?}", x0.shape(), xk.shape())
        })?;
        let (c_xk, c_x0, var) = self.posterior_coefficients(k)?;
        let data = xk
            .data()
            .iter()
            .zip(x0.data())
            .map(|(a, b)| c_xk * a + c_x0 * b)
            .collect();
        Ok((Block::from_vec(x0.rows(), x0.cols(), data)?, var))
    }

    /// Writes `k,beta,alpha,alpha_bar,beta_tilde` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,beta,alpha,alpha_bar,beta_tilde")?;
        for k in 1..=self.steps() {
            writeln!(
                out,
                "{k},{},{},{},{}",
                self.beta(k),
                self.alpha(k),
                self.alpha_bar(k),
                self.beta_tilde(k)
            )?;
        }
        Ok(())
    }
}

/// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * noise`, elementwise.
pub fn forward_marginal(x0: &Block, noise: &Block, alpha_bar: f64) -> Result<Block> {
    shape_check(x0.same_shape(noise), || {
        format!("x0 {:?} vs noise {:?}", x0.shape(), noise.shape())
    })?;
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = x0.data().iter().zip(noise.data()).map(|(x, e)| s * x + n * e).collect();
    Block::from_vec(x0.rows(), x0.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn explicit(b: &[f64]) -> NoiseSchedule {
        make_schedule(b.len(), &ScheduleKind::Explicit { betas: b.to_vec() }).unwrap()
    }

    #[test]
    fn single_step_table() {
        let s = explicit(&[0.5]);
        assert_eq!(s.alpha_bars(), &[0.5]);
        assert_eq!(s.beta_tildes(), &[0.0]);
    }

    #[test]
    fn two_step_hand_arithmetic() {
        let s = explicit(&[0.1, 0.2]);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        let expected = (1.0 - 0.9) / (1.0 - 0.72) * 0.2;
        assert!((s.beta_tilde(2) - expected).abs() < 1e-15);
        assert_eq!(s.beta_tilde(1), 0.0);
    }

    #[test]
    fn default_ten_step_schedule_matches_prior() {
        let s = make_schedule(10, &ScheduleKind::default()).unwrap();
        assert!(s.alpha_bar(10) < PRIOR_MATCHING_BOUND);
        for k in 1..10 {
            assert!(s.alpha_bar(k + 1) < s.alpha_bar(k));
        }
        assert!(s.betas().iter().all(|b| *b > 0.0 && *b < 1.0));
    }

    #[test]
    fn linear_scaled_works_for_any_step_count() {
        for steps in [1, 2, 4, 10, 50, 1000] {
            let s = make_schedule(steps, &ScheduleKind::default()).unwrap();
            assert!(s.satisfies_prior_matching(), "steps={steps}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(make_schedule(0, &ScheduleKind::default()).is_err());
        assert!(make_schedule(10, &ScheduleKind::Linear { beta_min: 1e-4, beta_max: 0.02 }).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![1.0]).is_err());
        let s = explicit(&[0.1, 0.2]);
        let z = Block::zeros(2, 2);
        assert!(s.forward_sample(&z, 0, &z).is_err());
        assert!(s.forward_sample(&z, 3, &z).is_err());
        assert!(s.forward_sample(&z, 1, &Block::zeros(2, 3)).is_err());
    }

    #[test]
    fn forward_marginal_limits() {
        let x0 = Block::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let n = Block::from_vec(1, 3, vec![0.3, 0.1, -0.7]).unwrap();
        assert_eq!(forward_marginal(&x0, &n, 1.0).unwrap(), x0);
        let s = explicit(&[0.1, 0.2]);
        let out = s.forward_sample(&Block::zeros(1, 3), 2, &n).unwrap();
        let scale = (1.0 - 0.72_f64).sqrt();
        for (o, e) in out.data().iter().zip(n.data()) {
            assert!((o - scale * e).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_first_step_collapses_to_x0() {
        let s = make_schedule(10, &ScheduleKind::default()).unwrap();
        let (c_xk, c_x0, var) = s.posterior_coefficients(1).unwrap();
        assert_eq!((c_xk, c_x0, var), (0.0, 1.0, 0.0));
        let z = Block::zeros(2, 2);
        let (m, _) = s.posterior_mean_var(&z, &z, 5).unwrap();
        assert_eq!(m, z);
    }

    #[test]
    fn posterior_equal_inputs_identity() {
        let s = make_schedule(10, &ScheduleKind::default()).unwrap();
        for k in 1..=10 {
            let (a, b, _) = s.posterior_coefficients(k).unwrap();
            assert!(a >= 0.0 && b >= 0.0);
            let v = Block::from_vec(1, 2, vec![1.7, -0.4]).unwrap();
            let (m, _) = s.posterior_mean_var(&v, &v, k).unwrap();
            let ab_prev = s.alpha_bar(k - 1);
            let coef = (s.alpha(k).sqrt() * (1.0 - ab_prev) + ab_prev.sqrt() * s.beta(k))
                / (1.0 - s.alpha_bar(k));
            for (o, x) in m.data().iter().zip(v.data()) {
                assert!((o - x * coef).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_step() {
        let s = make_schedule(4, &ScheduleKind::default()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
    }
}
