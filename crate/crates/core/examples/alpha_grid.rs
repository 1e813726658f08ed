//! Validation grid search over the two semantic-loss weights for the desk
//! ablation setting. Usage: `cargo run --release --example alpha_grid [seed]`.

use bimdiff::experiment::{load_dataset, prepare};
use bimdiff::trainer::{evaluate, grid_search, EvalOptions, Trainer};
use bimdiff::{BimDiff, Config};

fn main() -> bimdiff::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = Config::from_toml(include_str!("../tests/data/ablation.toml"))?;
    cfg.train.seed = seed;
    cfg.synth.seed = seed;
    let ds = load_dataset(&cfg)?;
    let data = prepare(&mut cfg, &ds, None)?;
    let grid = [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 0.1];
    let result = grid_search(&grid, &grid, |a1, a2| {
        let mut c = cfg.clone();
        c.train.alpha1 = a1;
        c.train.alpha2 = a2;
        let mut t = Trainer::new(BimDiff::new(&c)?);
        t.fit(&data.train, None, None, |_, _| Ok(()))?;
        let m = evaluate(&t.model, &data.val, &data.normalizer, &EvalOptions::from_config(&c, seed))?;
        println!("alpha1={a1:e} alpha2={a2:e} val_mae={:.6}", m.mae);
        Ok(m.mae)
    })?;
    println!("best alpha1={:e} alpha2={:e} val_mae={:.6}", result.alpha1, result.alpha2, result.score);
    Ok(())
}
