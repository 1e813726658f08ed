use crate::block::Block;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Block,
    pub val: Block,
    pub test: Block,
}

/// Parses `a:b:c` into three non-negative weights with a positive sum.
pub fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("split ratio {text:?} is not a:b:c")))?;
    match parts.as_slice() {
        [a, b, c] if *a >= 0.0 && *b >= 0.0 && *c >= 0.0 && a + b + c > 0.0 => Ok([*a, *b, *c]),
        _ => Err(Error::Config(format!("split ratio {text:?} is not a:b:c"))),
    }
}

/// Contiguous chronological train/val/test segments. Train and val sizes are
/// rounded down; test takes the remainder. Every segment must hold at least
/// `min_len` rows.
pub fn split(values: &Block, ratios: [f64; 3], min_len: usize) -> Result<Splits> {
    let n = values.rows();
    let total: f64 = ratios.iter().sum();
    let n_train = (n as f64 * ratios[0] / total).floor() as usize;
    let n_val = (n as f64 * ratios[1] / total).floor() as usize;
    let n_test = n - n_train - n_val;
    for (name, len) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if len < min_len {
            return Err(Error::Data(format!("{name} segment has {len} rows, need at least {min_len}")));
        }
    }
    Ok(Splits {
        train: values.slice_rows(0, n_train),
        val: values.slice_rows(n_train, n_train + n_val),
        test: values.slice_rows(n_train + n_val, n),
    })
}
