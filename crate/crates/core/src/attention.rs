//! Cosine-score attention over a set of stored pattern vectors, shared by the
//! semantic and episodic memories.

use crate::error::{Error, Result};
use crate::nn::{dot, norm};

/// Added to every clamped score before normalisation.
pub const WEIGHT_EPS: f64 = 1e-8;

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot(a, b) / (na * nb))
}

/// `(max(s, 0) + eps) / sum`: a convex combination even when scores are
/// negative; uniform when every score clamps to zero.
pub fn clamp_normalize(scores: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = scores.iter().map(|s| s.max(0.0) + WEIGHT_EPS).collect();
    let total: f64 = u.iter().sum();
    u.into_iter().map(|x| x / total).collect()
}

/// Result of attending over the rows `indices` of a pattern table.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// `patterns` is row-major with `dim` columns.
pub fn attend(patterns: &[f64], dim: usize, indices: Vec<usize>, query: &[f64]) -> Result<Attended> {
    let scores = indices
        .iter()
        .map(|&i| cosine_score(&patterns[i * dim..(i + 1) * dim], query))
        .collect::<Result<Vec<_>>>()?;
    let weights = clamp_normalize(&scores);
    let mut output = vec![0.0; dim];
    for (&i, w) in indices.iter().zip(&weights) {
        for (o, p) in output.iter_mut().zip(&patterns[i * dim..(i + 1) * dim]) {
            *o += w * p;
        }
    }
    Ok(Attended { indices, scores, weights, output })
}

/// Gradient of a cosine score with respect to each argument, accumulated
/// with weight `g`.
fn cosine_backward(a: &[f64], b: &[f64], s: f64, g: f64, ga: Option<&mut [f64]>, gb: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    let inv = 1.0 / (na * nb);
    for i in 0..b.len() {
        gb[i] += g * (a[i] * inv - s * b[i] / (nb * nb));
    }
    if let Some(ga) = ga {
        for i in 0..a.len() {
            ga[i] += g * (b[i] * inv - s * a[i] / (na * na));
        }
    }
}

/// Backpropagates `g_out` through [`attend`]. Pattern gradients are only
/// accumulated when `g_patterns` is given.
pub fn attend_backward(
    patterns: &[f64],
    dim: usize,
    att: &Attended,
    query: &[f64],
    g_out: &[f64],
    g_query: &mut [f64],
    mut g_patterns: Option<&mut [f64]>,
) {
    let rows: Vec<&[f64]> = att.indices.iter().map(|&i| &patterns[i * dim..(i + 1) * dim]).collect();
    let g_w: Vec<f64> = rows.iter().map(|r| dot(g_out, r)).collect();
    let mean: f64 = att.weights.iter().zip(&g_w).map(|(w, g)| w * g).sum();
    let total: f64 = att.scores.iter().map(|s| s.max(0.0) + WEIGHT_EPS).sum();
    for (k, &i) in att.indices.iter().enumerate() {
        if let Some(gp) = g_patterns.as_deref_mut() {
            for (gpi, go) in gp[i * dim..(i + 1) * dim].iter_mut().zip(g_out) {
                *gpi += att.weights[k] * go;
            }
        }
        if att.scores[k] > 0.0 {
            let g_s = (g_w[k] - mean) / total;
            let gp_row = g_patterns.as_deref_mut().map(|gp| &mut gp[i * dim..(i + 1) * dim]);
            cosine_backward(rows[k], query, att.scores[k], g_s, gp_row, g_query);
        }
    }
}
