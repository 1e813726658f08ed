/// `W x` for a row-major `rows x cols` matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// `W^T g` for a row-major `rows x cols` matrix.
pub fn matvec_t(w: &[f64], rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    debug_assert_eq!(g.len(), rows);
    let mut out = vec![0.0; cols];
    for (row, gi) in w.chunks_exact(cols).zip(g) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += gi * wij;
        }
    }
    out
}

/// `G += g x^T`.
pub fn outer_acc(grad: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, gi) in grad.chunks_exact_mut(cols).zip(g) {
        for (o, xj) in row.iter_mut().zip(x) {
            *o += gi * xj;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
