//! Weighted pool-adjacent-violators, used to project knot values onto the
//! nondecreasing, bounded set.

/// Weighted least-squares nondecreasing fit to `y`.
pub fn pava(y: &[f64], w: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), w.len());
    // blocks of (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let ws = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / ws, ws, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Euclidean projection onto `{lo <= x_0 <= ... <= x_n <= hi}`.
pub fn project_monotone_box(y: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let ones = vec![1.0; y.len()];
    pava(y, &ones)
        .into_iter()
        .map(|v| v.clamp(lo, hi))
        .collect()
}
