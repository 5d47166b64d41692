/// Width of the posterior moving-average filter, in word outputs.
pub const DEFAULT_SMOOTHING_WIDTH: usize = 9;

/// Mean of the given vectors, summed in iteration order.
pub(crate) fn window_mean<'a, I>(window: I, num_classes: usize) -> Vec<f64>
where
    I: Iterator<Item = &'a Vec<f64>>,
{
    let mut sum = vec![0.0; num_classes];
    let mut count = 0usize;
    for v in window {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        count += 1;
    }
    if count > 0 {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    sum
}

/// Causal moving average: `out[t]` is the mean of `raw[max(0, t-width+1) ..= t]`
/// per class. A width of 0 is treated as 1.
pub fn smooth_scores(raw: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    let width = width.max(1);
    let k = raw.first().map_or(0, Vec::len);
    (0..raw.len())
        .map(|t| window_mean(raw[(t + 1).saturating_sub(width)..=t].iter(), k))
        .collect()
}
