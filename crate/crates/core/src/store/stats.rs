use super::layout::LayerLayout;

/// Quantile levels used by [`weight_statistics`].
pub const QUANTILES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Features per weight or bias group.
pub const STATS_PER_GROUP: usize = 2 + QUANTILES.len();

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean, population variance and quantiles of one group.
pub fn group_statistics(values: &[f32]) -> [f64; STATS_PER_GROUP] {
    let n = values.len() as f64;
    let mut sorted: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let mut out = [0.0; STATS_PER_GROUP];
    out[0] = mean;
    out[1] = var;
    for (o, q) in out[2..].iter_mut().zip(QUANTILES) {
        *o = quantile_sorted(&sorted, q);
    }
    out
}

/// Layer-wise statistics s(W): for each layer, its weights then (if the
/// layer has them) its biases.
pub fn weight_statistics(v: &[f32], layout: &LayerLayout) -> Vec<f64> {
    let mut out = Vec::new();
    for seg in layout.segments() {
        out.extend(group_statistics(&v[seg.range]));
    }
    out
}

pub fn statistics_dim(layout: &LayerLayout) -> usize {
    layout.segments().len() * STATS_PER_GROUP
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::arch::{build_cnn_mnist, build_ffn_tetris};

    #[test]
    fn constant_group() {
        let s = group_statistics(&[2.5; 7]);
        assert_eq!(s, [2.5, 0.0, 2.5, 2.5, 2.5, 2.5, 2.5]);
    }

    #[test]
    fn one_to_five_quantiles() {
        let s = group_statistics(&[3.0, 1.0, 5.0, 2.0, 4.0]);
        assert_eq!(&s[2..], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s[0], 3.0);
        assert_eq!(s[1], 2.0);
    }

    #[test]
    fn feature_counts() {
        let ffn = LayerLayout::from_arch(&build_ffn_tetris()).unwrap();
        assert_eq!(weight_statistics(&vec![0.1; 100], &ffn).len(), 14);
        let cnn = LayerLayout::from_arch(&build_cnn_mnist()).unwrap();
        assert_eq!(statistics_dim(&cnn), 70);
    }
}
