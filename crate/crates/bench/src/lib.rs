//! Deterministic inputs shared by the benchmarks.

use hyperzoo::zoo::{build_ffn_tetris, init_weights, InitMethod};
use hyperzoo::LayerLayout;

/// Pseudo-random values in `[-1, 1)` from a fixed linear congruential sequence.
pub fn values(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// `rows` checkpoints of the small FFN and its layout.
pub fn ffn_checkpoints(rows: usize) -> (LayerLayout, Vec<f32>) {
    let arch = build_ffn_tetris();
    let layout = LayerLayout::from_arch(&arch).expect("valid architecture");
    let flat = (0..rows).flat_map(|i| init_weights(&arch, InitMethod::Normal, i as u64)).collect();
    (layout, flat)
}
