//! R² and Kendall's rank correlation.

use crate::error::{bail, Result};

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a != b {
        bail!(Dimension, "metric inputs differ in length: {a} vs {b}");
    }
    if a < 2 {
        bail!(Data, "metrics need at least 2 samples, got {a}");
    }
    Ok(())
}

/// `1 - SS_res / SS_tot`; NaN when the truth has no variance.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    if ss_tot == 0.0 {
        log::warn!("R² undefined: target has zero variance");
        return Ok(f64::NAN);
    }
    Ok(1.0 - ss_res / ss_tot)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        bail!(Dimension, "accuracy inputs: {} vs {}", pred.len(), truth.len());
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Number of tied pairs within runs of equal values of a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that returns the number of inversions (strictly out of order pairs).
fn sort_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count(&mut v[..mid], &mut buf[..mid]) + sort_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Tie-corrected Kendall τ-b in `O(n log n)`; NaN when either side is constant.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a.len(), b.len())?;
    if a.iter().chain(b).any(|x| x.is_nan()) {
        bail!(Data, "kendall tau inputs contain NaN");
    }
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    let sa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
    let pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (a[i], b[i])).collect();
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let t_a = tied_pairs(&sa);
    let t_ab = tied_pairs(&pairs);
    let mut sb: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let discordant = sort_count(&mut sb, &mut buf);
    let t_b = tied_pairs(&sb);
    if n0 == t_a || n0 == t_b {
        log::warn!("Kendall tau undefined: one input is constant");
        return Ok(f64::NAN);
    }
    // concordant - discordant = n0 - t_a - t_b + t_ab - 2 * discordant
    let num = n0 as f64 - t_a as f64 - t_b as f64 + t_ab as f64 - 2.0 * discordant as f64;
    let den = ((n0 - t_a) as f64 * (n0 - t_b) as f64).sqrt();
    Ok(num / den)
}
