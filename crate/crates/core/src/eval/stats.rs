use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Kendall's tau-b in `O(n log n)` (Knight's merge-sort algorithm).
///
/// Undefined, and an error, when either input is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData("kendall tau needs at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kendall tau of non-finite values".into()));
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n * (n - 1) / 2) as i128;
    let tied = |run: usize| (run * (run.saturating_sub(1)) / 2) as i128;
    let (mut n1, mut n3) = (0i128, 0i128);
    let (mut run_x, mut run_xy) = (1usize, 1usize);
    for i in 1..n {
        if pairs[i].0 == pairs[i - 1].0 {
            run_x += 1;
            if pairs[i].1 == pairs[i - 1].1 {
                run_xy += 1;
            } else {
                n3 += tied(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += tied(run_x);
            n3 += tied(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += tied(run_x);
    n3 += tied(run_xy);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys) as i128;

    let mut n2 = 0i128;
    let mut run_y = 1usize;
    for i in 1..n {
        if ys[i] == ys[i - 1] {
            run_y += 1;
        } else {
            n2 += tied(run_y);
            run_y = 1;
        }
    }
    n2 += tied(run_y);

    let denom = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if denom == 0.0 {
        return Err(Error::InsufficientData("kendall tau of a constant sequence".into()));
    }
    let numer = (n0 - n1 - n2 + n3 - 2 * swaps) as f64;
    Ok((numer / denom.sqrt()).clamp(-1.0, 1.0))
}

/// Sorts ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile-bootstrap confidence interval for the mean.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientData("bootstrap needs at least 2 values".into()));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::Config("bootstrap level must lie in (0, 1) with resamples ≥ 1".into()));
    }
    let n = values.len();
    let mut r = rng::seeded(seed);
    // Means are accumulated as offsets from the first value, which keeps
    // a constant sample exact.
    let shift = values[0];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| shift + (0..n).map(|_| values[r.random_range(0..n)] - shift).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail)))
}
