//! Nearest-rank quantiles.
//!
//! The rank of level `q` over `n` samples is the smallest `k` in `1..=n` with
//! `k / n >= q`, i.e. `ceil(q * n)` in exact arithmetic. The rank is computed
//! so that level `0.28` over 25 samples gives rank 7 even though
//! `0.28 * 25.0` rounds up to just over 7 in binary floating point.

/// Nearest rank (1-based) of level `q` over `n` samples. `n` must be non-zero
/// and `q` must lie in `(0, 1]`.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    debug_assert!(n > 0);
    debug_assert!(q > 0.0 && q <= 1.0);
    let len = n as f64;
    let mut k = ((q * len).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / len >= q {
        k -= 1;
    }
    while k < n && (k as f64 / len) < q {
        k += 1;
    }
    k
}

/// Nearest-rank quantile of `values`, reordering the slice in place.
/// Returns `None` for an empty slice.
pub fn select_nearest_rank<T: PartialOrd + Copy>(values: &mut [T], q: f64) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let k = nearest_rank(q, values.len());
    let (_, v, _) = values.select_nth_unstable_by(k - 1, |a, b| {
        a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
    });
    Some(*v)
}
