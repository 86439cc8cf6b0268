//! Float helpers that work without `std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn sin_cos(x: f64) -> (f64, f64) {
    (libm::sin(x), libm::cos(x))
}

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    sqrt(dot(a, a))
}

#[inline]
pub fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Squared Euclidean distance between equal-length slices.
#[inline]
pub fn dist_sq_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest-rank percentile (`p` in `(0, 100]`) of an ascending-sorted slice.
///
/// The rank is `ceil(p/100 * n)` (1-based), clamped to `[1, n]`. The median
/// is `percentile(sorted, 50.0)`, which picks the lower middle for even `n`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    // Guard against 0.9 * 11 = 9.900000000000002 style rounding pushing the rank up.
    let raw = p / 100.0 * n as f64;
    let snapped = round(raw);
    let rank = if (raw - snapped).abs() < 1e-9 { snapped } else { ceil(raw) };
    let rank = (rank as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_p90_of_eleven_steps() {
        let v: alloc::vec::Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(percentile_sorted(&v, 90.0), Some(0.9));
        assert_eq!(percentile_sorted(&v, 50.0), Some(0.5));
    }

    #[test]
    fn median_even_count_is_lower_middle() {
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0, 4.0], 50.0), Some(2.0));
        assert_eq!(percentile_sorted(&[], 50.0), None);
    }
}
