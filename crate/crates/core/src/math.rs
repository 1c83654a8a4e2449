//! Extended-real helpers shared by the coverage and weight-function code.
//!
//! Density ratios follow the conventions `x / 0 = +inf` for `x > 0` and
//! `0 / 0 = 1`; clipping maps `+inf` to the clip level.

/// Natural logarithm (`no_std` shim).
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// `num / den` under the `x/0 = +inf`, `0/0 = 1` conventions.
#[inline]
pub fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// `min(value, gamma)` for an extended non-negative `value`.
#[inline]
pub fn clip(value: f64, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0, "clip level must be positive");
    if value > gamma {
        gamma
    } else {
        value
    }
}

/// Index of the largest entry, lowest index on ties. `None` for an empty slice.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the smallest entry, lowest index on ties.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Samples an index from a (sub-)probability vector given `u ~ U[0,1)`.
///
/// Falls back to the last index with positive mass when rounding leaves `u`
/// above the cumulative total.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
