//! Numerically stable logistic helpers.

use crate::scalar::Scalar;

/// Logistic function `1 / (1 + e^-z)`, evaluated without overflow for any finite `z`.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `-ln σ(z)`, i.e. `softplus(-z)`.
pub fn neg_log_sigmoid<T: Scalar>(z: T) -> T {
    // softplus(-z) = max(-z, 0) + ln(1 + e^{-|z|})
    let m = (-z).max(T::zero());
    m + (-z.abs()).exp().ln_1p()
}

/// `ln Σ exp(v_i)` with max subtraction. Returns `-inf` for an empty slice.
pub fn logsumexp<T: Scalar>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    if !max.is_finite() {
        return max;
    }
    let s: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Index of the largest value; ties resolve to the earliest position.
pub(crate) fn argmax_first<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Population variance (divides by `n`).
pub(crate) fn population_variance<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let n = T::from_usize(values.len()).unwrap();
    let mean = values.iter().copied().sum::<T>() / n;
    values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n
}
