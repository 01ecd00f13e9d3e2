//! Dense vector kernels. Reductions run sequentially so results do not
//! depend on how callers split work across threads.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Widened dot product of two f32 slices.
#[inline]
pub fn dot_f32_wide(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Dim { expected: a.len(), actual: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::Value("cosine of a zero vector".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Returns `v / |v|`, or `None` for a zero or non-finite norm.
pub fn unit<T: Scalar>(v: &[T]) -> Option<Vec<T>> {
    let n = norm(v);
    if n == T::zero() || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| *x / n).collect())
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, *x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Numerically stable softmax in place.
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.9, 0.9, 0.1]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = vec![1000.0f64, 999.0, -3.0];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut w = vec![0.1f32, 0.2, 0.3];
        softmax_in_place(&mut w);
        assert!((w.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_generic_over_precision() {
        assert!((cosine(&[1.0f32, 0.0], &[0.6, 0.8]).unwrap() - 0.6).abs() < 1e-7);
        assert!((cosine(&[1.0f64, 0.0], &[0.6, 0.8]).unwrap() - 0.6).abs() < 1e-15);
        assert!(cosine(&[0.0f64, 0.0], &[1.0, 0.0]).is_err());
    }
}
