//! Small dense-vector helpers. Vectors are `&[f64]` throughout.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-length copy of `a`. The zero vector stays zero.
pub fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n == 0.0 {
        a.to_vec()
    } else {
        a.iter().map(|x| x / n).collect()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Normalized mean of the given vectors; `None` for an empty set or a
/// zero-sum set.
pub fn normalized_mean<'a, I>(vectors: I, dims: usize) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = vec![0.0; dims];
    let mut count = 0usize;
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        count += 1;
    }
    if count == 0 {
        return None;
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    if norm(&sum) == 0.0 {
        None
    } else {
        Some(normalized(&sum))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_axes_is_diagonal() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let m = normalized_mean([&a[..], &b[..]], 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m[0] - h).abs() < 1e-12 && (m[1] - h).abs() < 1e-12);
    }

    #[test]
    fn opposite_vectors_have_no_mean_direction() {
        let a = [1.0, 0.0];
        let b = [-1.0, 0.0];
        assert!(normalized_mean([&a[..], &b[..]], 2).is_none());
        assert!(normalized_mean(std::iter::empty(), 2).is_none());
    }

    #[test]
    fn cosine_of_zero_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[2.0, 0.0], &[5.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
