/// Pairwise (cascade) summation with a fixed split order.
///
/// The result depends only on the input order, never on scheduling, which
/// keeps reductions over parallel batch evaluations bit-reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of equally sized vectors, component by component.
pub(crate) fn pairwise_sum_vecs(vs: &[Vec<f64>], len: usize) -> Vec<f64> {
    match vs.len() {
        0 => vec![0.0; len],
        1 => vs[0].clone(),
        n => {
            let mid = n / 2;
            let mut left = pairwise_sum_vecs(&vs[..mid], len);
            let right = pairwise_sum_vecs(&vs[mid..], len);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn vector_sum() {
        let vs = vec![vec![1.0, 2.0]; 37];
        assert_eq!(pairwise_sum_vecs(&vs, 2), vec![37.0, 74.0]);
        assert_eq!(pairwise_sum_vecs(&[], 3), vec![0.0; 3]);
    }
}
