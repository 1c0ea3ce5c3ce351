use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::Result;

/// Fan-in and fan-out of a weight tensor: `[n]`, `[in, out]`, or
/// `[kh, kw, in, out]` with the receptive field folded into both fans.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, *n),
        [i, o] => (*i, *o),
        [kh, kw, i, o] => (kh * kw * i, kh * kw * o),
        other => {
            let receptive: usize = other[..other.len().saturating_sub(2)].iter().product();
            let i = other[other.len() - 2];
            let o = other[other.len() - 1];
            (receptive * i, receptive * o)
        }
    }
}

pub fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = fans(shape);
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Result<Tensor<T>> {
    let bound = glorot_bound(&shape);
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_dense_bound_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = glorot_init(vec![3, 3], &mut rng).unwrap();
        assert_eq!(glorot_bound(&[3, 3]), 1.0);
        assert!(t.values().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let a: Tensor<f32> = glorot_init(vec![3, 3, 2, 4], &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let b: Tensor<f32> = glorot_init(vec![3, 3, 2, 4], &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Tensor<f64> = glorot_init(vec![100, 100], &mut rng).unwrap();
        let bound = glorot_bound(&[100, 100]);
        let mean = t.values().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!(t.values().iter().all(|v| v.abs() <= bound));
        let max = t.values().iter().cloned().fold(f64::MIN, f64::max);
        assert!(max > 0.95 * bound);
    }

    #[test]
    fn conv_fans_include_receptive_field() {
        assert_eq!(fans(&[3, 3, 2, 4]), (18, 36));
    }
}
