//! Reconstruction losses.

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::frame::Tensor;

/// Mean over samples of the per-pixel mean absolute error.
pub fn chunk_loss(sr: &[Tensor], hr: &[Tensor]) -> Result<f64> {
    check_batches(sr, hr)?;
    let total: f64 = sr
        .iter()
        .zip(hr)
        .map(|(s, h)| {
            let sum: f64 = s.data.iter().zip(&h.data).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
            sum / s.data.len() as f64
        })
        .sum();
    Ok(total / sr.len() as f64)
}

/// Gradient of [`chunk_loss`] with respect to each `sr` tensor.
/// Uses `sign(0) = 0`.
pub fn chunk_loss_grad(sr: &[Tensor], hr: &[Tensor]) -> Result<alloc::vec::Vec<Tensor>> {
    check_batches(sr, hr)?;
    let n = sr.len() as f32;
    Ok(sr
        .iter()
        .zip(hr)
        .map(|(s, h)| {
            let w = 1.0 / (n * s.data.len() as f32);
            let data = s
                .data
                .iter()
                .zip(&h.data)
                .map(|(a, b)| {
                    if a > b {
                        w
                    } else if a < b {
                        -w
                    } else {
                        0.0
                    }
                })
                .collect();
            Tensor { channels: s.channels, height: s.height, width: s.width, data }
        })
        .collect())
}

fn check_batches(sr: &[Tensor], hr: &[Tensor]) -> Result<()> {
    if sr.is_empty() || sr.len() != hr.len() {
        return Err(Error::Shape(format!("loss over {} outputs and {} targets", sr.len(), hr.len())));
    }
    if let Some(i) = sr.iter().zip(hr).position(|(s, h)| !s.same_shape(h)) {
        return Err(Error::Shape(format!("sample {i}: output and target shapes differ")));
    }
    Ok(())
}

/// Sum of per-chunk losses.
pub fn total_loss(chunk_losses: &[f64]) -> Result<f64> {
    if chunk_losses.is_empty() {
        return Err(Error::EmptyInput(String::from("no chunk losses to sum")));
    }
    Ok(chunk_losses.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng;

    fn rand_tensor(seed: u64) -> Tensor {
        let mut rng = rng_from(seed);
        Tensor::from_vec(3, 4, 5, (0..60).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn identical_batches_have_zero_loss() {
        let t = vec![rand_tensor(1), rand_tensor(2)];
        assert_eq!(chunk_loss(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let sr = vec![Tensor::from_vec(3, 2, 2, vec![0.25; 12]).unwrap()];
        let hr = vec![Tensor::from_vec(3, 2, 2, vec![0.5; 12]).unwrap()];
        assert!((chunk_loss(&sr, &hr).unwrap() - 0.25).abs() < 1e-12);
        let sr = vec![Tensor::from_vec(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap()];
        let hr = vec![Tensor::from_vec(1, 1, 3, vec![0.3, 0.5, 0.7]).unwrap()];
        assert!((chunk_loss(&sr, &hr).unwrap() - 0.1).abs() < 1e-7);
    }

    #[test]
    fn matches_scalar_loop() {
        let sr = vec![rand_tensor(3), rand_tensor(4)];
        let hr = vec![rand_tensor(5), rand_tensor(6)];
        let mut acc = 0.0f64;
        for s in 0..2 {
            let mut per = 0.0f64;
            for i in 0..60 {
                per += (sr[s].data[i] as f64 - hr[s].data[i] as f64).abs();
            }
            acc += per / 60.0;
        }
        assert!((chunk_loss(&sr, &hr).unwrap() - acc / 2.0).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch() {
        let a = vec![rand_tensor(1)];
        let b = vec![Tensor::zeros(3, 4, 4)];
        assert!(matches!(chunk_loss(&a, &b), Err(Error::Shape(_))));
        assert!(chunk_loss(&a, &[]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sr = vec![rand_tensor(7)];
        let hr = vec![rand_tensor(8)];
        let g = chunk_loss_grad(&sr, &hr).unwrap();
        for i in [0usize, 13, 59] {
            let eps = 1e-4f32;
            let mut up = sr.clone();
            up[0].data[i] += eps;
            let mut down = sr.clone();
            down[0].data[i] -= eps;
            let fd = (chunk_loss(&up, &hr).unwrap() - chunk_loss(&down, &hr).unwrap()) / (2.0 * eps as f64);
            assert!((fd - g[0].data[i] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn total_is_plain_sum() {
        assert!((total_loss(&[0.2, 0.3]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(total_loss(&[0.7]).unwrap(), 0.7);
        let mut rng = rng_from(3);
        let xs: Vec<f64> = (0..17).map(|_| rng.gen()).collect();
        let folded = xs.iter().fold(0.0, |a, b| a + b);
        assert!((total_loss(&xs).unwrap() - folded).abs() < 1e-12);
        assert!(total_loss(&[]).is_err());
    }
}
