//! Photometric training loss: (1 - lambda) * MAE + lambda * (1 - SSIM).

use crate::error::MetricError;
use crate::image::Image;
use crate::scalar::Real;
use crate::ssim::{ssim, ssim_with_grad};

/// Mean absolute error over all pixels and channels.
pub fn mae<T: Real>(pred: &Image<T>, gt: &Image<T>) -> Result<T, MetricError> {
    if !pred.same_shape(gt) {
        return Err(MetricError::ImageShape {
            a_w: pred.width,
            a_h: pred.height,
            b_w: gt.width,
            b_h: gt.height,
        });
    }
    let n = T::from_f64(pred.data.len() as f64);
    let sum: T = pred
        .data
        .iter()
        .zip(gt.data.iter())
        .map(|(p, g)| (*p - *g).abs())
        .sum();
    Ok(sum / n)
}

/// Blended reconstruction loss; zero when the images match.
pub fn photometric_loss<T: Real>(
    pred: &Image<T>,
    gt: &Image<T>,
    lambda: T,
) -> Result<T, MetricError> {
    let l1 = mae(pred, gt)?;
    let s = ssim(pred, gt)?;
    Ok((T::one() - lambda) * l1 + lambda * (T::one() - s))
}

/// Loss value plus its gradient with respect to `pred`. The MAE subgradient
/// at exact ties is zero, so pred = gt yields an exactly zero gradient.
pub fn photometric_with_grad<T: Real>(
    pred: &Image<T>,
    gt: &Image<T>,
    lambda: T,
) -> Result<(T, Image<T>), MetricError> {
    let l1 = mae(pred, gt)?;
    let (s, s_grad) = ssim_with_grad(pred, gt)?;
    let loss = (T::one() - lambda) * l1 + lambda * (T::one() - s);
    let mut grad = Image::zeros(pred.width, pred.height);
    let per = (T::one() - lambda) / T::from_f64(pred.data.len() as f64);
    for k in 0..pred.data.len() {
        let d = pred.data[k] - gt.data[k];
        let sign = if d > T::zero() {
            T::one()
        } else if d < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        grad.data[k] = per * sign - lambda * s_grad.data[k];
    }
    Ok((loss, grad))
}

/// Scales a gradient image in place; used to fold loss weights into the
/// per-pass gradients so downstream accumulation stays unweighted.
pub fn scale_grad<T: Real>(grad: &mut Image<T>, factor: T) {
    for v in grad.data.iter_mut() {
        *v *= factor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::zeros(w, h);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn zero_when_images_match() {
        let img = random_image(0, 14, 10);
        assert_eq!(photometric_loss(&img, &img, 0.5).unwrap(), 0.0);
        let (loss, grad) = photometric_with_grad(&img, &img, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        // The ssim part is a smooth global maximum here, so its gradient
        // cancels to rounding noise rather than exact zeros.
        assert!(grad.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lambda_zero_is_mean_absolute_error() {
        let a = random_image(1, 9, 9);
        let b = random_image(2, 9, 9);
        let loss = photometric_loss(&a, &b, 0.0).unwrap();
        assert_eq!(loss, mae(&a, &b).unwrap());
    }

    #[test]
    fn lambda_one_is_one_minus_ssim() {
        let a = Image::<f64>::filled(24, 24, 0.0);
        let b = Image::<f64>::filled(24, 24, 1.0);
        let loss = photometric_loss(&a, &b, 1.0).unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!((loss - (1.0 - s)).abs() < 1e-15);
        assert!(loss > 0.95);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = random_image(3, 14, 14);
        let b = random_image(4, 14, 14);
        let (_, grad) = photometric_with_grad(&a, &b, 0.5).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let k = rng.gen_range(0..a.data.len());
            let mut plus = a.clone();
            plus.data[k] += h;
            let mut minus = a.clone();
            minus.data[k] -= h;
            let numeric = (photometric_loss(&plus, &b, 0.5).unwrap()
                - photometric_loss(&minus, &b, 0.5).unwrap())
                / (2.0 * h);
            let rel = (grad.data[k] - numeric).abs()
                / grad.data[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "rel err {worst}");
    }
}
