//! Fidelity and detectability metrics: PSNR and rank-based AUC.

use crate::error::MetricError;
use crate::image::Image;
use crate::scalar::Real;

/// PSNR cap reported when the MSE is (near) zero.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over all pixels and channels, for
/// values in [0,1]. MSE below 1e-10 reports the 100 dB cap.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ImageShape {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    let mse = acc / a.data.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Exact area under the ROC curve, ties counted half (Mann-Whitney).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LabelShape {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("finite scores"));

    // Average ranks across tied score runs, then sum positive ranks.
    let mut rank_sum_pos = 0.0f64;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        // 1-based ranks k+1 ..= end share the average.
        let avg_rank = (k + 1 + end) as f64 / 2.0;
        for &idx in &order[k..end] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        k = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_cap() {
        let img = Image::<f64>::filled(8, 8, 0.37);
        assert_eq!(psnr(&img, &img).unwrap(), 100.0);
    }

    #[test]
    fn uniform_difference_gives_twenty_db() {
        let a = Image::<f64>::filled(8, 8, 0.5);
        let b = Image::<f64>::filled(8, 8, 0.6);
        let v = psnr(&a, &b).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "psnr {v}");
    }

    #[test]
    fn checkerboard_against_black() {
        let mut a = Image::<f64>::zeros(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                if (x + y) % 2 == 0 {
                    a.set_pixel(x, y, [1.0, 1.0, 1.0]);
                }
            }
        }
        let b = Image::<f64>::zeros(8, 8);
        let v = psnr(&a, &b).unwrap();
        assert!((v - 10.0 * 2.0f64.log10()).abs() < 1e-9, "psnr {v}");
        assert!((v - 3.0103).abs() < 1e-3);
    }

    #[test]
    fn psnr_shape_mismatch_errors() {
        let a = Image::<f64>::zeros(4, 4);
        let b = Image::<f64>::zeros(4, 5);
        assert!(matches!(psnr(&a, &b), Err(MetricError::ImageShape { .. })));
    }

    #[test]
    fn separated_scores_have_full_area() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [false, false, true, true];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        let flipped = [true, true, false, false];
        assert_eq!(auc(&scores, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn all_tied_scores_are_chance() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, true, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn four_point_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn invariant_under_monotone_transforms() {
        let scores = [0.12, 0.9, 0.3, 0.5, 0.44, 0.2];
        let labels = [false, true, false, true, true, false];
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (5.0 * s).tanh()).collect();
        assert_eq!(auc(&squashed, &labels).unwrap(), base);
        let shifted: Vec<f64> = scores.iter().map(|s| 100.0 * s + 7.0).collect();
        assert_eq!(auc(&shifted, &labels).unwrap(), base);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(MetricError::SingleClass)
        ));
    }
}
