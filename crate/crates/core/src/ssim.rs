//! SSIM with an 11x11 Gaussian window (sigma 1.5), computed per channel and
//! averaged, plus its analytic gradient.
//!
//! Local moments come from zero-padded separable correlations. The kernel
//! is symmetric and each 1D zero-padded pass is self-adjoint, so the
//! backward pass reuses the same blur on the per-pixel sensitivity maps.

use crate::error::MetricError;
use crate::image::Image;
use crate::scalar::{real, Real};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel<T: Real>() -> [T; WINDOW] {
    let mut k = [0.0f64; WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - (WINDOW as f64 - 1.0) / 2.0;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    let mut out = [T::zero(); WINDOW];
    for i in 0..WINDOW {
        out[i] = T::from_f64(k[i] / sum);
    }
    out
}

/// Zero-padded separable blur over one channel plane, row-major `w x h`.
fn blur<T: Real>(src: &[T], w: usize, h: usize, k: &[T; WINDOW], tmp: &mut [T], dst: &mut [T]) {
    let r = WINDOW / 2;
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (t, kt) in k.iter().enumerate() {
                let xi = x as isize + t as isize - r as isize;
                if xi >= 0 && (xi as usize) < w {
                    acc += *kt * src[y * w + xi as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (t, kt) in k.iter().enumerate() {
                let yi = y as isize + t as isize - r as isize;
                if yi >= 0 && (yi as usize) < h {
                    acc += *kt * tmp[yi as usize * w + x];
                }
            }
            dst[y * w + x] = acc;
        }
    }
}

fn extract_channel<T: Real>(img: &Image<T>, c: usize, out: &mut [T]) {
    for (k, v) in out.iter_mut().enumerate() {
        *v = img.data[k * 3 + c];
    }
}

fn check_shapes<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(), MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ImageShape {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    Ok(())
}

/// Mean SSIM of `a` against `b`.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T, MetricError> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad<T: Real>(
    a: &Image<T>,
    b: &Image<T>,
) -> Result<(T, Image<T>), MetricError> {
    let (value, grad) = ssim_impl(a, b, true)?;
    Ok((value, grad.expect("gradient requested")))
}

fn ssim_impl<T: Real>(
    a: &Image<T>,
    b: &Image<T>,
    want_grad: bool,
) -> Result<(T, Option<Image<T>>), MetricError> {
    check_shapes(a, b)?;
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let k = kernel::<T>();
    let c1 = real::<T>(C1);
    let c2 = real::<T>(C2);
    let two = real::<T>(2.0);

    let mut x = vec![T::zero(); n];
    let mut y = vec![T::zero(); n];
    let mut xx = vec![T::zero(); n];
    let mut yy = vec![T::zero(); n];
    let mut xy = vec![T::zero(); n];
    let mut mu_x = vec![T::zero(); n];
    let mut mu_y = vec![T::zero(); n];
    let mut m2x = vec![T::zero(); n];
    let mut m2y = vec![T::zero(); n];
    let mut mxy = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    let mut g_mu = vec![T::zero(); n];
    let mut g_m2x = vec![T::zero(); n];
    let mut g_mxy = vec![T::zero(); n];
    let mut grad = want_grad.then(|| Image::<T>::zeros(w, h));

    let mut total = T::zero();
    let denom = T::from_f64((n * 3) as f64);

    for c in 0..3 {
        extract_channel(a, c, &mut x);
        extract_channel(b, c, &mut y);
        for i in 0..n {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        blur(&x, w, h, &k, &mut tmp, &mut mu_x);
        blur(&y, w, h, &k, &mut tmp, &mut mu_y);
        blur(&xx, w, h, &k, &mut tmp, &mut m2x);
        blur(&yy, w, h, &k, &mut tmp, &mut m2y);
        blur(&xy, w, h, &k, &mut tmp, &mut mxy);

        for i in 0..n {
            let (ux, uy) = (mu_x[i], mu_y[i]);
            let var_x = m2x[i] - ux * ux;
            let var_y = m2y[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            let a1 = two * ux * uy + c1;
            let a2 = two * cov + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = var_x + var_y + c2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;

            if want_grad {
                // Sensitivities with m2x and mxy treated as raw moment
                // channels (var/cov depend on mu as well).
                let g_s = (denom).recip();
                let d_a1 = g_s * a2 / (b1 * b2);
                let d_a2 = g_s * a1 / (b1 * b2);
                let d_b1 = -g_s * s / b1;
                let d_b2 = -g_s * s / b2;
                g_mu[i] = d_a1 * two * uy + d_b1 * two * ux
                    - d_b2 * two * ux
                    - d_a2 * two * uy;
                g_m2x[i] = d_b2;
                g_mxy[i] = d_a2 * two;
            }
        }

        if want_grad {
            let g = grad.as_mut().expect("allocated above");
            // Adjoint of each zero-padded blur is the same blur.
            let mut back = vec![T::zero(); n];
            blur(&g_mu, w, h, &k, &mut tmp, &mut back);
            for i in 0..n {
                g.data[i * 3 + c] += back[i];
            }
            blur(&g_m2x, w, h, &k, &mut tmp, &mut back);
            for i in 0..n {
                g.data[i * 3 + c] += back[i] * two * x[i];
            }
            blur(&g_mxy, w, h, &k, &mut tmp, &mut back);
            for i in 0..n {
                g.data[i * 3 + c] += back[i] * y[i];
            }
        }
    }
    Ok((total / denom, grad))
}
