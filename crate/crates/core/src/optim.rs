//! Adam updates for the Gaussian parameter groups and the decoder.
//!
//! Moments are kept per group so densification can permute and extend them
//! alongside the parameters; bias correction uses one global step counter
//! that survives those reshapes, matching common splat-training practice.

use crate::decoder::{DecoderGrads, DecoderParams};
use crate::gaussians::{sh_basis_len, GaussianGrads, GaussianSet};
use crate::scalar::{real, Real};

/// Shared Adam constants. Epsilon is small because splat training divides
/// by very small second moments for sparse parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            beta1: real(0.9),
            beta2: real(0.999),
            epsilon: real(1e-15),
        }
    }
}

/// Learning rate per Gaussian parameter group. The position rate is the
/// schedule's current value, supplied per step by the caller.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GroupRates {
    pub position: f64,
    pub sh: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for GroupRates {
    fn default() -> Self {
        GroupRates {
            position: 1.6e-4,
            sh: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
        }
    }
}

/// First and second moments for every Gaussian parameter.
#[derive(Debug, Clone)]
struct Moments<T> {
    positions: Vec<[T; 3]>,
    opacity_logits: Vec<T>,
    rotations: Vec<[T; 4]>,
    log_scales: Vec<[T; 3]>,
    sh: Vec<T>,
}

impl<T: Real> Moments<T> {
    fn zeros(n: usize, sh_degree: usize) -> Self {
        Moments {
            positions: vec![[T::zero(); 3]; n],
            opacity_logits: vec![T::zero(); n],
            rotations: vec![[T::zero(); 4]; n],
            log_scales: vec![[T::zero(); 3]; n],
            sh: vec![T::zero(); n * sh_basis_len(sh_degree) * 3],
        }
    }

    fn select(&self, keep: &[usize], sh_width: usize) -> Self {
        Moments {
            positions: keep.iter().map(|&i| self.positions[i]).collect(),
            opacity_logits: keep.iter().map(|&i| self.opacity_logits[i]).collect(),
            rotations: keep.iter().map(|&i| self.rotations[i]).collect(),
            log_scales: keep.iter().map(|&i| self.log_scales[i]).collect(),
            sh: keep
                .iter()
                .flat_map(|&i| self.sh[i * sh_width..(i + 1) * sh_width].iter().copied())
                .collect(),
        }
    }

    fn extend_zeros(&mut self, extra: usize, sh_width: usize) {
        self.positions.extend(std::iter::repeat([T::zero(); 3]).take(extra));
        self.opacity_logits
            .extend(std::iter::repeat(T::zero()).take(extra));
        self.rotations
            .extend(std::iter::repeat([T::zero(); 4]).take(extra));
        self.log_scales
            .extend(std::iter::repeat([T::zero(); 3]).take(extra));
        self.sh
            .extend(std::iter::repeat(T::zero()).take(extra * sh_width));
    }
}

/// Adam state for one Gaussian set.
#[derive(Debug, Clone)]
pub struct GaussianAdam<T: Real> {
    pub config: AdamConfig<T>,
    pub step: usize,
    sh_width: usize,
    m: Moments<T>,
    v: Moments<T>,
}

impl<T: Real> GaussianAdam<T> {
    pub fn new(n: usize, sh_degree: usize, config: AdamConfig<T>) -> Self {
        GaussianAdam {
            config,
            step: 0,
            sh_width: sh_basis_len(sh_degree) * 3,
            m: Moments::zeros(n, sh_degree),
            v: Moments::zeros(n, sh_degree),
        }
    }

    pub fn len(&self) -> usize {
        self.m.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One Adam step over all five groups.
    pub fn update(&mut self, set: &mut GaussianSet<T>, grads: &GaussianGrads<T>, rates: &GroupRates) {
        assert_eq!(set.len(), self.len(), "optimizer tracks a different set");
        assert_eq!(set.len(), grads.len(), "grads for a different set");
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::one() - c.beta1.powi(t);
        let bc2 = T::one() - c.beta2.powi(t);
        let one = T::one();

        let scalar_step = |p: &mut T, g: T, m: &mut T, v: &mut T, lr: T| {
            *m = c.beta1 * *m + (one - c.beta1) * g;
            *v = c.beta2 * *v + (one - c.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + c.epsilon);
        };

        let lr_pos = real::<T>(rates.position);
        let lr_sh = real::<T>(rates.sh);
        let lr_op = real::<T>(rates.opacity);
        let lr_sc = real::<T>(rates.scale);
        let lr_ro = real::<T>(rates.rotation);
        for i in 0..set.len() {
            for k in 0..3 {
                scalar_step(
                    &mut set.positions[i][k],
                    grads.positions[i][k],
                    &mut self.m.positions[i][k],
                    &mut self.v.positions[i][k],
                    lr_pos,
                );
                scalar_step(
                    &mut set.log_scales[i][k],
                    grads.log_scales[i][k],
                    &mut self.m.log_scales[i][k],
                    &mut self.v.log_scales[i][k],
                    lr_sc,
                );
            }
            for k in 0..4 {
                scalar_step(
                    &mut set.rotations[i][k],
                    grads.rotations[i][k],
                    &mut self.m.rotations[i][k],
                    &mut self.v.rotations[i][k],
                    lr_ro,
                );
            }
            scalar_step(
                &mut set.opacity_logits[i],
                grads.opacity_logits[i],
                &mut self.m.opacity_logits[i],
                &mut self.v.opacity_logits[i],
                lr_op,
            );
        }
        for k in 0..set.sh.len() {
            scalar_step(
                &mut set.sh[k],
                grads.sh[k],
                &mut self.m.sh[k],
                &mut self.v.sh[k],
                lr_sh,
            );
        }
    }

    /// Keeps moments for the surviving indices, in `keep` order.
    pub fn select(&mut self, keep: &[usize]) {
        self.m = self.m.select(keep, self.sh_width);
        self.v = self.v.select(keep, self.sh_width);
    }

    /// Appends zeroed moments for `extra` fresh Gaussians.
    pub fn extend_zeros(&mut self, extra: usize) {
        self.m.extend_zeros(extra, self.sh_width);
        self.v.extend_zeros(extra, self.sh_width);
    }
}

/// Adam state for the decoder, one flat rate for every tensor.
#[derive(Debug, Clone)]
pub struct DecoderAdam<T: Real> {
    pub config: AdamConfig<T>,
    pub step: usize,
    m: DecoderParams<T>,
    v: DecoderParams<T>,
}

impl<T: Real> DecoderAdam<T> {
    pub fn new(params: &DecoderParams<T>, config: AdamConfig<T>) -> Self {
        DecoderAdam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut DecoderParams<T>, grads: &DecoderGrads<T>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::one() - c.beta1.powi(t);
        let bc2 = T::one() - c.beta2.powi(t);
        let one = T::one();
        let lr = real::<T>(lr);
        let mut grads = grads.clone();
        let mut params_t = params.tensors_mut();
        let grads_t = grads.tensors_mut();
        let mut m_t = self.m.tensors_mut();
        let mut v_t = self.v.tensors_mut();
        for tix in 0..params_t.len() {
            let p = &mut params_t[tix];
            let g = &grads_t[tix];
            let m = &mut m_t[tix];
            let v = &mut v_t[tix];
            for k in 0..p.len() {
                m[k] = c.beta1 * m[k] + (one - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (one - c.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
        drop(grads_t);
    }
}

/// Exponential interpolation for the position learning rate.
pub fn position_lr_at(step: usize, total: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total == 0 {
        return lr_init;
    }
    let t = (step as f64 / total as f64).clamp(0.0, 1.0);
    lr_init * (lr_final / lr_init).powf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{DecoderConfig, FeatureMask};

    fn single_gaussian() -> GaussianSet<f64> {
        GaussianSet {
            positions: vec![[0.0; 3]],
            opacity_logits: vec![0.0],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]],
            log_scales: vec![[0.0; 3]],
            sh: vec![0.0; 3],
            sh_degree: 0,
        }
    }

    #[test]
    fn first_step_moves_by_roughly_lr_times_sign() {
        let mut set = single_gaussian();
        let mut opt = GaussianAdam::new(1, 0, AdamConfig::default());
        let mut grads = GaussianGrads::zeros(1, 0);
        grads.positions[0] = [0.3, -0.7, 0.0];
        let rates = GroupRates {
            position: 0.01,
            ..GroupRates::default()
        };
        opt.update(&mut set, &grads, &rates);
        assert!((set.positions[0][0] + 0.01).abs() < 1e-9);
        assert!((set.positions[0][1] - 0.01).abs() < 1e-9);
        assert_eq!(set.positions[0][2], 0.0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // Minimize (opacity_logit - 3)^2 with Adam only.
        let mut set = single_gaussian();
        let mut opt = GaussianAdam::new(1, 0, AdamConfig::default());
        let rates = GroupRates {
            opacity: 0.1,
            ..GroupRates::default()
        };
        for _ in 0..400 {
            let mut grads = GaussianGrads::zeros(1, 0);
            grads.opacity_logits[0] = 2.0 * (set.opacity_logits[0] - 3.0);
            opt.update(&mut set, &grads, &rates);
        }
        assert!((set.opacity_logits[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn select_permutes_moments_with_parameters() {
        let mut set = single_gaussian();
        set.append(&single_gaussian());
        set.positions[1] = [1.0; 3];
        let mut opt = GaussianAdam::new(2, 0, AdamConfig::default());
        let mut grads = GaussianGrads::zeros(2, 0);
        grads.positions[0] = [1.0, 0.0, 0.0];
        grads.positions[1] = [0.0, 2.0, 0.0];
        opt.update(&mut set.clone(), &grads, &GroupRates::default());
        opt.select(&[1]);
        assert_eq!(opt.len(), 1);
        assert!(opt.m.positions[0][1] != 0.0);
        assert_eq!(opt.m.positions[0][0], 0.0);
        opt.extend_zeros(2);
        assert_eq!(opt.len(), 3);
        assert_eq!(opt.m.positions[2], [0.0; 3]);
    }

    #[test]
    fn decoder_update_changes_weights() {
        let config = DecoderConfig {
            hidden: 4,
            key_dim: 4,
            sh_degree: 0,
        };
        let mut params = DecoderParams::<f64>::new(config, FeatureMask::ALL, 3);
        let mut grads = params.zeros_like();
        grads.trunk1.w[0] = 1.0;
        let before = params.trunk1.w[0];
        let mut opt = DecoderAdam::new(&params, AdamConfig::default());
        opt.update(&mut params, &grads, 1e-2);
        assert!((params.trunk1.w[0] - (before - 1e-2)).abs() < 1e-6);
        // Untouched weights stay put.
        assert_eq!(params.trunk1.w[1], {
            let p = DecoderParams::<f64>::new(config, FeatureMask::ALL, 3);
            p.trunk1.w[1]
        });
    }

    #[test]
    fn position_lr_decays_exponentially() {
        let lr0 = position_lr_at(0, 1000, 1.6e-4, 1.6e-6);
        let lr_half = position_lr_at(500, 1000, 1.6e-4, 1.6e-6);
        let lr1 = position_lr_at(1000, 1000, 1.6e-4, 1.6e-6);
        assert!((lr0 - 1.6e-4).abs() < 1e-12);
        assert!((lr1 - 1.6e-6).abs() < 1e-12);
        assert!((lr_half - 1.6e-5).abs() < 1e-9);
    }
}
