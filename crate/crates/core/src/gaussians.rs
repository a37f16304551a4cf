//! Gaussian containers: stored (pre-activation) parameters, activated
//! quantities, parameter gradients, and covariance assembly.
//!
//! Stored parameters are the optimizer's view: opacity as a logit, scales in
//! log space, rotations as unnormalized quaternions. Activation maps them to
//! renderable quantities and is where the constraints (opacity in (0,1),
//! positive scales, unit quaternions) come from.

use crate::error::GaussianError;
use crate::scalar::{real, Real};

/// Number of SH basis functions for a given degree.
#[inline]
pub fn sh_basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// A set of N anisotropic Gaussians in pre-activation parameterization.
///
/// SH coefficients are coefficient-major rgb triples: the value for gaussian
/// `i`, basis function `j`, channel `c` lives at `sh[(i * basis + j) * 3 + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet<T> {
    pub positions: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    /// Quaternions as (w, x, y, z); any nonzero norm is valid storage.
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub sh: Vec<T>,
    pub sh_degree: usize,
}

impl<T: Real> GaussianSet<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn basis_len(&self) -> usize {
        sh_basis_len(self.sh_degree)
    }

    /// SH slice (basis * 3 values) for one gaussian.
    pub fn sh_of(&self, i: usize) -> &[T] {
        let w = self.basis_len() * 3;
        &self.sh[i * w..(i + 1) * w]
    }

    pub fn empty(sh_degree: usize) -> Self {
        GaussianSet {
            positions: Vec::new(),
            opacity_logits: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            sh: Vec::new(),
            sh_degree,
        }
    }

    /// Checks shape consistency and per-gaussian finiteness.
    pub fn validate(&self) -> Result<(), GaussianError> {
        let n = self.positions.len();
        let check = |field: &'static str, got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(GaussianError::ShapeMismatch {
                    field,
                    got,
                    expected,
                })
            }
        };
        check("opacity_logits", self.opacity_logits.len(), n)?;
        check("rotations", self.rotations.len(), n)?;
        check("log_scales", self.log_scales.len(), n)?;
        let want_sh = n * self.basis_len() * 3;
        if self.sh.len() != want_sh {
            return Err(GaussianError::ShWidth {
                got: if n == 0 { self.sh.len() } else { self.sh.len() / n },
                degree: self.sh_degree,
                expected: self.basis_len() * 3,
            });
        }
        for i in 0..n {
            let finite = |field: &'static str, ok: bool| {
                if ok {
                    Ok(())
                } else {
                    Err(GaussianError::NonFinite { index: i, field })
                }
            };
            finite("positions", self.positions[i].iter().all(|v| v.is_finite()))?;
            finite("opacity_logits", self.opacity_logits[i].is_finite())?;
            finite("rotations", self.rotations[i].iter().all(|v| v.is_finite()))?;
            finite("log_scales", self.log_scales[i].iter().all(|v| v.is_finite()))?;
            finite("sh", self.sh_of(i).iter().all(|v| v.is_finite()))?;
        }
        Ok(())
    }

    /// New set keeping only the given indices, in the given order.
    pub fn select(&self, keep: &[usize]) -> Self {
        let w = self.basis_len() * 3;
        let mut out = GaussianSet::empty(self.sh_degree);
        out.positions.reserve(keep.len());
        for &i in keep {
            out.positions.push(self.positions[i]);
            out.opacity_logits.push(self.opacity_logits[i]);
            out.rotations.push(self.rotations[i]);
            out.log_scales.push(self.log_scales[i]);
            out.sh.extend_from_slice(&self.sh[i * w..(i + 1) * w]);
        }
        out
    }

    /// Appends another set of the same SH degree.
    pub fn append(&mut self, other: &GaussianSet<T>) {
        assert_eq!(self.sh_degree, other.sh_degree, "sh degree mismatch");
        self.positions.extend_from_slice(&other.positions);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.rotations.extend_from_slice(&other.rotations);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.sh.extend_from_slice(&other.sh);
    }
}

/// Activated quantities derived from a [`GaussianSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedGaussians<T> {
    pub positions: Vec<[T; 3]>,
    /// Sigmoid of the stored logits; always strictly inside (0, 1).
    pub opacities: Vec<T>,
    /// Unit quaternions (w, x, y, z).
    pub rotations: Vec<[T; 4]>,
    /// Exponential of the stored log-scales; always positive.
    pub scales: Vec<[T; 3]>,
    pub sh: Vec<T>,
    pub sh_degree: usize,
}

impl<T: Real> ActivatedGaussians<T> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn basis_len(&self) -> usize {
        sh_basis_len(self.sh_degree)
    }

    pub fn sh_of(&self, i: usize) -> &[T] {
        let w = self.basis_len() * 3;
        &self.sh[i * w..(i + 1) * w]
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Inverse sigmoid; the argument must lie strictly inside (0, 1).
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Maps stored parameters to renderable quantities.
///
/// Fails on shape mismatches, non-finite values, and zero-norm quaternions
/// (the error names the offending index).
pub fn activate<T: Real>(set: &GaussianSet<T>) -> Result<ActivatedGaussians<T>, GaussianError> {
    set.validate()?;
    let n = set.len();
    let mut opacities = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for i in 0..n {
        opacities.push(sigmoid(set.opacity_logits[i]));
        let q = set.rotations[i];
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if norm == T::zero() {
            return Err(GaussianError::DegenerateRotation { index: i });
        }
        rotations.push([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm]);
        let ls = set.log_scales[i];
        scales.push([ls[0].exp(), ls[1].exp(), ls[2].exp()]);
    }
    Ok(ActivatedGaussians {
        positions: set.positions.clone(),
        opacities,
        rotations,
        scales,
        sh: set.sh.clone(),
        sh_degree: set.sh_degree,
    })
}

/// Rotation matrix (row-major) of a unit quaternion (w, x, y, z).
#[inline]
pub fn quat_to_rotation<T: Real>(q: &[T; 4]) -> [[T; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = real::<T>(2.0);
    let one = T::one();
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// World-space covariance R diag(s^2) R^T of one activated gaussian.
///
/// `rotation` must be a unit quaternion and `scale` strictly positive; the
/// result is symmetric positive definite by construction.
pub fn covariance3d<T: Real>(rotation: &[T; 4], scale: &[T; 3]) -> [[T; 3]; 3] {
    let r = quat_to_rotation(rotation);
    let s2 = [scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]];
    let mut out = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += r[a][k] * s2[k] * r[b][k];
            }
            out[a][b] = acc;
        }
    }
    out
}

/// Gradients for every stored parameter of a [`GaussianSet`], plus the
/// per-gaussian view-space positional gradient norms used by densification.
#[derive(Debug, Clone)]
pub struct GaussianGrads<T> {
    pub positions: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub sh: Vec<T>,
    /// L2 norm of the accumulated 2D screen-space mean gradient, per gaussian.
    pub vspace_norm: Vec<T>,
}

impl<T: Real> GaussianGrads<T> {
    pub fn zeros(n: usize, sh_degree: usize) -> Self {
        GaussianGrads {
            positions: vec![[T::zero(); 3]; n],
            opacity_logits: vec![T::zero(); n],
            rotations: vec![[T::zero(); 4]; n],
            log_scales: vec![[T::zero(); 3]; n],
            sh: vec![T::zero(); n * sh_basis_len(sh_degree) * 3],
            vspace_norm: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Elementwise accumulate; vspace norms add as well (they are summed per
    /// backward pass and averaged by observation count at densify time).
    pub fn accumulate(&mut self, other: &GaussianGrads<T>) {
        assert_eq!(self.len(), other.len(), "grad length mismatch");
        assert_eq!(self.sh.len(), other.sh.len(), "sh grad length mismatch");
        for i in 0..self.len() {
            for k in 0..3 {
                self.positions[i][k] += other.positions[i][k];
                self.log_scales[i][k] += other.log_scales[i][k];
            }
            for k in 0..4 {
                self.rotations[i][k] += other.rotations[i][k];
            }
            self.opacity_logits[i] += other.opacity_logits[i];
            self.vspace_norm[i] += other.vspace_norm[i];
        }
        for (a, b) in self.sh.iter_mut().zip(other.sh.iter()) {
            *a += *b;
        }
    }
}
