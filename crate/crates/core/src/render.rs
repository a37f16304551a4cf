//! Differentiable gaussian-splat renderer.
//!
//! Forward pass: project every gaussian to a 2D splat (perspective Jacobian
//! at the camera-space mean, screen covariance J W Sigma W^T J^T plus a small
//! isotropic dilation), sort by depth, and alpha-composite front to back per
//! pixel with early termination. Backward pass: exact reverse-mode gradients
//! of all stored parameters, replaying the recorded per-pixel contributions
//! back to front.
//!
//! Pixel (px, py) is sampled at continuous coordinates (px + 0.5, py + 0.5).

use crate::camera::Camera;
use crate::error::RenderError;
use crate::gaussians::{
    activate, covariance3d, quat_to_rotation, ActivatedGaussians, GaussianGrads, GaussianSet,
};
use crate::image::Image;
use crate::scalar::{real, Real};
use crate::sh;

/// Rendering thresholds and constants.
///
/// The defaults are the production values; [`RenderOptions::exact`] turns off
/// every cutoff that makes the output non-smooth, which is what the gradient
/// checker wants.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions<T> {
    pub background: [T; 3],
    /// Contributions with alpha below this are skipped.
    pub alpha_min: T,
    /// Per-pixel compositing stops when transmittance drops below this.
    pub transmittance_min: T,
    /// Half-width of the splat footprint in units of the screen-space
    /// standard deviation. Non-finite means the footprint covers the image.
    pub footprint_sigmas: T,
    /// Isotropic dilation added to the screen covariance diagonal.
    pub dilation: T,
    /// Upper clamp on per-splat alpha.
    pub alpha_clamp: T,
    /// Splats at camera depth <= near are culled.
    pub near: T,
}

impl<T: Real> Default for RenderOptions<T> {
    fn default() -> Self {
        RenderOptions {
            background: [T::zero(); 3],
            alpha_min: real(1.0 / 255.0),
            transmittance_min: real(1.0e-4),
            footprint_sigmas: real(3.0),
            dilation: real(0.3),
            alpha_clamp: real(0.99),
            near: real(0.01),
        }
    }
}

impl<T: Real> RenderOptions<T> {
    /// Options with every non-smooth cutoff disabled: no alpha floor, no
    /// early termination, footprints covering the whole image.
    pub fn exact(background: [T; 3]) -> Self {
        RenderOptions {
            background,
            alpha_min: T::zero(),
            transmittance_min: T::zero(),
            footprint_sigmas: T::infinity(),
            ..RenderOptions::default()
        }
    }
}

/// Screen-space footprint of one projected gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D<T> {
    pub mean2d: [T; 2],
    /// Symmetric 2x2 screen covariance as (xx, xy, yy), dilation included.
    pub cov2d: [T; 3],
    pub depth: T,
}

/// Internal projected state kept for compositing and backward.
#[derive(Debug, Clone)]
pub(crate) struct ProjectedSplat<T> {
    pub source: u32,
    pub depth: T,
    pub mean2d: [T; 2],
    pub cov2d: [T; 3],
    /// Inverse of cov2d as (xx, xy, yy).
    pub conic: [T; 3],
    pub p_cam: [T; 3],
    /// Unit view direction (world), mean minus camera center.
    pub dir: [T; 3],
    /// Distance from camera center to the mean.
    pub dist: T,
    /// Post-clamp rgb.
    pub color: [T; 3],
    pub color_clamped: [bool; 3],
    /// Pixel bounds [x0, x1) x [y0, y1).
    pub x0: u32,
    pub x1: u32,
    pub y0: u32,
    pub y1: u32,
}

/// One recorded compositing contribution.
#[derive(Debug, Clone, Copy)]
pub struct Contribution<T> {
    /// Index into [`RenderAux::splat_sources`] (depth order), not the set.
    pub splat: u32,
    /// Alpha after the upper clamp.
    pub alpha: T,
    /// Transmittance in front of this contribution.
    pub transmittance: T,
    /// Whether the alpha clamp was hit (blocks geometry gradients).
    pub clamped: bool,
}

/// Forward-pass byproducts needed by [`backward`] and by densification.
#[derive(Debug, Clone)]
pub struct RenderAux<T> {
    pub width: usize,
    pub height: usize,
    pub n_gaussians: usize,
    pub options: RenderOptions<T>,
    pub(crate) splats: Vec<ProjectedSplat<T>>,
    /// CSR candidate ranges per pixel into `records`.
    offsets: Vec<usize>,
    /// Number of actual contributions per pixel (prefix of its CSR range).
    lens: Vec<usize>,
    records: Vec<Contribution<T>>,
    pub final_transmittance: Vec<T>,
}

impl<T: Real> RenderAux<T> {
    /// Contributions for one pixel, in compositing (front-to-back) order.
    pub fn contributions(&self, x: usize, y: usize) -> &[Contribution<T>] {
        let p = y * self.width + x;
        &self.records[self.offsets[p]..self.offsets[p] + self.lens[p]]
    }

    /// Source index in the gaussian set for a recorded splat id.
    pub fn splat_source(&self, splat: u32) -> usize {
        self.splats[splat as usize].source as usize
    }

    /// Gaussians that survived culling for this view.
    pub fn visible_sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.splats.iter().map(|s| s.source as usize)
    }
}

#[inline]
fn mat3_mul<T: Real>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

#[inline]
fn mat3_transpose<T: Real>(a: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// J as a 2x3 matrix for camera-space point (x, y, z).
#[inline]
fn perspective_jacobian<T: Real>(fx: T, fy: T, p: &[T; 3]) -> [[T; 3]; 2] {
    let (x, y, z) = (p[0], p[1], p[2]);
    let z2 = z * z;
    [
        [fx / z, T::zero(), -fx * x / z2],
        [T::zero(), fy / z, -fy * y / z2],
    ]
}

/// Screen covariance J M J^T for camera-space covariance M.
#[inline]
fn project_covariance<T: Real>(j: &[[T; 3]; 2], m: &[[T; 3]; 3]) -> [T; 3] {
    // v = J M (2x3), then cov = v J^T.
    let mut v = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += j[r][k] * m[k][c];
            }
            v[r][c] = acc;
        }
    }
    let dot = |r: usize, s: usize| {
        let mut acc = T::zero();
        for k in 0..3 {
            acc += v[r][k] * j[s][k];
        }
        acc
    };
    [dot(0, 0), dot(0, 1), dot(1, 1)]
}

fn project_one<T: Real>(
    act: &ActivatedGaussians<T>,
    camera: &Camera<T>,
    options: &RenderOptions<T>,
    cam_center: &[T; 3],
    i: usize,
) -> Result<Option<ProjectedSplat<T>>, RenderError> {
    let p_cam = camera.to_camera(&act.positions[i]);
    if p_cam[2] <= options.near {
        return Ok(None);
    }
    let z = p_cam[2];
    let mean2d = [
        camera.fx * p_cam[0] / z + camera.cx,
        camera.fy * p_cam[1] / z + camera.cy,
    ];
    let j = perspective_jacobian(camera.fx, camera.fy, &p_cam);
    let rot = camera.rotation();
    let sigma = covariance3d(&act.rotations[i], &act.scales[i]);
    let m = mat3_mul(&rot, &mat3_mul(&sigma, &mat3_transpose(&rot)));
    let raw = project_covariance(&j, &m);
    let cov2d = [raw[0] + options.dilation, raw[1], raw[2] + options.dilation];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det.is_finite() && det > T::zero() && mean2d[0].is_finite() && mean2d[1].is_finite()) {
        return Err(RenderError::NonFinite {
            index: i,
            what: "screen covariance",
        });
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];

    let (x0, x1, y0, y1) = if options.footprint_sigmas.is_finite() {
        let half_trace = (cov2d[0] + cov2d[2]) * real(0.5);
        let half_diff = (cov2d[0] - cov2d[2]) * real(0.5);
        let lam_max = half_trace + (half_diff * half_diff + cov2d[1] * cov2d[1]).sqrt();
        let radius = options.footprint_sigmas * lam_max.sqrt();
        let clampi = |v: T, hi: usize| -> i64 {
            let hi = hi as i64;
            let v = v.as_f64();
            if !v.is_finite() {
                return hi;
            }
            (v.max(0.0).min(hi as f64)) as i64
        };
        let x0 = clampi((mean2d[0] - radius).floor(), camera.width);
        let x1 = clampi((mean2d[0] + radius).ceil(), camera.width);
        let y0 = clampi((mean2d[1] - radius).floor(), camera.height);
        let y1 = clampi((mean2d[1] + radius).ceil(), camera.height);
        if x0 >= x1 || y0 >= y1 {
            return Ok(None);
        }
        (x0 as u32, x1 as u32, y0 as u32, y1 as u32)
    } else {
        (0, camera.width as u32, 0, camera.height as u32)
    };

    let v = [
        act.positions[i][0] - cam_center[0],
        act.positions[i][1] - cam_center[1],
        act.positions[i][2] - cam_center[2],
    ];
    let dist = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let dir = [v[0] / dist, v[1] / dist, v[2] / dist];

    let basis = act.basis_len();
    let coeffs = act.sh_of(i);
    let mut bvals = [T::zero(); 16];
    sh::eval_basis(&dir, act.sh_degree, &mut bvals);
    let half = real::<T>(0.5);
    let mut color = [half; 3];
    for jb in 0..basis {
        for c in 0..3 {
            color[c] += bvals[jb] * coeffs[jb * 3 + c];
        }
    }
    let mut color_clamped = [false; 3];
    for c in 0..3 {
        if color[c] < T::zero() {
            color[c] = T::zero();
            color_clamped[c] = true;
        } else if color[c] > T::one() {
            color[c] = T::one();
            color_clamped[c] = true;
        }
    }

    Ok(Some(ProjectedSplat {
        source: i as u32,
        depth: z,
        mean2d,
        cov2d,
        conic,
        p_cam,
        dir,
        dist,
        color,
        color_clamped,
        x0,
        x1,
        y0,
        y1,
    }))
}

/// Projects every gaussian; culled entries (behind the near plane or with an
/// empty on-screen footprint) come back as `None`.
pub fn project<T: Real>(
    set: &GaussianSet<T>,
    camera: &Camera<T>,
    options: &RenderOptions<T>,
) -> Result<Vec<Option<Splat2D<T>>>, RenderError> {
    let act = activate(set)?;
    let cam_center = camera.center();
    let mut out = Vec::with_capacity(act.len());
    for i in 0..act.len() {
        let s = project_one(&act, camera, options, &cam_center, i)?;
        out.push(s.map(|s| Splat2D {
            mean2d: s.mean2d,
            cov2d: s.cov2d,
            depth: s.depth,
        }));
    }
    Ok(out)
}

/// Renders a gaussian set. See [`render_activated`] for the work.
pub fn render<T: Real>(
    set: &GaussianSet<T>,
    camera: &Camera<T>,
    options: &RenderOptions<T>,
) -> Result<(Image<T>, RenderAux<T>), RenderError> {
    let act = activate(set)?;
    render_activated(&act, camera, options)
}

/// Renders already-activated gaussians.
///
/// Exposed so callers can composite constructed quantities (the low-opacity
/// suspicion map uses exact 0/1 opacities that no logit produces).
pub fn render_activated<T: Real>(
    act: &ActivatedGaussians<T>,
    camera: &Camera<T>,
    options: &RenderOptions<T>,
) -> Result<(Image<T>, RenderAux<T>), RenderError> {
    let cam_center = camera.center();
    let mut splats: Vec<ProjectedSplat<T>> = Vec::with_capacity(act.len());
    for i in 0..act.len() {
        if let Some(s) = project_one(act, camera, options, &cam_center, i)? {
            splats.push(s);
        }
    }
    // Front to back; equal depths resolve by source index so the order is a
    // total one and permutation invariance holds.
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.source.cmp(&b.source))
    });

    let (w, h) = (camera.width, camera.height);
    let npix = w * h;
    let mut counts = vec![0usize; npix + 1];
    for s in &splats {
        for py in s.y0..s.y1 {
            let row = py as usize * w;
            for px in s.x0..s.x1 {
                counts[row + px as usize + 1] += 1;
            }
        }
    }
    let mut offsets = counts;
    for p in 0..npix {
        offsets[p + 1] += offsets[p];
    }
    let total = offsets[npix];
    let mut slot_of = vec![0u32; total];
    let mut cursor: Vec<usize> = offsets[..npix].to_vec();
    for (slot, s) in splats.iter().enumerate() {
        for py in s.y0..s.y1 {
            let row = py as usize * w;
            for px in s.x0..s.x1 {
                let p = row + px as usize;
                slot_of[cursor[p]] = slot as u32;
                cursor[p] += 1;
            }
        }
    }

    let zero_rec = Contribution {
        splat: 0,
        alpha: T::zero(),
        transmittance: T::zero(),
        clamped: false,
    };
    let mut records = vec![zero_rec; total];
    let mut lens = vec![0usize; npix];
    let mut final_t = vec![T::one(); npix];
    let mut img = Image::zeros(w, h);

    let half = real::<T>(0.5);
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let sx = T::from_f64(px as f64) + half;
            let sy = T::from_f64(py as f64) + half;
            let mut t = T::one();
            let mut c = [T::zero(); 3];
            let mut used = 0usize;
            let base = offsets[p];
            for k in base..offsets[p + 1] {
                let slot = slot_of[k];
                let s = &splats[slot as usize];
                let dx = sx - s.mean2d[0];
                let dy = sy - s.mean2d[1];
                let power = -(half)
                    * (s.conic[0] * dx * dx
                        + (s.conic[1] + s.conic[1]) * dx * dy
                        + s.conic[2] * dy * dy);
                let gauss = power.exp();
                let raw = act.opacities[s.source as usize] * gauss;
                let clamped = raw > options.alpha_clamp;
                let alpha = if clamped { options.alpha_clamp } else { raw };
                if alpha < options.alpha_min || alpha <= T::zero() {
                    continue;
                }
                records[base + used] = Contribution {
                    splat: slot,
                    alpha,
                    transmittance: t,
                    clamped,
                };
                used += 1;
                for ch in 0..3 {
                    c[ch] += s.color[ch] * alpha * t;
                }
                t *= T::one() - alpha;
                if t < options.transmittance_min {
                    break;
                }
            }
            lens[p] = used;
            final_t[p] = t;
            let mut rgb = [T::zero(); 3];
            for ch in 0..3 {
                rgb[ch] = (c[ch] + t * options.background[ch])
                    .max(T::zero())
                    .min(T::one());
            }
            img.set_pixel(px, py, rgb);
        }
    }

    let aux = RenderAux {
        width: w,
        height: h,
        n_gaussians: act.len(),
        options: options.clone(),
        splats,
        offsets,
        lens,
        records,
        final_transmittance: final_t,
    };
    Ok((img, aux))
}

/// Per-splat accumulators gathered during the pixel scan.
#[derive(Clone)]
struct SplatAccum<T> {
    color: [T; 3],
    alpha: T,
    mean2d: [T; 2],
    /// Sensitivity to the conic (inverse covariance) as (xx, combined-xy, yy);
    /// the off-diagonal entry holds the sum over both symmetric slots.
    conic: [T; 3],
    touched: bool,
}

/// Reverse-mode gradients of `sum(grad_image * rendered_image)` with respect
/// to every stored parameter of `set`.
///
/// `aux` must come from a [`render`] call over the same set and camera.
pub fn backward<T: Real>(
    set: &GaussianSet<T>,
    camera: &Camera<T>,
    aux: &RenderAux<T>,
    grad_image: &Image<T>,
) -> Result<GaussianGrads<T>, RenderError> {
    if aux.n_gaussians != set.len() {
        return Err(RenderError::AuxMismatch {
            what: "gaussian count",
        });
    }
    if aux.width != camera.width || aux.height != camera.height {
        return Err(RenderError::AuxMismatch {
            what: "image dimensions",
        });
    }
    if grad_image.width != aux.width || grad_image.height != aux.height {
        return Err(RenderError::GradShape {
            got_w: grad_image.width,
            got_h: grad_image.height,
            want_w: aux.width,
            want_h: aux.height,
        });
    }
    let act = activate(set)?;
    let (w, h) = (aux.width, aux.height);
    let half = real::<T>(0.5);
    let bg = aux.options.background;

    let zero_acc = SplatAccum {
        color: [T::zero(); 3],
        alpha: T::zero(),
        mean2d: [T::zero(); 2],
        conic: [T::zero(); 3],
        touched: false,
    };
    let mut acc: Vec<SplatAccum<T>> = vec![zero_acc; aux.splats.len()];

    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let recs = aux.contributions(px, py);
            if recs.is_empty() {
                continue;
            }
            let g3 = grad_image.pixel(px, py);
            if g3[0] == T::zero() && g3[1] == T::zero() && g3[2] == T::zero() {
                continue;
            }
            let sx = T::from_f64(px as f64) + half;
            let sy = T::from_f64(py as f64) + half;
            let t_end = aux.final_transmittance[p];
            // Suffix color behind the current contribution, background included.
            let mut suffix = [t_end * bg[0], t_end * bg[1], t_end * bg[2]];
            for rec in recs.iter().rev() {
                let s = &aux.splats[rec.splat as usize];
                let a = &mut acc[rec.splat as usize];
                a.touched = true;
                let at = rec.alpha * rec.transmittance;
                let one_minus = T::one() - rec.alpha;
                let mut g_alpha = T::zero();
                for ch in 0..3 {
                    a.color[ch] += g3[ch] * at;
                    g_alpha += g3[ch] * (s.color[ch] * rec.transmittance - suffix[ch] / one_minus);
                    suffix[ch] += s.color[ch] * at;
                }
                if rec.clamped {
                    continue;
                }
                let dx = sx - s.mean2d[0];
                let dy = sy - s.mean2d[1];
                let opacity = act.opacities[s.source as usize];
                let gauss = rec.alpha / opacity;
                a.alpha += g_alpha * gauss;
                let g_exponent = g_alpha * opacity * gauss;
                let adx = s.conic[0] * dx + s.conic[1] * dy;
                let ady = s.conic[1] * dx + s.conic[2] * dy;
                // d = sample - mean2d, so mean gradients flip the sign back.
                a.mean2d[0] += g_exponent * adx;
                a.mean2d[1] += g_exponent * ady;
                a.conic[0] -= g_exponent * half * dx * dx;
                a.conic[1] -= g_exponent * dx * dy;
                a.conic[2] -= g_exponent * half * dy * dy;
            }
        }
    }

    let mut grads = GaussianGrads::zeros(set.len(), set.sh_degree);
    let rot_cam = camera.rotation();
    let rot_cam_t = mat3_transpose(&rot_cam);
    let basis = act.basis_len();

    for (slot, s) in aux.splats.iter().enumerate() {
        let a = &acc[slot];
        if !a.touched {
            continue;
        }
        let i = s.source as usize;
        grads.vspace_norm[i] =
            (a.mean2d[0] * a.mean2d[0] + a.mean2d[1] * a.mean2d[1]).sqrt();

        // Opacity logit.
        let opacity = act.opacities[i];
        grads.opacity_logits[i] += a.alpha * opacity * (T::one() - opacity);

        // Conic -> screen covariance: dC = -A dCov A for full-matrix
        // sensitivities; the recorded off-diagonal is the symmetric sum.
        let ga = [[a.conic[0], a.conic[1] * half], [a.conic[1] * half, a.conic[2]]];
        let am = [[s.conic[0], s.conic[1]], [s.conic[1], s.conic[2]]];
        let mut g_cov = [[T::zero(); 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                let mut acc2 = T::zero();
                for m in 0..2 {
                    for n in 0..2 {
                        acc2 += am[r][m] * ga[m][n] * am[n][c];
                    }
                }
                g_cov[r][c] = -acc2;
            }
        }

        // Screen covariance -> camera covariance M and Jacobian J.
        let jmat = perspective_jacobian(camera.fx, camera.fy, &s.p_cam);
        let sigma = covariance3d(&act.rotations[i], &act.scales[i]);
        let m = mat3_mul(&rot_cam, &mat3_mul(&sigma, &rot_cam_t));
        // gM = J^T gCov J.
        let mut g_m = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc2 = T::zero();
                for u in 0..2 {
                    for v in 0..2 {
                        acc2 += jmat[u][r] * g_cov[u][v] * jmat[v][c];
                    }
                }
                g_m[r][c] = acc2;
            }
        }
        // gJ = 2 gCov J M (gCov and M symmetric).
        let mut g_j = [[T::zero(); 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                let mut acc2 = T::zero();
                for u in 0..2 {
                    for v in 0..3 {
                        acc2 += g_cov[r][u] * jmat[u][v] * m[v][c];
                    }
                }
                g_j[r][c] = acc2 + acc2;
            }
        }

        // gSigma = R_cam^T gM R_cam.
        let g_sigma = mat3_mul(&rot_cam_t, &mat3_mul(&g_m, &rot_cam));

        // Sigma = R D R^T with D = diag(s^2).
        let rq = quat_to_rotation(&act.rotations[i]);
        let scales = act.scales[i];
        // Scale path: gD_kk = (R^T gSigma R)_kk, then log-space chain.
        for k in 0..3 {
            let mut gd = T::zero();
            for r in 0..3 {
                for c in 0..3 {
                    gd += rq[r][k] * g_sigma[r][c] * rq[c][k];
                }
            }
            let gs = (gd + gd) * scales[k];
            grads.log_scales[i][k] += gs * scales[k];
        }
        // Rotation path: gR = 2 gSigma R D.
        let mut g_rq = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let mut acc2 = T::zero();
                for k in 0..3 {
                    acc2 += g_sigma[r][k] * rq[k][c];
                }
                let sc2 = scales[c] * scales[c];
                g_rq[r][c] = (acc2 + acc2) * sc2;
            }
        }
        let u = act.rotations[i];
        let (uw, ux, uy, uz) = (u[0], u[1], u[2], u[3]);
        let two = real::<T>(2.0);
        let dr_dw = [
            [T::zero(), -uz, uy],
            [uz, T::zero(), -ux],
            [-uy, ux, T::zero()],
        ];
        let dr_dx = [
            [T::zero(), uy, uz],
            [uy, -(ux + ux), -uw],
            [uz, uw, -(ux + ux)],
        ];
        let dr_dy = [
            [-(uy + uy), ux, uw],
            [ux, T::zero(), uz],
            [-uw, uz, -(uy + uy)],
        ];
        let dr_dz = [
            [-(uz + uz), -uw, ux],
            [uw, -(uz + uz), uy],
            [ux, uy, T::zero()],
        ];
        let contract = |d: &[[T; 3]; 3]| {
            let mut acc2 = T::zero();
            for r in 0..3 {
                for c in 0..3 {
                    acc2 += g_rq[r][c] * d[r][c];
                }
            }
            acc2 * two
        };
        let g_unit = [
            contract(&dr_dw),
            contract(&dr_dx),
            contract(&dr_dy),
            contract(&dr_dz),
        ];
        // Through the normalization q_unit = q / |q|.
        let q_raw = set.rotations[i];
        let raw_norm = (q_raw[0] * q_raw[0]
            + q_raw[1] * q_raw[1]
            + q_raw[2] * q_raw[2]
            + q_raw[3] * q_raw[3])
            .sqrt();
        let dot = g_unit[0] * u[0] + g_unit[1] * u[1] + g_unit[2] * u[2] + g_unit[3] * u[3];
        for k in 0..4 {
            grads.rotations[i][k] += (g_unit[k] - dot * u[k]) / raw_norm;
        }

        // Camera-space position gradient: mean path (J^T g_mean2d) plus the
        // Jacobian's own dependence on (x, y, z).
        let (x, y, z) = (s.p_cam[0], s.p_cam[1], s.p_cam[2]);
        let z2 = z * z;
        let z3 = z2 * z;
        let mut g_pcam = [T::zero(); 3];
        g_pcam[0] += a.mean2d[0] * camera.fx / z;
        g_pcam[1] += a.mean2d[1] * camera.fy / z;
        g_pcam[2] -=
            a.mean2d[0] * camera.fx * x / z2 + a.mean2d[1] * camera.fy * y / z2;
        g_pcam[0] += g_j[0][2] * (-camera.fx / z2);
        g_pcam[1] += g_j[1][2] * (-camera.fy / z2);
        g_pcam[2] += g_j[0][0] * (-camera.fx / z2)
            + g_j[1][1] * (-camera.fy / z2)
            + g_j[0][2] * (two * camera.fx * x / z3)
            + g_j[1][2] * (two * camera.fy * y / z3);

        // Color path: SH coefficients directly persist; the direction feeds
        // back into the world position through the normalization.
        let coeffs = act.sh_of(i);
        let mut bvals = [T::zero(); 16];
        let mut bgrads = [[T::zero(); 3]; 16];
        sh::eval_basis(&s.dir, act.sh_degree, &mut bvals);
        sh::eval_basis_grad(&s.dir, act.sh_degree, &mut bgrads);
        let mut g_dir = [T::zero(); 3];
        let sh_base = i * basis * 3;
        for ch in 0..3 {
            if s.color_clamped[ch] {
                continue;
            }
            let gc = a.color[ch];
            if gc == T::zero() {
                continue;
            }
            for jb in 0..basis {
                grads.sh[sh_base + jb * 3 + ch] += gc * bvals[jb];
                let coeff = coeffs[jb * 3 + ch];
                for ax in 0..3 {
                    g_dir[ax] += gc * coeff * bgrads[jb][ax];
                }
            }
        }
        // dir = v / |v|: project out the radial component.
        let ddot = g_dir[0] * s.dir[0] + g_dir[1] * s.dir[1] + g_dir[2] * s.dir[2];
        let mut g_world = [T::zero(); 3];
        for ax in 0..3 {
            g_world[ax] = (g_dir[ax] - ddot * s.dir[ax]) / s.dist;
        }

        // World position: rotation transpose of the camera-space gradient.
        for ax in 0..3 {
            grads.positions[i][ax] += rot_cam_t[ax][0] * g_pcam[0]
                + rot_cam_t[ax][1] * g_pcam[1]
                + rot_cam_t[ax][2] * g_pcam[2]
                + g_world[ax];
        }
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::logit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn head_on_camera(width: usize, height: usize, fx: f64) -> Camera<f64> {
        // Identity pose: camera at origin looking down +z.
        let mut w = [[0.0; 4]; 4];
        for i in 0..4 {
            w[i][i] = 1.0;
        }
        Camera {
            width,
            height,
            fx,
            fy: fx,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            world_to_camera: w,
        }
    }

    fn single_gaussian(position: [f64; 3], opacity: f64, color_dc: [f64; 3]) -> GaussianSet<f64> {
        GaussianSet {
            positions: vec![position],
            opacity_logits: vec![logit(opacity)],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]],
            log_scales: vec![[0.1f64.ln(); 3]],
            sh: color_dc.to_vec(),
            sh_degree: 0,
        }
    }

    fn random_scene(seed: u64, n: usize, degree: usize) -> GaussianSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = crate::gaussians::sh_basis_len(degree);
        let mut set = GaussianSet::empty(degree);
        for _ in 0..n {
            set.positions.push([
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ]);
            set.opacity_logits.push(rng.gen_range(-1.5..1.5));
            loop {
                let q = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let norm: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.3 {
                    set.rotations.push(q);
                    break;
                }
            }
            set.log_scales.push([
                rng.gen_range(-2.5..-1.2),
                rng.gen_range(-2.5..-1.2),
                rng.gen_range(-2.5..-1.2),
            ]);
            for j in 0..basis {
                let lim = if j == 0 { 0.4 } else { 0.05 };
                for _c in 0..3 {
                    set.sh.push(rng.gen_range(-lim..lim));
                }
            }
        }
        set
    }

    fn ring_camera(width: usize, height: usize, angle: f64) -> Camera<f64> {
        Camera::looking_at_origin(
            width,
            height,
            width as f64,
            width as f64,
            [3.0 * angle.cos(), 0.4, 3.0 * angle.sin()],
        )
    }

    #[test]
    fn on_axis_mean_lands_at_principal_point() {
        let cam = head_on_camera(32, 32, 30.0);
        let set = single_gaussian([0.0, 0.0, 2.0], 0.5, [0.0, 0.0, 0.0]);
        let opts = RenderOptions::default();
        let splats = project(&set, &cam, &opts).unwrap();
        let s = splats[0].as_ref().unwrap();
        assert!((s.mean2d[0] - 16.0).abs() < 1e-12);
        assert!((s.mean2d[1] - 16.0).abs() < 1e-12);
        assert!((s.depth - 2.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = head_on_camera(32, 32, 30.0);
        let set = single_gaussian([0.0, 0.0, -1.0], 0.5, [0.0; 3]);
        let splats = project(&set, &cam, &RenderOptions::default()).unwrap();
        assert!(splats[0].is_none());
    }

    #[test]
    fn on_axis_isotropic_covariance_matches_closed_form() {
        let cam = head_on_camera(32, 32, 30.0);
        let sigma = 0.1f64;
        let z = 2.0;
        let mut set = single_gaussian([0.0, 0.0, z], 0.5, [0.0; 3]);
        set.log_scales[0] = [sigma.ln(); 3];
        let mut opts = RenderOptions::default();
        opts.dilation = 0.0;
        let splats = project(&set, &cam, &opts).unwrap();
        let s = splats[0].as_ref().unwrap();
        let want = (cam.fx * sigma / z).powi(2);
        assert!((s.cov2d[0] - want).abs() < 1e-10, "{} vs {want}", s.cov2d[0]);
        assert!((s.cov2d[2] - want).abs() < 1e-10);
        assert!(s.cov2d[1].abs() < 1e-12);
    }

    #[test]
    fn projected_covariance_matches_numeric_pushforward() {
        // Independent check of the J M J^T algebra: push samples of the
        // world-space gaussian through the exact projection and compare
        // moments of the linearized map built by finite differences.
        let cam = ring_camera(24, 24, 0.7);
        let set = random_scene(11, 1, 0);
        let mut opts = RenderOptions::<f64>::default();
        opts.dilation = 0.0;
        let splats = project(&set, &cam, &opts).unwrap();
        let s = splats[0].as_ref().unwrap();

        let act = activate(&set).unwrap();
        let cov3 = covariance3d(&act.rotations[0], &act.scales[0]);
        let pos = set.positions[0];
        let project_point = |p: [f64; 3]| {
            let t = cam.to_camera(&p);
            [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy]
        };
        let h = 1e-6;
        let mut jac = [[0.0f64; 3]; 2];
        for ax in 0..3 {
            let mut plus = pos;
            let mut minus = pos;
            plus[ax] += h;
            minus[ax] -= h;
            let pp = project_point(plus);
            let pm = project_point(minus);
            jac[0][ax] = (pp[0] - pm[0]) / (2.0 * h);
            jac[1][ax] = (pp[1] - pm[1]) / (2.0 * h);
        }
        let mut want = [[0.0f64; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                for m in 0..3 {
                    for n in 0..3 {
                        want[r][c] += jac[r][m] * cov3[m][n] * jac[c][n];
                    }
                }
            }
        }
        assert!((s.cov2d[0] - want[0][0]).abs() < 1e-5);
        assert!((s.cov2d[1] - want[0][1]).abs() < 1e-5);
        assert!((s.cov2d[2] - want[1][1]).abs() < 1e-5);
    }

    #[test]
    fn empty_set_renders_background() {
        let cam = head_on_camera(8, 8, 8.0);
        let set = GaussianSet::<f64>::empty(0);
        let mut opts = RenderOptions::default();
        opts.background = [0.25, 0.5, 0.75];
        let (img, aux) = render(&set, &cam, &opts).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(img.pixel(x, y), [0.25, 0.5, 0.75]);
            }
        }
        assert!(aux.final_transmittance.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn centered_gaussian_composites_alpha_over_background() {
        let mut cam = head_on_camera(17, 17, 20.0);
        // Put the mean exactly on the center pixel's sample point.
        cam.cx = 8.5;
        cam.cy = 8.5;
        let set = single_gaussian([0.0, 0.0, 2.0], 0.8, [0.9, 0.0, 0.0]);
        let mut opts = RenderOptions::default();
        opts.background = [0.0, 0.0, 1.0];
        let (img, _) = render(&set, &cam, &opts).unwrap();
        let center = img.pixel(8, 8);
        let color = crate::sh::sh_color(&[0.9, 0.0, 0.0], &[0.0, 0.0, 1.0], 0);
        assert!((center[0] - 0.8 * color[0]).abs() < 1e-12);
        assert!((center[2] - (0.8 * color[2] + 0.2 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn coincident_gaussians_composite_front_to_back_by_index() {
        let mut cam = head_on_camera(17, 17, 20.0);
        cam.cx = 8.5;
        cam.cy = 8.5;
        let mut set = single_gaussian([0.0, 0.0, 2.0], 0.5, [1.0, 0.0, 0.0]);
        set.append(&single_gaussian([0.0, 0.0, 2.0], 0.5, [0.0, 1.0, 0.0]));
        let opts = RenderOptions::default();
        let (img, aux) = render(&set, &cam, &opts).unwrap();
        let c1 = crate::sh::sh_color(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], 0);
        let c2 = crate::sh::sh_color(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], 0);
        let center = img.pixel(8, 8);
        for ch in 0..3 {
            let want = 0.5 * c1[ch] + 0.25 * c2[ch];
            assert!((center[ch] - want).abs() < 1e-12, "ch {ch}");
        }
        let recs = aux.contributions(8, 8);
        assert_eq!(recs.len(), 2);
        assert_eq!(aux.splat_source(recs[0].splat), 0);
    }

    #[test]
    fn non_finite_input_is_reported_with_index() {
        let cam = head_on_camera(8, 8, 8.0);
        let mut set = single_gaussian([0.0, 0.0, 2.0], 0.5, [0.0; 3]);
        set.append(&single_gaussian([0.0, 0.0, 2.0], 0.5, [0.0; 3]));
        set.log_scales[1] = [400.0, 0.0, 0.0]; // exp overflows to infinity
        let err = render(&set, &cam, &RenderOptions::default()).unwrap_err();
        match err {
            RenderError::Gaussian(_) => panic!("expected projection error"),
            RenderError::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn depth_order_is_permutation_invariant() {
        let cam = ring_camera(24, 24, 1.3);
        let set = random_scene(5, 12, 1);
        let opts = RenderOptions::default();
        let (img_a, _) = render(&set, &cam, &opts).unwrap();
        // Reverse the storage order; depths are almost surely distinct.
        let perm: Vec<usize> = (0..set.len()).rev().collect();
        let shuffled = set.select(&perm);
        let (img_b, _) = render(&shuffled, &cam, &opts).unwrap();
        for (a, b) in img_a.data.iter().zip(img_b.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transmittance_is_monotone_and_alphas_bounded() {
        let cam = ring_camera(24, 24, 2.1);
        let set = random_scene(9, 20, 1);
        let (_, aux) = render(&set, &cam, &RenderOptions::default()).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                let mut prev = 1.0f64;
                for rec in aux.contributions(x, y) {
                    assert!(rec.alpha >= 0.0 && rec.alpha < 1.0);
                    assert!(rec.transmittance <= prev + 1e-15);
                    prev = rec.transmittance * (1.0 - rec.alpha);
                }
                let p = y * 24 + x;
                assert!((aux.final_transmittance[p] - prev).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_pixels_stay_in_unit_range() {
        for seed in 0..5 {
            let cam = ring_camera(16, 16, seed as f64);
            let set = random_scene(100 + seed, 30, 1);
            let mut opts = RenderOptions::default();
            opts.background = [0.3, 0.6, 1.0];
            let (img, _) = render(&set, &cam, &opts).unwrap();
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_grad_image_gives_zero_grads() {
        let cam = ring_camera(16, 16, 0.4);
        let set = random_scene(3, 6, 1);
        let (_, aux) = render(&set, &cam, &RenderOptions::default()).unwrap();
        let zeros = Image::zeros(16, 16);
        let grads = backward(&set, &cam, &aux, &zeros).unwrap();
        assert!(grads.positions.iter().flatten().all(|&v| v == 0.0));
        assert!(grads.opacity_logits.iter().all(|&v| v == 0.0));
        assert!(grads.sh.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_pixel_opacity_gradient_matches_closed_form() {
        // Single splat exactly on a pixel sample: dC/d(logit) there is
        // (color - background) * a * (1 - a) per channel.
        let mut cam = head_on_camera(17, 17, 20.0);
        cam.cx = 8.5;
        cam.cy = 8.5;
        let a = 0.7;
        let set = single_gaussian([0.0, 0.0, 2.0], a, [0.8, -0.3, 0.1]);
        let mut opts = RenderOptions::default();
        opts.background = [0.0, 0.0, 1.0];
        let (_, aux) = render(&set, &cam, &opts).unwrap();
        let mut gimg = Image::zeros(17, 17);
        gimg.set_pixel(8, 8, [1.0, 0.0, 0.0]);
        let grads = backward(&set, &cam, &aux, &gimg).unwrap();
        let color = crate::sh::sh_color(&[0.8, -0.3, 0.1], &[0.0, 0.0, 1.0], 0);
        let want = (color[0] - 0.0) * a * (1.0 - a);
        assert!(
            (grads.opacity_logits[0] - want).abs() < 1e-10,
            "{} vs {want}",
            grads.opacity_logits[0]
        );
    }

    #[test]
    fn transparent_gaussian_has_vanishing_color_gradient() {
        let cam = ring_camera(16, 16, 0.9);
        let mut set = random_scene(17, 4, 0);
        set.opacity_logits[2] = -30.0; // effectively transparent
        let opts = RenderOptions::exact([0.0; 3]);
        let (_, aux) = render(&set, &cam, &opts).unwrap();
        let gimg = Image::filled(16, 16, 1.0);
        let grads = backward(&set, &cam, &aux, &gimg).unwrap();
        let sh_grad: f64 = set
            .sh_of(2)
            .iter()
            .enumerate()
            .map(|(k, _)| grads.sh[2 * 3 + k].abs())
            .sum();
        assert!(sh_grad < 1e-10, "sh grad {sh_grad}");
    }

    #[test]
    fn aux_mismatch_is_rejected() {
        let cam = ring_camera(16, 16, 0.2);
        let set = random_scene(1, 4, 0);
        let (_, aux) = render(&set, &cam, &RenderOptions::default()).unwrap();
        let bigger = random_scene(2, 5, 0);
        let gimg = Image::zeros(16, 16);
        assert!(matches!(
            backward(&bigger, &cam, &aux, &gimg),
            Err(RenderError::AuxMismatch { .. })
        ));
        let wrong = Image::<f64>::zeros(8, 8);
        assert!(matches!(
            backward(&set, &cam, &aux, &wrong),
            Err(RenderError::GradShape { .. })
        ));
    }
}
