//! Carrier-side audit tools: the quality/imperceptibility composite, the
//! low-opacity suspicion map, and the pruning-robustness protocol.

use crate::camera::Camera;
use crate::decoder::{decode_with_record, normalize_features, DecoderParams, KeyEmbedding};
use crate::error::MetricError;
use crate::gaussians::{activate, GaussianSet};
use crate::image::Image;
use crate::metrics::psnr;
use crate::render::{render, render_activated, RenderOptions};
use crate::scalar::{real, Real};
use crate::sh::SH_C0;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_LOW_OPACITY_TAU: f64 = 0.05;
pub const DEFAULT_PRUNE_RATIOS: [f64; 4] = [0.05, 0.10, 0.15, 0.25];

/// Single number balancing reconstruction quality against the attribute
/// divergence d: (psnr_cover + psnr_secret) * (1 - d).
pub fn composite_score(psnr_cover: f64, psnr_secret: f64, d: f64) -> f64 {
    assert!(d >= 0.0, "divergence must be nonnegative");
    (psnr_cover + psnr_secret) * (1.0 - d)
}

/// Suspicion map: every gaussian with activated opacity below `tau` is
/// re-rendered fully opaque and white on a black background, everything else
/// vanishes. Bright regions show where low-opacity mass concentrates.
pub fn low_opacity_render<T: Real>(
    set: &GaussianSet<T>,
    camera: &Camera<T>,
    tau: f64,
) -> Result<Image<T>, MetricError> {
    assert!(tau > 0.0 && tau < 1.0, "threshold must lie in (0, 1)");
    let mut act = activate(set)?;
    let thresh = real::<T>(tau);
    let white_dc = real::<T>(0.5 / SH_C0);
    let width = act.basis_len() * 3;
    for i in 0..act.len() {
        let low = act.opacities[i] < thresh;
        act.opacities[i] = if low { T::one() } else { T::zero() };
        let sh = &mut act.sh[i * width..(i + 1) * width];
        for v in sh.iter_mut() {
            *v = T::zero();
        }
        sh[0] = white_dc;
        sh[1] = white_dc;
        sh[2] = white_dc;
    }
    let options = RenderOptions {
        background: [T::zero(); 3],
        ..RenderOptions::default()
    };
    let (image, _) = render_activated(&act, camera, &options)?;
    Ok(image)
}

/// One pruning strategy of the robustness protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum PruneStrategy {
    /// Drop the lowest-opacity gaussians first.
    Sequential,
    /// Drop a uniformly random subset.
    Random,
}

impl PruneStrategy {
    pub fn label(self) -> &'static str {
        match self {
            PruneStrategy::Sequential => "sequential",
            PruneStrategy::Random => "random",
        }
    }
}

/// Indices kept after pruning `ratio` of the set, in original order.
pub fn prune_indices<T: Real>(
    set: &GaussianSet<T>,
    ratio: f64,
    strategy: PruneStrategy,
    seed: u64,
) -> Result<Vec<usize>, MetricError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(MetricError::BadRatio { ratio });
    }
    if set.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let n = set.len();
    let kept_count = (n as f64 * (1.0 - ratio)).ceil() as usize;
    let mut kept: Vec<usize> = match strategy {
        PruneStrategy::Sequential => {
            let act = activate(set)?;
            let mut order: Vec<usize> = (0..n).collect();
            // Ascending opacity, index breaking ties, so the order is total.
            order.sort_by(|a, b| {
                act.opacities[*a]
                    .partial_cmp(&act.opacities[*b])
                    .unwrap()
                    .then(a.cmp(b))
            });
            order[n - kept_count..].to_vec()
        }
        PruneStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order.truncate(kept_count);
            order
        }
    };
    kept.sort_unstable();
    Ok(kept)
}

/// One row of the pruning report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PruneEntry {
    pub ratio: f64,
    pub strategy: &'static str,
    pub kept: usize,
    pub psnr_cover: f64,
    pub psnr_secret: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PruneReport {
    pub total: usize,
    pub psnr_cover_baseline: f64,
    pub psnr_secret_baseline: f64,
    pub entries: Vec<PruneEntry>,
}

/// Mean per-view PSNR of a set rendered against ground-truth images.
pub fn mean_render_psnr<T: Real>(
    set: &GaussianSet<T>,
    views: &[(Camera<T>, Image<T>)],
    options: &RenderOptions<T>,
) -> Result<f64, MetricError> {
    assert!(!views.is_empty(), "need at least one view");
    let mut sum = 0.0f64;
    for (camera, gt) in views {
        let (img, _) = render(set, camera, options)?;
        sum += psnr(&img, gt)?;
    }
    Ok(sum / views.len() as f64)
}

/// Prunes the carrier at each ratio under both strategies and reports how
/// the cover render and the decoded secret degrade.
///
/// The decode keeps the unpruned carrier's normalization statistics, so the
/// probe measures the effect of the missing gaussians themselves rather
/// than of a shifted conditioning.
#[allow(clippy::too_many_arguments)]
pub fn pruning_robustness<T: Real>(
    cover: &GaussianSet<T>,
    params: &DecoderParams<T>,
    key: &KeyEmbedding<T>,
    cover_views: &[(Camera<T>, Image<T>)],
    secret_views: &[(Camera<T>, Image<T>)],
    ratios: &[f64],
    seed: u64,
    options: &RenderOptions<T>,
) -> Result<PruneReport, MetricError> {
    if cover.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let (_, record) = normalize_features(cover);
    let mask = params.mask;
    let baseline_secret = decode_with_record(cover, key, mask, params, &record)?;
    let psnr_cover_baseline = mean_render_psnr(cover, cover_views, options)?;
    let psnr_secret_baseline = mean_render_psnr(&baseline_secret, secret_views, options)?;

    let mut entries = Vec::with_capacity(ratios.len() * 2);
    for &ratio in ratios {
        for strategy in [PruneStrategy::Sequential, PruneStrategy::Random] {
            let kept = prune_indices(cover, ratio, strategy, seed)?;
            let pruned = cover.select(&kept);
            let secret = decode_with_record(&pruned, key, mask, params, &record)?;
            entries.push(PruneEntry {
                ratio,
                strategy: strategy.label(),
                kept: kept.len(),
                psnr_cover: mean_render_psnr(&pruned, cover_views, options)?,
                psnr_secret: mean_render_psnr(&secret, secret_views, options)?,
            });
        }
    }
    Ok(PruneReport {
        total: cover.len(),
        psnr_cover_baseline,
        psnr_secret_baseline,
        entries,
    })
}
